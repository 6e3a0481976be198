#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "choquard/energy.hpp"
#include "choquard/fiber.hpp"
#include "choquard/fields.hpp"
#include "choquard/grid.hpp"
#include "choquard/quadrature.hpp"
#include "choquard/riesz.hpp"

namespace choquard {

struct BubbleSpec {
  double epsilon = 0.1;
  std::vector<double> center;
  double cutoff_radius = 0.0;
};

/// Talenti profile (n(n-2))^{(n-2)/4} (eps / (eps^2 + r^2))^{(n-2)/2}.
inline double talenti_profile(int n, double eps, double r) {
  return std::pow(n * (n - 2.0), (n - 2.0) / 4.0) * std::pow(eps / (eps * eps + r * r), 0.5 * (n - 2.0));
}

/// |U_eps'(r)| for the profile above.
inline double talenti_slope(int n, double eps, double r) {
  return std::pow(n * (n - 2.0), (n - 2.0) / 4.0) * (n - 2.0) * std::pow(eps, 0.5 * (n - 2.0)) * r *
         std::pow(eps * eps + r * r, -0.5 * n);
}

/// Quintic ramp: 1 on [0, rc/2], 0 beyond rc, C^2 in between.
inline double cutoff_eta(double r, double rc) {
  const double r0 = 0.5 * rc;
  if (r <= r0) return 1.0;
  if (r >= rc) return 0.0;
  const double x = (r - r0) / (rc - r0);
  return 1.0 - x * x * x * (10.0 - 15.0 * x + 6.0 * x * x);
}

/// eta * U_eps on the mask; the cutoff ball must sit inside the domain.
inline Field talenti_bubble(const GridPtr& grid, const BubbleSpec& spec, const Exponents& e) {
  const DomainGrid& g = *grid;
  if (!(spec.epsilon > 0.0)) throw std::invalid_argument("talenti_bubble: epsilon must be positive");
  if (static_cast<int>(spec.center.size()) != g.dim()) throw std::invalid_argument("talenti_bubble: center has the wrong dimension");
  const double dist = g.distance_to_boundary(spec.center);
  if (!(dist > 0.0)) throw std::invalid_argument("talenti_bubble: center lies outside the domain");
  if (!(spec.cutoff_radius > 0.0) || spec.cutoff_radius > dist * (1.0 + 1e-12))
    throw std::invalid_argument("talenti_bubble: cutoff ball must lie inside the domain");
  return Field::from_function(grid, [&](std::span<const double> x, std::size_t) {
    double r2 = 0.0;
    for (int a = 0; a < g.dim(); ++a) r2 += (x[a] - spec.center[a]) * (x[a] - spec.center[a]);
    const double r = std::sqrt(r2);
    return cutoff_eta(r, spec.cutoff_radius) * talenti_profile(e.n, spec.epsilon, r);
  });
}

/// Bubble centred at the origin with cutoff radius 0.95 of the domain half-size.
inline BubbleSpec centered_bubble(const DomainGrid& g, double eps) {
  return {eps, std::vector<double>(g.dim(), 0.0), 0.95 * domain_scale(g)};
}

struct CriticalConstants {
  double S_hat = 0.0;
  double S_error = 0.0;
  std::vector<double> S_by_epsilon;
  std::vector<double> S_ladder;  // finest-epsilon per-level values, coarse to fine
  double S_HL_hat = 0.0;
  double profile_exponent = 0.0;
  double C_nmu_hat = 0.0;
  double level_gap = 0.0;
  double S_HL_grid = 0.0;
  double level_gap_grid = 0.0;
  bool flagged = false;
  std::string flag_reason;
};

/// (n - mu + 2) / (2 (2n - mu)) * S_HL^{(2n - mu)/(n - mu + 2)}
inline double level_gap_from(double s_hl, const Exponents& e) {
  const double n = e.n, mu = e.mu;
  return (n - mu + 2.0) / (2.0 * (2.0 * n - mu)) * std::pow(s_hl, (2.0 * n - mu) / (n - mu + 2.0));
}

struct SobolevEstimate {
  double value = 0.0;
  double error = 0.0;
  std::vector<double> levels;
};

/// S from int |grad U_eps|^2 = S^{n/2}. Each ladder grid sums chi |grad U_eps|^2 h^n over its nodes
/// with a smooth radial cutoff chi; the (1 - chi) tail is a radial integral. Richardson on the last two levels.
inline SobolevEstimate estimate_sobolev(const std::vector<GridPtr>& ladder, int n, double eps) {
  if (ladder.size() < 2) throw std::invalid_argument("estimate_sobolev: need at least two ladder grids");
  SobolevEstimate out;
  std::vector<double> hs;
  const double area = sphere_area(n);
  for (const GridPtr& gp : ladder) {
    const DomainGrid& g = *gp;
    double half = g.extent()[0];
    for (double x : g.extent()) half = std::min(half, x);
    half *= 0.5;
    const double rc = 0.9 * half;
    double core = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double r = g.radial(i);
      if (r >= rc) continue;
      const double s = talenti_slope(n, eps, r);
      core += cutoff_eta(r, rc) * s * s;
    }
    core *= g.cell_volume();
    const double tail = integrate(
        [&](double r) {
          const double s = talenti_slope(n, eps, r);
          return (1.0 - cutoff_eta(r, rc)) * s * s * area * std::pow(r, n - 1.0);
        },
        0.5 * rc, rc, 32, 16);
    const double far = integrate_half_line(
        [&](double x) {
          const double r = rc + x;
          const double s = talenti_slope(n, eps, r);
          return s * s * area * std::pow(r, n - 1.0);
        },
        64, 16);
    out.levels.push_back(std::pow(core + tail + far, 2.0 / n));
    hs.push_back(g.max_spacing());
  }
  const std::size_t k = out.levels.size() - 1;
  const double ratio = hs[k - 1] / hs[k];
  const double fine = out.levels[k], coarse = out.levels[k - 1];
  const double extrap = fine + (fine - coarse) / (ratio * ratio - 1.0);
  out.value = extrap;
  out.error = std::abs(fine - extrap) + std::abs(fine - coarse);
  return out;
}

namespace detail {

/// Integral of |x - rho w|^{-mu} over the unit sphere w in R^n, |x| = r.
inline double spherical_kernel(int n, double mu, double r, double rho) {
  if (n == 3) {
    if (std::abs(mu - 2.0) < 1e-14) return 2.0 * std::numbers::pi / (r * rho) * std::log((r + rho) / std::abs(r - rho));
    return 2.0 * std::numbers::pi * (std::pow(r + rho, 2.0 - mu) - std::pow(std::abs(r - rho), 2.0 - mu)) / ((2.0 - mu) * r * rho);
  }
  const double lower = sphere_area(n - 1);
  // theta = pi v^2 clusters nodes at the near-diagonal singularity theta = 0.
  return lower * integrate(
                     [&](double v) {
                       const double th = std::numbers::pi * v * v;
                       const double d2 = r * r + rho * rho - 2.0 * r * rho * std::cos(th);
                       return std::pow(std::max(d2, 1e-300), -0.5 * mu) * std::pow(std::sin(th), n - 2.0) * 2.0 * std::numbers::pi * v;
                     },
                     0.0, 1.0, 4, 16);
}

/// Continuum B for the radial profile (1 + r^2)^{-a}.
inline double radial_choquard(int n, double mu, double s, double a) {
  const double area = sphere_area(n);
  // The closed-form n = 3 kernel is cheap; other dimensions pay for a nested angular rule.
  const int outer = n == 3 ? 32 : 16, lo_panels = n == 3 ? 8 : 4, hi_panels = n == 3 ? 16 : 8;
  auto dens = [&](double r) { return std::pow(1.0 + r * r, -a * s); };
  return integrate_half_line(
      [&](double r) {
        if (r <= 0.0) return 0.0;
        // rho in (0, r): rho = r (1 - w^2); rho in (r, inf): rho = r + tan.
        const double inner_lo = integrate(
            [&](double w) {
              const double rho = r * (1.0 - w * w);
              if (rho <= 0.0) return 0.0;
              return dens(rho) * std::pow(rho, n - 1.0) * spherical_kernel(n, mu, r, rho) * 2.0 * r * w;
            },
            0.0, 1.0, lo_panels, 16);
        const double inner_hi = integrate_half_line(
            [&](double x) {
              const double rho = r + x;
              return dens(rho) * std::pow(rho, n - 1.0) * spherical_kernel(n, mu, r, rho);
            },
            hi_panels, 16);
        return area * std::pow(r, n - 1.0) * dens(r) * (inner_lo + inner_hi);
      },
      outer, 16);
}

inline double radial_gradient(int n, double a) {
  const double area = sphere_area(n);
  return integrate_half_line(
      [&](double r) {
        const double d = 2.0 * a * r * std::pow(1.0 + r * r, -a - 1.0);
        return area * d * d * std::pow(r, n - 1.0);
      },
      64, 16);
}

}  // namespace detail

/// Continuum quotient ||grad u||^2 / B(u)^{1/2*_mu} for u = (1 + r^2)^{-a}.
inline double continuum_hls_quotient(const Exponents& e, double a) {
  return detail::radial_gradient(e.n, a) / std::pow(detail::radial_choquard(e.n, e.mu, e.two_star_mu, a), 1.0 / e.two_star_mu);
}

struct ProfileMinimum {
  double value = 0.0;
  double exponent = 0.0;
};

/// Golden-section minimisation of the continuum quotient over a, started around the bubble exponent (n-2)/2.
inline ProfileMinimum minimize_continuum_quotient(const Exponents& e) {
  const double a0 = 0.5 * (e.n - 2.0);
  double lo = 0.6 * a0, hi = 2.0 * a0;
  const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
  double c = hi - gr * (hi - lo), d = lo + gr * (hi - lo);
  double fc = continuum_hls_quotient(e, c), fd = continuum_hls_quotient(e, d);
  for (int it = 0; it < 40 && hi - lo > 1e-7 * a0; ++it) {
    if (fc < fd) {
      hi = d;
      d = c;
      fd = fc;
      c = hi - gr * (hi - lo);
      fc = continuum_hls_quotient(e, c);
    } else {
      lo = c;
      c = d;
      fc = fd;
      d = lo + gr * (hi - lo);
      fd = continuum_hls_quotient(e, d);
    }
  }
  ProfileMinimum m;
  m.exponent = fc < fd ? c : d;
  m.value = std::min(fc, fd);
  return m;
}

/// Discrete quotient ||v||^2 / B(v)^{1/2*_mu} on the grid.
inline double grid_hls_quotient(const Field& v, const Exponents& e, const KernelTable& kt) {
  return h1_seminorm_sq(v) / std::pow(choquard_energy(v, e, kt), 1.0 / e.two_star_mu);
}

struct QuotientMinimum {
  double value = std::numeric_limits<double>::infinity();
  int best_seed = -1;
  std::vector<double> per_seed;
};

namespace detail {

/// Projected Sobolev descent of (1/2 - 1/p)||v||^2 on {||v||^2 = B(v)}; returns the final quotient.
inline double descend_quotient(Field v, const Exponents& e, const KernelTable& kt, int max_iters) {
  auto project = [&](const Field& w) {
    const double b = choquard_energy(w, e, kt);
    return w.scaled(std::pow(h1_seminorm_sq(w) / b, 1.0 / (e.p_growth - 2.0)));
  };
  v = project(v.positive_part());
  double j = h1_seminorm_sq(v);
  double step = 1.0;
  for (int it = 0; it < max_iters; ++it) {
    const Field phi = riesz_potential(v, e, kt);
    Field g = neg_laplacian(v);
    auto gv = g.mutable_values();
    for (std::size_t i : v.grid().interior()) gv[i] -= phi[i] * pow_abs(v[i], e.two_star_mu - 2.0) * v[i];
    const Field d = solve_poisson(g, 1e-10).solution;
    bool accepted = false;
    double jw = j;
    for (int k = 0; k < 30; ++k) {
      Field w = v.plus(-step, d).positive_part();
      if (!w.is_zero()) {
        w = project(w);
        jw = h1_seminorm_sq(w);
        if (jw < j) {
          v = std::move(w);
          accepted = true;
          break;
        }
      }
      step *= 0.5;
    }
    if (!accepted) break;
    const double rel = (j - jw) / j;
    j = jw;
    step = std::min(2.0 * step, 1.0);
    if (rel < 1e-12) break;
  }
  return grid_hls_quotient(v, e, kt);
}

}  // namespace detail

/// Best-of minimisation of the discrete quotient from bubbles at three scales and five random positive fields.
inline QuotientMinimum minimize_grid_quotient(const Exponents& e, const KernelTable& kt, std::uint64_t seed, int max_iters = 150) {
  const GridPtr& g = kt.grid_ptr();
  const double scale = domain_scale(*g);
  std::vector<Field> seeds;
  for (double f : {0.1, 0.25, 0.5}) seeds.push_back(talenti_bubble(g, centered_bubble(*g, f * scale), e));
  for (int k = 0; k < 5; ++k) {
    Rng rng(seed, 2000 + static_cast<std::uint64_t>(k));
    seeds.push_back(random_bump_field(g, rng));
  }
  QuotientMinimum out;
  for (std::size_t k = 0; k < seeds.size(); ++k) {
    const double v = detail::descend_quotient(seeds[k], e, kt, max_iters);
    out.per_seed.push_back(v);
    if (v < out.value) {
      out.value = v;
      out.best_seed = static_cast<int>(k);
    }
  }
  return out;
}

struct ConstantsOptions {
  std::vector<double> epsilons{0.2, 0.3};  // fractions of the ladder half-size
  bool grid_quotient = true;
  std::uint64_t seed = 1;
  int grid_iters = 150;
};

/// Sobolev constant over the ladder, continuum HLS best constant, the sharp HLS constant through
/// S_HL = S / C^{1/2*_mu}, the level gap, and (optionally) the discrete quotient on `working`.
inline CriticalConstants estimate_critical_constants(const std::vector<GridPtr>& ladder, const Exponents& e,
                                                     const KernelTable* working = nullptr, const ConstantsOptions& opt = {}) {
  if (ladder.size() < 3) throw std::invalid_argument("estimate_critical_constants: ladder needs at least 3 refinements");
  CriticalConstants c;
  const double scale = domain_scale(*ladder.back());
  double worst_err = 0.0;
  double sum = 0.0;
  for (double f : opt.epsilons) {
    const SobolevEstimate s = estimate_sobolev(ladder, e.n, f * scale);
    c.S_by_epsilon.push_back(s.value);
    c.S_ladder = s.levels;
    worst_err = std::max(worst_err, s.error);
    sum += s.value;
  }
  c.S_hat = sum / static_cast<double>(opt.epsilons.size());
  double spread = 0.0;
  for (double v : c.S_by_epsilon) spread = std::max(spread, std::abs(v - c.S_hat));
  c.S_error = worst_err + spread;
  if (c.S_error > 0.05 * c.S_hat) {
    c.flagged = true;
    c.flag_reason = "Sobolev ladder error estimate above 5%";
  }

  const ProfileMinimum pm = minimize_continuum_quotient(e);
  c.S_HL_hat = pm.value;
  c.profile_exponent = pm.exponent;
  c.C_nmu_hat = std::pow(c.S_hat / c.S_HL_hat, e.two_star_mu);
  c.level_gap = level_gap_from(c.S_HL_hat, e);
  if (working) {
    c.S_HL_grid = minimize_grid_quotient(e, *working, opt.seed, opt.grid_iters).value;
    c.level_gap_grid = level_gap_from(c.S_HL_grid, e);
  }
  return c;
}

/// Box ladder [-L/2, L/2]^n with the given point counts.
inline std::vector<GridPtr> box_ladder(int n, double side, const std::vector<int>& counts) {
  std::vector<GridPtr> out;
  for (int m : counts) out.push_back(build_grid({Shape::box, std::vector<double>(n, side), std::vector<int>(n, m)}));
  return out;
}

struct EpsilonChoice {
  double epsilon = 0.0;
  double quotient = 0.0;
  std::vector<std::pair<double, double>> scanned;
};

/// eps = h 2^{k/2}, k = -6..6, minimising the discrete quotient of the centred cut-off bubble.
inline EpsilonChoice auto_epsilon(const Exponents& e, const KernelTable& kt) {
  const DomainGrid& g = kt.grid();
  EpsilonChoice out;
  out.quotient = std::numeric_limits<double>::infinity();
  for (int k = -6; k <= 6; ++k) {
    const double eps = g.max_spacing() * std::pow(2.0, 0.5 * k);
    const Field b = talenti_bubble(kt.grid_ptr(), centered_bubble(g, eps), e);
    const double q = grid_hls_quotient(b, e, kt);
    out.scanned.emplace_back(eps, q);
    if (q < out.quotient) {
      out.quotient = q;
      out.epsilon = eps;
    }
  }
  return out;
}

class SeedFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MountainPassSeed {
  Field field;
  double epsilon = 0.0;
  double t0 = 0.0;
  double t_prime = 0.0;
  double sigma2_at_zero = 0.0;
  double energy = 0.0;
  double level_bound = 0.0;  // I(u_plus) + level_gap
  bool below_level = false;
};

/// Walks the ray u_plus + t Phi: t0 = sup{t : sigma2(t) >= 0} on a log grid, then the sigma1 root beyond t0.
/// The result is re-projected onto N- (a roundoff-size correction) and must classify as Nminus.
inline MountainPassSeed mountain_pass_seed(const Field& u_plus, double lambda, const Exponents& e, const KernelTable& kt,
                                           double level_gap, const Field& bubble, double epsilon = 0.0) {
  auto sigmas = [&](double t) {
    const Field w = u_plus.plus(t, bubble);
    const FiberCoefficients c = FiberCoefficients::from_field(w, e, kt);
    return std::make_pair(fiber_d1(c, 1.0, lambda), fiber_d2(c, 1.0, lambda));
  };
  MountainPassSeed out;
  out.epsilon = epsilon;
  out.sigma2_at_zero = fiber_d2(FiberCoefficients::from_field(u_plus, e, kt), 1.0, lambda);

  const int npts = 200;
  std::vector<double> ts(npts), s1(npts), s2(npts);
  int last_pos = -1;
  for (int i = 0; i < npts; ++i) {
    ts[i] = std::pow(10.0, -3.0 + 6.0 * i / (npts - 1));
    std::tie(s1[i], s2[i]) = sigmas(ts[i]);
    if (s2[i] >= 0.0) last_pos = i;
  }
  if (last_pos < 0) throw SeedFailure("mountain_pass_seed: sigma2 < 0 on the whole t-grid");
  if (last_pos == npts - 1) throw SeedFailure("mountain_pass_seed: sigma2 stays nonnegative up to t = 1e3");
  double lo = ts[last_pos], hi = ts[last_pos + 1];
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (sigmas(mid).second >= 0.0) lo = mid;
    else hi = mid;
  }
  out.t0 = lo;

  // First sign change of sigma1 from + to - beyond t0, extending the grid up to 1e6.
  double a = out.t0, b = -1.0;
  double fa = sigmas(a).first;
  if (!(fa > 0.0)) throw SeedFailure("mountain_pass_seed: sigma1(t0) is not positive");
  for (int i = last_pos + 1; i < npts && b < 0.0; ++i) {
    if (s1[i] < 0.0) b = ts[i];
    else a = ts[i];
  }
  for (double t = ts.back() * 2.0; b < 0.0 && t <= 1e6; t *= 2.0) {
    if (sigmas(t).first < 0.0) b = t;
    else a = t;
  }
  if (b < 0.0) throw SeedFailure("mountain_pass_seed: sigma1 root not bracketed in (t0, 1e6]");
  for (int it = 0; it < 80 && b - a > 1e-15 * b; ++it) {
    const double mid = 0.5 * (a + b);
    if (sigmas(mid).first > 0.0) a = mid;
    else b = mid;
  }
  out.t_prime = 0.5 * (a + b);

  Field w = u_plus.plus(out.t_prime, bubble);
  FiberCoefficients c = FiberCoefficients::from_field(w, e, kt);
  try {
    const double t2 = nehari_scale(c, lambda, false);
    w = w.scaled(t2);
    c = c.scaled(t2);
  } catch (const ProjectionError& err) {
    throw SeedFailure(std::string("mountain_pass_seed: ") + err.what());
  }
  if (classify(c, lambda) != NehariClass::Nminus) throw SeedFailure("mountain_pass_seed: seed does not classify as Nminus");
  out.field = std::move(w);
  out.energy = fiber_value(c, 1.0, lambda);
  const double e_plus = fiber_value(FiberCoefficients::from_field(u_plus, e, kt), 1.0, lambda);
  out.level_bound = e_plus + level_gap;
  out.below_level = out.energy < out.level_bound;
  return out;
}

}  // namespace choquard
