#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "choquard/energy.hpp"
#include "choquard/fields.hpp"
#include "choquard/grid.hpp"
#include "choquard/riesz.hpp"

namespace choquard {

/// The three numbers that determine the whole fiber map t -> I(t u):
/// norm_sq = ||u||^2, A = int |u|^{1-q}, B = Choquard double integral.
struct FiberCoefficients {
  double norm_sq = 0.0;
  double A = 0.0;
  double B = 0.0;
  double q = 0.5;
  double p = 10.0;

  static FiberCoefficients from_values(double norm_sq, double a, double b, const Exponents& e) {
    return {norm_sq, a, b, e.q, e.p_growth};
  }
  static FiberCoefficients from_field(const Field& u, const Exponents& e, const KernelTable& kt) {
    return from_values(h1_seminorm_sq(u), singular_integral(u, e.q), choquard_energy(u, e, kt), e);
  }
  /// Coefficients of s * u.
  FiberCoefficients scaled(double s) const {
    return {s * s * norm_sq, std::pow(s, 1.0 - q) * A, std::pow(s, p) * B, q, p};
  }
};

namespace detail {
inline void require_positive_t(double t) {
  if (!(t > 0.0)) throw std::invalid_argument("fiber: t must be positive");
}
}  // namespace detail

/// phi(t) = t^2/2 ||u||^2 - lambda t^{1-q}/(1-q) A - t^p/p B
inline double fiber_value(const FiberCoefficients& c, double t, double lambda) {
  detail::require_positive_t(t);
  return 0.5 * t * t * c.norm_sq - lambda * std::pow(t, 1.0 - c.q) / (1.0 - c.q) * c.A - std::pow(t, c.p) / c.p * c.B;
}

inline double fiber_d1(const FiberCoefficients& c, double t, double lambda) {
  detail::require_positive_t(t);
  return t * c.norm_sq - lambda * std::pow(t, -c.q) * c.A - std::pow(t, c.p - 1.0) * c.B;
}

inline double fiber_d2(const FiberCoefficients& c, double t, double lambda) {
  detail::require_positive_t(t);
  return c.norm_sq + c.q * lambda * std::pow(t, -c.q - 1.0) * c.A - (c.p - 1.0) * std::pow(t, c.p - 2.0) * c.B;
}

/// m(t) = t^{1+q} ||u||^2 - t^{p-1+q} B; phi'(t) = t^{-q} (m(t) - lambda A).
inline double m_value(const FiberCoefficients& c, double t) {
  detail::require_positive_t(t);
  return std::pow(t, 1.0 + c.q) * c.norm_sq - std::pow(t, c.p - 1.0 + c.q) * c.B;
}

inline double t_max_closed_form(const FiberCoefficients& c) {
  return std::pow((1.0 + c.q) * c.norm_sq / ((c.p - 1.0 + c.q) * c.B), 1.0 / (c.p - 2.0));
}

inline double m_max_closed_form(const FiberCoefficients& c) {
  const double p = c.p, q = c.q;
  return (p - 2.0) / (p - 1.0 + q) * std::pow((1.0 + q) / (p - 1.0 + q), (1.0 + q) / (p - 2.0)) *
         std::pow(c.norm_sq, (p - 1.0 + q) / (p - 2.0)) / std::pow(c.B, (1.0 + q) / (p - 2.0));
}

enum class NehariClass { Nplus, Nminus, Nzero, off_manifold };

inline std::string to_string(NehariClass c) {
  switch (c) {
    case NehariClass::Nplus: return "Nplus";
    case NehariClass::Nminus: return "Nminus";
    case NehariClass::Nzero: return "Nzero";
    default: return "off_manifold";
  }
}

inline NehariClass parse_nehari_class(const std::string& s) {
  if (s == "Nplus") return NehariClass::Nplus;
  if (s == "Nminus") return NehariClass::Nminus;
  if (s == "Nzero") return NehariClass::Nzero;
  if (s == "off_manifold") return NehariClass::off_manifold;
  throw std::invalid_argument("unknown Nehari class '" + s + "'");
}

inline constexpr double kManifoldTolerance = 1e-9;
inline constexpr double kCurvatureDeadBand = 1e-9;

struct FiberDiagnostics {
  FiberCoefficients coeffs;
  double lambda = 0.0;
  double t_max = 0.0;
  double m_max = 0.0;
  double lambda_crit = 0.0;
  std::optional<std::pair<double, double>> roots;
  NehariClass classification = NehariClass::off_manifold;
  double d1_at_one = 0.0;
  double d2_at_one = 0.0;
};

/// Membership of t = 1 in N+/N-/N0 from the signs of phi'(1), phi''(1).
inline NehariClass classify(const FiberCoefficients& c, double lambda) {
  if (std::abs(fiber_d1(c, 1.0, lambda)) > kManifoldTolerance * c.norm_sq) return NehariClass::off_manifold;
  const double d2 = fiber_d2(c, 1.0, lambda);
  if (d2 > kCurvatureDeadBand * c.norm_sq) return NehariClass::Nplus;
  if (d2 < -kCurvatureDeadBand * c.norm_sq) return NehariClass::Nminus;
  return NehariClass::Nzero;
}

namespace detail {
// m - target changes sign once on [lo, hi]; `increasing` tells which way.
inline double bisect_m(const FiberCoefficients& c, double target, double lo, double hi, bool increasing) {
  for (int it = 0; it < 400 && hi - lo > 1e-16 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    const bool below = m_value(c, mid) < target;
    if (below == increasing) lo = mid;
    else hi = mid;
  }
  return 0.5 * (lo + hi);
}
}  // namespace detail

/// Both roots of m(t) = lambda A when lambda < lambda_crit, else nullopt.
inline std::optional<std::pair<double, double>> fiber_roots(const FiberCoefficients& c, double lambda) {
  const double tm = t_max_closed_form(c);
  const double target = lambda * c.A;
  if (!(m_value(c, tm) > target)) return std::nullopt;
  double lo = 0.5 * tm;
  while (m_value(c, lo) >= target) lo *= 0.5;
  double hi = 2.0 * tm;
  while (m_value(c, hi) >= target) hi *= 2.0;
  return std::make_pair(detail::bisect_m(c, target, lo, tm, true), detail::bisect_m(c, target, tm, hi, false));
}

inline FiberDiagnostics fiber_diagnostics(const FiberCoefficients& c, double lambda) {
  if (!(c.norm_sq > 0.0 && c.A > 0.0 && c.B > 0.0)) throw std::invalid_argument("fiber_diagnostics: u must be nonzero");
  FiberDiagnostics d;
  d.coeffs = c;
  d.lambda = lambda;
  d.t_max = t_max_closed_form(c);
  d.m_max = m_max_closed_form(c);
  d.lambda_crit = d.m_max / c.A;
  if (lambda < d.lambda_crit) d.roots = fiber_roots(c, lambda);
  d.d1_at_one = fiber_d1(c, 1.0, lambda);
  d.d2_at_one = fiber_d2(c, 1.0, lambda);
  d.classification = classify(c, lambda);
  return d;
}

inline FiberDiagnostics fiber_diagnostics(const Field& u, double lambda, const Exponents& e, const KernelTable& kt) {
  if (u.is_zero()) throw std::invalid_argument("fiber_diagnostics: u must be nonzero");
  return fiber_diagnostics(FiberCoefficients::from_field(u, e, kt), lambda);
}

/// Raised when the fiber through u has no critical point (lambda >= lambda_crit(u)).
class ProjectionError : public std::runtime_error {
 public:
  ProjectionError(double lambda, double lambda_crit)
      : std::runtime_error(message(lambda, lambda_crit)), lambda_(lambda), lambda_crit_(lambda_crit) {}
  double lambda() const { return lambda_; }
  double lambda_crit() const { return lambda_crit_; }

 private:
  static std::string message(double lambda, double crit) {
    std::ostringstream os;
    os.precision(10);
    os << "Nehari projection impossible: lambda = " << lambda << " >= lambda_crit(u) = " << crit;
    return os.str();
  }
  double lambda_, lambda_crit_;
};

/// Scale factor t1 (plus) or t2 (minus) for a field with coefficients c.
inline double nehari_scale(const FiberCoefficients& c, double lambda, bool plus) {
  if (!(c.norm_sq > 0.0 && c.A > 0.0 && c.B > 0.0)) throw std::invalid_argument("nehari projection: u must be nonzero");
  const double crit = m_max_closed_form(c) / c.A;
  auto roots = lambda < crit ? fiber_roots(c, lambda) : std::nullopt;
  if (!roots) throw ProjectionError(lambda, crit);
  return plus ? roots->first : roots->second;
}

inline Field nehari_project_plus(const Field& u, double lambda, const Exponents& e, const KernelTable& kt) {
  return u.scaled(nehari_scale(FiberCoefficients::from_field(u, e, kt), lambda, true));
}

inline Field nehari_project_minus(const Field& u, double lambda, const Exponents& e, const KernelTable& kt) {
  return u.scaled(nehari_scale(FiberCoefficients::from_field(u, e, kt), lambda, false));
}

/// Norm threshold [lambda (p-1+q) C_{1-q} / (p-2)]^{1/(1+q)} separating N+ from N-.
inline double nehari_norm_threshold(double lambda, const Exponents& e, double c_singular) {
  const double p = e.p_growth, q = e.q;
  return std::pow(lambda * (p - 1.0 + q) * c_singular / (p - 2.0), 1.0 / (1.0 + q));
}

/// Embedding constants and the free factor K entering lambda_*.
struct Constants {
  std::map<double, double> C_alpha;
  double C_nmu = 0.0;
  double K = 1.0;
};

inline double lambda_star_closed_form(const Constants& c, const Exponents& e) {
  auto find = [&](double alpha, const char* name) {
    for (const auto& [a, v] : c.C_alpha)
      if (std::abs(a - alpha) <= 1e-12 * alpha) return v;
    throw std::invalid_argument(std::string("lambda_star: missing embedding constant ") + name);
  };
  const double c_sing = find(1.0 - e.q, "C_{1-q}");
  const double c_crit = find(e.two_star, "C_{2*}");
  if (!(c.C_nmu > 0.0)) throw std::invalid_argument("lambda_star: missing HLS constant");
  if (!(c.K > 0.0)) throw std::invalid_argument("lambda_star: K must be positive");
  const double p = e.p_growth, q = e.q;
  return (p - 2.0) / (p - 1.0 + q) * std::pow((1.0 + q) / (p - 1.0 + q), (1.0 + q) / (p - 2.0)) *
         std::pow(c.C_nmu * std::pow(c_crit, p / e.two_star), -(1.0 + q) / (p - 2.0)) / c.K / c_sing;
}

struct EmbeddingEstimate {
  double value = 0.0;
  std::vector<double> trial_values;
};

namespace detail {

inline Field normalized(const Field& u) { return u.scaled(1.0 / std::sqrt(h1_seminorm_sq(u))); }

/// Sobolev-gradient ascent of int |u|^alpha on the unit sphere of H^1_0, from one start.
inline double embedding_ascent(Field u, double alpha, int max_iters) {
  u = normalized(u.positive_part());
  double f = lp_integral(u, alpha);
  double step = 1.0;
  int small = 0;
  for (int it = 0; it < max_iters; ++it) {
    const double floor = 1e-8 * u.max_value();
    Field g(u.grid_ptr());
    auto gv = g.mutable_values();
    for (std::size_t i : u.grid().interior()) gv[i] = alpha * std::pow(std::max(u[i], floor), alpha - 1.0);
    Field d = solve_poisson(g, 1e-10).solution;
    d = d.plus(-grad_inner(d, u), u);
    const double dn = std::sqrt(h1_seminorm_sq(d));
    if (dn == 0.0) break;
    bool accepted = false;
    for (int k = 0; k < 30; ++k) {
      Field v = u.plus(step / dn, d).positive_part();
      if (!v.is_zero()) {
        v = normalized(v);
        const double fv = lp_integral(v, alpha);
        if (fv > f) {
          small = (fv - f) <= 1e-12 * fv ? small + 1 : 0;
          u = std::move(v);
          f = fv;
          accepted = true;
          step = std::min(2.0 * step, 4.0);
          break;
        }
      }
      step *= 0.5;
    }
    if (!accepted || small >= 5) break;
  }
  return f;
}

}  // namespace detail

/// Best-found sup{ int |u|^alpha : ||u|| = 1 } over `trials` random starts (a lower bound of C_alpha).
/// Trial k always uses the stream Rng(seed, k), so more trials never lower the estimate.
inline EmbeddingEstimate estimate_embedding_constant(const GridPtr& grid, double alpha, int trials,
                                                     std::uint64_t seed = 1, int max_iters = 400) {
  if (!(alpha > 0.0)) throw std::invalid_argument("estimate_embedding_constant: alpha must be positive");
  if (trials < 1) throw std::invalid_argument("estimate_embedding_constant: need at least one trial");
  EmbeddingEstimate out;
  for (int k = 0; k < trials; ++k) {
    Rng rng(seed, static_cast<std::uint64_t>(k));
    const double v = detail::embedding_ascent(random_bump_field(grid, rng), alpha, max_iters);
    out.trial_values.push_back(v);
    out.value = std::max(out.value, v);
  }
  return out;
}

struct ThresholdProxy {
  double value = std::numeric_limits<double>::infinity();
  std::vector<double> probe_values;  // eigenmode first, then the random probes
};

/// Empirical stand-in for the global threshold: min lambda_crit over the eigenmode and random bump probes.
inline ThresholdProxy lambda_threshold_proxy(const Exponents& e, const KernelTable& kt, int probes, std::uint64_t seed) {
  ThresholdProxy out;
  auto add = [&](const Field& u) {
    const FiberCoefficients c = FiberCoefficients::from_field(u, e, kt);
    const double crit = m_max_closed_form(c) / c.A;
    out.probe_values.push_back(crit);
    out.value = std::min(out.value, crit);
  };
  add(eigenmode(kt.grid_ptr()));
  for (int k = 0; k < probes; ++k) {
    Rng rng(seed, 1000 + static_cast<std::uint64_t>(k));
    add(random_bump_field(kt.grid_ptr(), rng));
  }
  return out;
}

}  // namespace choquard
