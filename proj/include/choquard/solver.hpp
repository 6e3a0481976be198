#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "choquard/bubble.hpp"
#include "choquard/energy.hpp"
#include "choquard/fiber.hpp"
#include "choquard/fields.hpp"
#include "choquard/regularity.hpp"
#include "choquard/riesz.hpp"

namespace choquard {

enum class SeedKind { random_bump, eigenmode, bubble };

inline std::string to_string(SeedKind k) {
  switch (k) {
    case SeedKind::random_bump: return "random_bump";
    case SeedKind::eigenmode: return "eigenmode";
    default: return "bubble";
  }
}

inline SeedKind parse_seed_kind(const std::string& s) {
  if (s == "random_bump") return SeedKind::random_bump;
  if (s == "eigenmode") return SeedKind::eigenmode;
  if (s == "bubble") return SeedKind::bubble;
  throw std::invalid_argument("unknown seed kind '" + s + "' (expected random_bump, eigenmode or bubble)");
}

struct SolverConfig {
  double lambda = 0.0;
  int max_iters = 400;
  double step0 = 1.0;
  double energy_tol = 1e-10;
  double residual_tol = 1e-4;
  double floor = 1e-8;  // relative to max(u)
  SeedKind seed_kind = SeedKind::eigenmode;
  std::uint64_t rng_seed = 1;
  int verify_tests = 20;
  int stall_window = 5;

  void validate() const {
    if (!(lambda > 0.0)) throw std::invalid_argument("solver: lambda must be positive");
    if (max_iters < 1) throw std::invalid_argument("solver: max_iters must be at least 1");
    if (!(step0 > 0.0 && energy_tol > 0.0 && residual_tol > 0.0 && floor > 0.0))
      throw std::invalid_argument("solver: step0 and all tolerances must be positive");
    if (verify_tests < 0) throw std::invalid_argument("solver: verify_tests must be nonnegative");
    if (stall_window < 1) throw std::invalid_argument("solver: stall_window must be at least 1");
  }
};

struct VerifyResult {
  double residual_max = 0.0;
  double eigen_residual = 0.0;
  std::vector<double> per_test;
  std::vector<double> singular_l1;  // sum u^{-q} |w| h^n per test, eigenmode last
  bool l1_finite = true;
};

/// Weak residuals of u against random compact bumps and the eigenmode, each divided by ||w||.
inline VerifyResult verify_solution(const Field& u, double lambda, const Exponents& e, const KernelTable& kt, int n_tests,
                                    std::uint64_t rng_seed) {
  const DomainGrid& g = u.grid();
  for (std::size_t i : g.interior())
    if (!(u[i] > 0.0)) throw std::domain_error("verify_solution: field must be positive on the mask");
  const Field phi = riesz_potential(u, e, kt);
  VerifyResult out;
  auto test = [&](const Field& w) {
    const double r = std::abs(weak_residual(u, w, phi, lambda, e, 0.0)) / std::sqrt(h1_seminorm_sq(w));
    double l1 = 0.0;
    for (std::size_t i : g.interior()) l1 += std::pow(u[i], -e.q) * std::abs(w[i]);
    l1 *= g.cell_volume();
    out.singular_l1.push_back(l1);
    out.l1_finite = out.l1_finite && std::isfinite(l1);
    out.residual_max = std::max(out.residual_max, r);
    return r;
  };
  for (int k = 0; k < n_tests; ++k) {
    Rng rng(rng_seed, 3000 + static_cast<std::uint64_t>(k));
    out.per_test.push_back(test(random_test_bump(u.grid_ptr(), rng)));
  }
  out.eigen_residual = test(eigenmode(u.grid_ptr()));
  return out;
}

struct SolutionReport {
  NehariClass branch = NehariClass::Nplus;
  Field field;
  EnergyBreakdown energy;
  FiberDiagnostics fiber;
  double residual_max = 0.0;
  double dual_residual = 0.0;  // ||(-Delta_h)^{-1} G|| at the last iterate
  double min_value = 0.0;
  double linf = 0.0;
  double potential_bound = 0.0;
  Envelope envelope;
  bool envelope_valid = false;
  double max_iterate_norm = 0.0;
  int iters = 0;
  bool converged = false;
  std::string seed;
  std::string seed_note;  // why the mountain-pass seed was not used, if it was not
  std::string stop_reason;
  std::vector<std::string> failures;
  std::vector<double> energy_history;
  VerifyResult verify;
};

namespace detail {

struct DescentResult {
  Field field;
  FiberCoefficients coeffs;
  int iters = 0;
  double dual = 0.0;
  double max_norm = 0.0;
  std::string stop;
  std::vector<double> history;
};

/// Sobolev-gradient descent with positive clamp, Nehari re-projection and backtracking on the energy.
inline DescentResult descend(Field u, const SolverConfig& cfg, const Exponents& e, const KernelTable& kt, bool plus) {
  const double lambda = cfg.lambda;
  FiberCoefficients c = FiberCoefficients::from_field(u, e, kt);
  {
    const double t = nehari_scale(c, lambda, plus);
    u = u.scaled(t);
    c = c.scaled(t);
  }
  DescentResult r;
  double energy_now = fiber_value(c, 1.0, lambda);
  r.history.push_back(energy_now);
  r.max_norm = std::sqrt(c.norm_sq);
  double step = cfg.step0;
  int small = 0;
  r.stop = "max_iters";
  for (int it = 0; it < cfg.max_iters; ++it) {
    const Field g = gradient_field(u, lambda, e, kt, cfg.floor * u.max_value());
    const Field d = solve_poisson(g, 1e-10).solution;
    r.dual = std::sqrt(h1_seminorm_sq(d));
    bool accepted = false;
    double e_new = energy_now;
    for (int k = 0; k <= 30; ++k) {
      Field v = u.plus(-step, d).positive_part();
      if (!v.is_zero()) {
        FiberCoefficients cv = FiberCoefficients::from_field(v, e, kt);
        const double crit = m_max_closed_form(cv) / cv.A;
        if (lambda < crit) {
          const double t = nehari_scale(cv, lambda, plus);
          cv = cv.scaled(t);
          const double ev = fiber_value(cv, 1.0, lambda);
          if (ev < energy_now) {
            u = v.scaled(t);
            c = cv;
            e_new = ev;
            accepted = true;
            break;
          }
        }
      }
      if (k < 30) step *= 0.5;
    }
    if (!accepted) {
      r.stop = "line_search";
      r.iters = it;
      break;
    }
    const double rel = (energy_now - e_new) / std::max(std::abs(energy_now), std::numeric_limits<double>::min());
    energy_now = e_new;
    r.history.push_back(energy_now);
    r.max_norm = std::max(r.max_norm, std::sqrt(c.norm_sq));
    r.iters = it + 1;
    small = rel < cfg.energy_tol ? small + 1 : 0;
    if (small >= cfg.stall_window) {
      r.stop = "energy_tol";
      break;
    }
    step = std::min(2.0 * step, cfg.step0);
  }
  {
    const Field g = gradient_field(u, lambda, e, kt, cfg.floor * u.max_value());
    r.dual = std::sqrt(h1_seminorm_sq(solve_poisson(g, 1e-10).solution));
  }
  r.field = std::move(u);
  r.coeffs = c;
  return r;
}

inline SolutionReport finish_report(NehariClass branch, DescentResult&& d, const SolverConfig& cfg, const Exponents& e,
                                    const KernelTable& kt) {
  SolutionReport rep;
  rep.branch = branch;
  rep.field = std::move(d.field);
  rep.iters = d.iters;
  rep.stop_reason = d.stop;
  rep.energy_history = std::move(d.history);
  rep.max_iterate_norm = d.max_norm;
  rep.dual_residual = d.dual;
  // Recompute from the field rather than trusting the cached coefficients.
  rep.fiber = fiber_diagnostics(rep.field, cfg.lambda, e, kt);
  const auto& c = rep.fiber.coeffs;
  rep.energy = make_breakdown(cfg.lambda, c.norm_sq, c.A, c.B, e);
  rep.min_value = rep.field.min_interior();
  rep.linf = linf_bound(rep.field);
  rep.potential_bound = nonlocal_potential_bound(rep.field, e, kt);
  if (rep.min_value > 0.0) {
    rep.verify = verify_solution(rep.field, cfg.lambda, e, kt, cfg.verify_tests, cfg.rng_seed);
    rep.residual_max = rep.verify.residual_max;
    rep.envelope = boundary_envelope(rep.field);
    rep.envelope_valid = true;
  } else {
    rep.residual_max = std::numeric_limits<double>::infinity();
    rep.failures.push_back("field not positive on the mask");
  }
  if (!(rep.residual_max <= cfg.residual_tol)) rep.failures.push_back("weak residual above tolerance");
  if (rep.fiber.classification != branch) rep.failures.push_back("classification " + to_string(rep.fiber.classification));
  if (!rep.verify.l1_finite) rep.failures.push_back("singular term not integrable against a test field");
  return rep;
}

}  // namespace detail

/// Initial field for the N+ branch.
inline Field nplus_seed(const GridPtr& grid, const SolverConfig& cfg, const Exponents& e) {
  switch (cfg.seed_kind) {
    case SeedKind::eigenmode: return eigenmode(grid);
    case SeedKind::random_bump: {
      Rng rng(cfg.rng_seed, 0);
      return random_bump_field(grid, rng);
    }
    default: return talenti_bubble(grid, centered_bubble(*grid, 0.25 * domain_scale(*grid)), e);
  }
}

/// Minimises I over N+ (best found). `threshold`, when given, is the empirical lambda limit.
inline SolutionReport minimize_nplus(const SolverConfig& cfg, const Exponents& e, const KernelTable& kt,
                                     std::optional<double> threshold = std::nullopt) {
  cfg.validate();
  if (threshold && !(cfg.lambda < *threshold)) {
    std::ostringstream os;
    os << "minimize_nplus: lambda = " << cfg.lambda << " is not below the empirical threshold " << *threshold;
    throw std::invalid_argument(os.str());
  }
  auto d = detail::descend(nplus_seed(kt.grid_ptr(), cfg, e), cfg, e, kt, true);
  SolutionReport rep = detail::finish_report(NehariClass::Nplus, std::move(d), cfg, e, kt);
  rep.seed = to_string(cfg.seed_kind);
  if (!(rep.energy.total < 0.0)) rep.failures.push_back("energy not negative");
  rep.converged = rep.failures.empty();
  return rep;
}

struct NminusOptions {
  double epsilon = 0.0;  // <= 0 selects the automatic scan
  double level_gap = 0.0;
};

/// Minimises I over N- from the mountain-pass seed u_plus + t' Phi_eps. When that seed cannot be
/// built the best projected member of {Phi_eps, u_plus + t Phi_eps} is used instead.
inline SolutionReport minimize_nminus(const SolverConfig& cfg, const Exponents& e, const KernelTable& kt, const SolutionReport& u_plus,
                                      const NminusOptions& opt) {
  cfg.validate();
  if (!u_plus.converged) throw std::invalid_argument("minimize_nminus: the N+ solution has not converged");
  const GridPtr& g = kt.grid_ptr();
  const double eps = opt.epsilon > 0.0 ? opt.epsilon : auto_epsilon(e, kt).epsilon;
  const Field bubble = talenti_bubble(g, centered_bubble(*g, eps), e);
  Field seed;
  std::string seed_name;
  std::string seed_note;
  try {
    MountainPassSeed mp = mountain_pass_seed(u_plus.field, cfg.lambda, e, kt, opt.level_gap, bubble, eps);
    seed = std::move(mp.field);
    seed_name = "mountain_pass";
  } catch (const SeedFailure& err) {
    seed_note = err.what();
    double best = std::numeric_limits<double>::infinity();
    auto consider = [&](const Field& w) {
      const FiberCoefficients c = FiberCoefficients::from_field(w, e, kt);
      if (!(cfg.lambda < m_max_closed_form(c) / c.A)) return;
      const double s = nehari_scale(c, cfg.lambda, false);
      const double en = fiber_value(c.scaled(s), 1.0, cfg.lambda);
      if (en < best) {
        best = en;
        seed = w.scaled(s);
      }
    };
    consider(bubble);
    for (int k = 0; k <= 24; ++k) consider(u_plus.field.plus(std::pow(10.0, -2.0 + 4.0 * k / 24.0), bubble));
    if (!std::isfinite(best)) throw SeedFailure(seed_note + "; fallback family has no N- point");
    seed_name = "fallback_family";
  }
  auto d = detail::descend(std::move(seed), cfg, e, kt, false);
  SolutionReport rep = detail::finish_report(NehariClass::Nminus, std::move(d), cfg, e, kt);
  rep.seed = seed_name;
  rep.seed_note = seed_note;
  if (!(rep.energy.total < u_plus.energy.total + opt.level_gap)) rep.failures.push_back("level bound I(u) + gap violated");
  rep.converged = rep.failures.empty();
  return rep;
}

}  // namespace choquard
