#include <gtest/gtest.h>

#include <cmath>

#include "choquard/solver.hpp"
#include "oracles.hpp"

using namespace choquard;

namespace {

const Exponents kE = make_exponents(3, 1.0, 0.5);

struct Run {
  GridPtr g;
  KernelTable kt;
  double proxy;
  SolverConfig cfg;
  CriticalConstants consts;
  SolutionReport up;
  SolutionReport um;

  explicit Run(int m)
      : g(build_grid({Shape::ball, {2.0, 2.0, 2.0}, {m, m, m}, 1.0})),
        kt(kernel_table(g, 1.0)),
        proxy(lambda_threshold_proxy(kE, kt, 20, 1).value) {
    cfg.lambda = 0.1 * proxy;
    ConstantsOptions opt;
    opt.grid_iters = 60;
    consts = estimate_critical_constants(box_ladder(3, 2.0, {9, 17, 33}), kE, &kt, opt);
    up = minimize_nplus(cfg, kE, kt, proxy);
    um = minimize_nminus(cfg, kE, kt, up, {0.0, std::min(consts.level_gap, consts.level_gap_grid)});
  }
};

const Run& run21() {
  static const Run r(21);
  return r;
}

double rel_diff(const Field& a, const Field& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::abs(a[i] - b[i]));
    den = std::max(den, std::abs(a[i]));
  }
  return num / den;
}

}  // namespace

TEST(Solver, ConfigValidation) {
  SolverConfig c;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.lambda = 0.1;
  EXPECT_NO_THROW(c.validate());
  for (auto bad : {&SolverConfig::step0, &SolverConfig::energy_tol, &SolverConfig::residual_tol, &SolverConfig::floor}) {
    SolverConfig d = c;
    d.*bad = 0.0;
    EXPECT_THROW(d.validate(), std::invalid_argument);
  }
  c.max_iters = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_EQ(parse_seed_kind("bubble"), SeedKind::bubble);
  EXPECT_THROW(parse_seed_kind("flat"), std::invalid_argument);
}

TEST(Solver, LambdaAboveThresholdRejected) {
  const auto& r = run21();
  SolverConfig c = r.cfg;
  c.lambda = r.proxy;
  EXPECT_THROW(minimize_nplus(c, kE, r.kt, r.proxy), std::invalid_argument);
}

TEST(Solver, NplusConverges) {
  const auto& r = run21();
  const auto& u = r.up;
  for (const auto& f : u.failures) ADD_FAILURE() << f;
  EXPECT_TRUE(u.converged);
  EXPECT_EQ(u.branch, NehariClass::Nplus);
  EXPECT_LT(u.energy.total, 0.0);
  EXPECT_GT(u.fiber.d2_at_one, 0.0);
  EXPECT_LE(std::abs(u.fiber.d1_at_one), 1e-9 * u.fiber.coeffs.norm_sq);
  EXPECT_LE(u.residual_max, r.cfg.residual_tol);
  EXPECT_GT(u.min_value, 0.0);
  EXPECT_NEAR(u.energy.total, fiber_value(u.fiber.coeffs, 1.0, r.cfg.lambda), 1e-12 * std::abs(u.energy.total));
}

TEST(Solver, EnergyHistoryNonIncreasing) {
  for (const auto* rep : {&run21().up, &run21().um}) {
    ASSERT_GE(rep->energy_history.size(), 2u);
    for (std::size_t k = 1; k < rep->energy_history.size(); ++k) EXPECT_LT(rep->energy_history[k], rep->energy_history[k - 1]);
  }
}

TEST(Solver, NplusNormBound) {
  const auto& r = run21();
  const double c = estimate_embedding_constant(r.g, 1.0 - kE.q, 4).value;
  EXPECT_LE(r.up.max_iterate_norm, nehari_norm_threshold(r.cfg.lambda, kE, c));
}

TEST(Solver, NminusConverges) {
  const auto& r = run21();
  const auto& v = r.um;
  for (const auto& f : v.failures) ADD_FAILURE() << f;
  EXPECT_TRUE(v.converged);
  EXPECT_EQ(v.branch, NehariClass::Nminus);
  EXPECT_LT(v.fiber.d2_at_one, 0.0);
  EXPECT_GT(v.energy.total, r.up.energy.total);
  EXPECT_LT(v.energy.total, r.up.energy.total + std::min(r.consts.level_gap, r.consts.level_gap_grid));
  EXPECT_GT(v.min_value, 0.0);
  EXPECT_LE(v.residual_max, r.cfg.residual_tol);
  // the N- branch stays away from zero
  const double c = estimate_embedding_constant(r.g, 1.0 - kE.q, 4).value;
  EXPECT_GE(std::sqrt(v.fiber.coeffs.norm_sq), nehari_norm_threshold(r.cfg.lambda, kE, c));
}

TEST(Solver, NminusNeedsConvergedNplus) {
  const auto& r = run21();
  SolutionReport bad = r.up;
  bad.converged = false;
  EXPECT_THROW(minimize_nminus(r.cfg, kE, r.kt, bad, {}), std::invalid_argument);
}

TEST(Solver, EigenmodeSeedIsNoWorseThanOthers) {
  const auto& r = run21();
  for (SeedKind k : {SeedKind::random_bump, SeedKind::bubble}) {
    SolverConfig c = r.cfg;
    c.seed_kind = k;
    const SolutionReport other = minimize_nplus(c, kE, r.kt, r.proxy);
    EXPECT_LE(r.up.energy.total, other.energy.total + 1e-6 * std::abs(other.energy.total)) << to_string(k);
  }
}

TEST(Solver, Deterministic) {
  const auto& r = run21();
  const SolutionReport again = minimize_nplus(r.cfg, kE, r.kt, r.proxy);
  ASSERT_EQ(again.field.size(), r.up.field.size());
  for (std::size_t i = 0; i < again.field.size(); ++i) ASSERT_EQ(again.field[i], r.up.field[i]);
  EXPECT_EQ(again.energy.total, r.up.energy.total);
  EXPECT_EQ(again.residual_max, r.up.residual_max);
}

TEST(Solver, RadialSeedStaysSymmetric) {
  const auto& r = run21();
  for (const auto* rep : {&r.up, &r.um}) {
    EXPECT_LE(rel_diff(rep->field, oracle::transform_field(rep->field, {1, 2, 0}, {false, false, false})), 1e-8);
    EXPECT_LE(rel_diff(rep->field, oracle::transform_field(rep->field, {0, 1, 2}, {true, false, true})), 1e-8);
  }
}

TEST(Solver, VerifyWithoutRandomTests) {
  const auto& r = run21();
  const VerifyResult v = verify_solution(r.up.field, r.cfg.lambda, kE, r.kt, 0, 5);
  EXPECT_TRUE(v.per_test.empty());
  EXPECT_EQ(v.residual_max, v.eigen_residual);
  EXPECT_EQ(v.singular_l1.size(), 1u);
}

TEST(Solver, VerifyDetectsPerturbedField) {
  const auto& r = run21();
  Rng rng(7);
  const Field bump = random_test_bump(r.g, rng);
  const double scale = 0.1 / bump.max_value();
  Field pert = r.up.field;
  for (std::size_t i : r.g->interior()) pert.mutable_values()[i] *= 1.0 + scale * bump[i];
  const VerifyResult v = verify_solution(pert, r.cfg.lambda, kE, r.kt, 20, 1);
  EXPECT_GE(v.residual_max, 10.0 * r.up.residual_max);
  EXPECT_TRUE(v.l1_finite);
}

TEST(Solver, VerifyRejectsNonPositiveField) {
  const auto& r = run21();
  Field z = r.up.field;
  z.mutable_values()[r.g->interior()[0]] = 0.0;
  EXPECT_THROW(verify_solution(z, r.cfg.lambda, kE, r.kt, 2, 1), std::domain_error);
}
