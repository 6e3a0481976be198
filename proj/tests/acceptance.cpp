// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
// Usage: acceptance [path/to/choquard]   (the binary is needed for the determinism check)

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "choquard/choquard.hpp"
#include "oracles.hpp"

using namespace choquard;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets.
constexpr double kScanTol = 1e-6;
constexpr double kRootTol = 1e-10;
constexpr double kFiberBudget = 30.0;
constexpr double kConvTol = 1e-10;
constexpr double kConvBudget = 60.0;
constexpr double kSobolevTol = 0.01;
constexpr double kGradTol = 1e-5;
constexpr double kResidualTol = 1e-4;
constexpr double kTwoSolutionBudget = 600.0;
constexpr double kPerturbFactor = 10.0;
constexpr double kScaleTol = 1e-8;
constexpr double kSymmetryTol = 1e-8;
constexpr double kHomogeneityTol = 1e-12;

const Exponents kE = make_exponents(3, 1.0, 0.5);

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

struct Verdict {
  bool pass = true;
  std::ostringstream detail;
  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

GridPtr grid_of(int m, bool ball) {
  return build_grid({ball ? Shape::ball : Shape::box, {2.0, 2.0, 2.0}, {m, m, m}, 1.0});
}

// 1. Fiber-map closed forms against a dense scan.
Verdict fiber_oracle() {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  double worst_scan = 0.0, worst_root = 0.0;
  bool order_ok = true, none_above = true;
  std::map<int, std::pair<GridPtr, KernelTable>> tables;
  for (int k = 0; k < 50; ++k) {
    const int m = 9 + 2 * (k % 5);
    const bool ball = k % 2 == 0;
    const int key = 2 * m + ball;
    if (!tables.count(key)) {
      auto g = grid_of(m, ball);
      tables.emplace(key, std::make_pair(g, kernel_table(g, 1.0)));
    }
    const auto& [g, kt] = tables.at(key);
    const Field u = (k % 3 == 0 ? random_positive_field(g, rng) : random_bump_field(g, rng)).scaled(rng.uniform(0.2, 5.0));
    const FiberCoefficients c = FiberCoefficients::from_field(u, kE, kt);
    const double t_zero = std::pow(c.norm_sq / c.B, 1.0 / (c.p - 2.0));  // m vanishes here
    const auto scan = oracle::dense_scan_max([&](double t) { return m_value(c, t); }, t_zero);
    const double tm = t_max_closed_form(c), mm = m_max_closed_form(c);
    worst_scan = std::max({worst_scan, rel(tm, scan.arg), rel(mm, scan.value)});
    const double crit = mm / c.A;
    const FiberDiagnostics below = fiber_diagnostics(c, 0.5 * crit);
    if (!below.roots) {
      order_ok = false;
      continue;
    }
    const double target = 0.5 * crit * c.A;
    for (double t : {below.roots->first, below.roots->second}) worst_root = std::max(worst_root, std::abs(m_value(c, t) - target) / target);
    order_ok = order_ok && below.roots->first < tm && tm < below.roots->second;
    none_above = none_above && !fiber_diagnostics(c, 2.0 * crit).roots;
  }
  const double secs = seconds_since(t0);
  v.detail << "scan rel err " << worst_scan << ", root residual " << worst_root << ", " << secs << " s";
  v.check(worst_scan <= kScanTol, "t_max/m_max vs scan");
  v.check(worst_root <= kRootTol, "root residual");
  v.check(order_ok, "t1 < t_max < t2");
  v.check(none_above, "no roots at 2 lambda_crit");
  v.check(secs < kFiberBudget, "runtime");
  return v;
}

// 2. Direct vs FFT convolution.
Verdict convolution_paths() {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(202);
  double worst = 0.0;
  std::map<int, std::pair<GridPtr, KernelTable>> tables;
  for (int k = 0; k < 50; ++k) {
    const int m = 9 + 2 * (k % 13);  // 9 .. 33
    const bool ball = k % 2 == 1;
    const int key = 2 * m + ball;
    if (!tables.count(key)) {
      auto g = grid_of(m, ball);
      tables.emplace(key, std::make_pair(g, kernel_table(g, 1.0)));
    }
    const auto& [g, kt] = tables.at(key);
    const Field u = k % 2 ? random_bump_field(g, rng) : random_positive_field(g, rng);
    std::vector<double> rho(u.size(), 0.0);
    for (std::size_t i : g->interior()) rho[i] = std::pow(u[i], kE.two_star_mu);
    worst = std::max(worst, relative_discrepancy(kt.convolve_direct(rho), kt.convolve_fast(rho)));
  }
  const double secs = seconds_since(t0);
  v.detail << "max relative discrepancy " << worst << ", " << secs << " s";
  v.check(worst <= kConvTol, "agreement");
  v.check(secs < kConvBudget, "runtime");
  return v;
}

// 3. Sobolev constant.
Verdict sobolev() {
  Verdict v;
  ConstantsOptions opt;
  opt.grid_quotient = false;
  const CriticalConstants c = estimate_critical_constants(box_ladder(3, 2.0, {17, 33, 65}), kE, nullptr, opt);
  const double oracle_s = oracle::sobolev_constant_radial(3);
  const double spread = std::abs(c.S_by_epsilon.at(0) - c.S_by_epsilon.at(1));
  v.detail << "S_hat " << c.S_hat << " +- " << c.S_error << " (oracle " << oracle_s << "), eps spread " << spread;
  v.check(rel(c.S_hat, oracle_s) <= kSobolevTol, "S within 1%");
  v.check(spread <= c.S_error, "eps independence");
  v.check(!c.flagged, "ladder converged");
  return v;
}

// 4. Gradient vs central differences.
Verdict gradient() {
  Verdict v;
  auto g = grid_of(13, true);
  const KernelTable kt = kernel_table(g, 1.0);
  Rng rng(404);
  double worst = 0.0;
  for (int k = 0; k < 20; ++k) {
    const Field b = random_bump_field(g, rng);
    const Field u = Field::from_function(g, [&](auto, std::size_t i) { return 0.2 + b[i]; });
    const Field w = random_bump_field(g, rng);
    const double lambda = rng.uniform(0.05, 1.0), eps = 1e-5;
    const double fd = (energy(u.plus(eps, w), lambda, kE, kt).total - energy(u.plus(-eps, w), lambda, kE, kt).total) / (2.0 * eps);
    const double an = l2_inner(gradient_field(u, lambda, kE, kt, default_floor(u)), w);
    worst = std::max(worst, rel(fd, an));
  }
  v.detail << "max relative error " << worst;
  v.check(worst <= kGradTol, "directional derivative");
  return v;
}

struct TwoSolution {
  GridPtr g;
  std::optional<KernelTable> kt;
  double proxy = 0.0;
  SolverConfig cfg;
  CriticalConstants consts;
  SolutionReport up, vm;
  double secs = 0.0;
};

// 5. Both branches on the 33^3 unit ball.
Verdict two_solutions(TwoSolution& run) {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  run.g = grid_of(33, true);
  run.kt.emplace(run.g, 1.0);
  run.proxy = lambda_threshold_proxy(kE, *run.kt, 20, 1).value;
  run.cfg.lambda = 0.1 * run.proxy;
  run.consts = estimate_critical_constants(box_ladder(3, 2.0, {17, 33, 65}), kE, &*run.kt);
  const double gap = std::min(run.consts.level_gap, run.consts.level_gap_grid);
  run.up = minimize_nplus(run.cfg, kE, *run.kt, run.proxy);
  if (!run.up.converged) {
    v.check(false, "nplus converged");
    return v;
  }
  run.vm = minimize_nminus(run.cfg, kE, *run.kt, run.up, {0.0, gap});
  run.secs = seconds_since(t0);
  const auto& u = run.up;
  const auto& w = run.vm;
  v.detail << "lambda " << run.cfg.lambda << ", I(u) " << u.energy.total << ", I(v) " << w.energy.total << ", gap " << gap
           << " (continuum " << run.consts.level_gap << "), residuals " << u.residual_max << " / " << w.residual_max
           << ", envelope u [" << u.envelope.L << ", " << u.envelope.K << "] v [" << w.envelope.L << ", " << w.envelope.K << "], "
           << run.secs << " s";
  v.check(u.converged && w.converged, "both converged");
  v.check(u.energy.total < 0.0, "I(u) < 0");
  v.check(u.fiber.classification == NehariClass::Nplus && u.fiber.d2_at_one > 0.0, "u in N+");
  v.check(w.fiber.classification == NehariClass::Nminus && w.fiber.d2_at_one < 0.0, "v in N-");
  v.check(w.energy.total < u.energy.total + gap, "I(v) < I(u) + gap (grid)");
  v.check(w.energy.total < u.energy.total + run.consts.level_gap, "I(v) < I(u) + gap (continuum)");
  v.check(u.residual_max <= kResidualTol && w.residual_max <= kResidualTol, "residuals");
  for (const auto* r : {&u, &w}) {
    v.check(r->min_value > 0.0, "positivity");
    v.check(r->envelope_valid && r->envelope.L > 0.0 && r->envelope.L <= r->envelope.K && std::isfinite(r->envelope.K), "envelope");
  }
  v.check(run.secs <= kTwoSolutionBudget, "runtime");
  return v;
}

// 6. Perturbed solution must be flagged.
Verdict negative_control(const TwoSolution& run) {
  Verdict v;
  if (!run.up.converged) {
    v.check(false, "needs the converged run of criterion 5");
    return v;
  }
  Rng rng(606);
  const Field bump = random_test_bump(run.g, rng);
  const double s = 0.1 / bump.max_value();
  Field pert = run.up.field;
  for (std::size_t i : run.g->interior()) pert.mutable_values()[i] *= 1.0 + s * bump[i];
  const VerifyResult r = verify_solution(pert, run.cfg.lambda, kE, *run.kt, run.cfg.verify_tests, run.cfg.rng_seed);
  v.detail << "perturbed " << r.residual_max << " vs converged " << run.up.residual_max << " (x" << r.residual_max / run.up.residual_max << ")";
  v.check(r.residual_max >= kPerturbFactor * run.up.residual_max, "ratio");
  return v;
}

// 7. Scaling, symmetry and homogeneity.
Verdict invariants() {
  Verdict v;
  Rng rng(707);
  double worst_scale = 0.0, worst_sym = 0.0, worst_hom = 0.0;
  for (bool ball : {true, false}) {
    auto g = grid_of(15, ball);
    const KernelTable kt = kernel_table(g, 1.0);
    for (int k = 0; k < 5; ++k) {
      const Field u = random_bump_field(g, rng);
      const FiberCoefficients c = FiberCoefficients::from_field(u, kE, kt);
      const double lambda = 0.3 * m_max_closed_form(c) / c.A;
      const double t1 = nehari_scale(c, lambda, true);
      for (double s : {0.5, 3.0}) {
        const FiberCoefficients cs = FiberCoefficients::from_field(u.scaled(s), kE, kt);
        worst_scale = std::max(worst_scale, rel(nehari_scale(cs, lambda, true), t1 / s));
        worst_hom = std::max({worst_hom, rel(cs.norm_sq, s * s * c.norm_sq), rel(cs.A, std::pow(s, 1.0 - kE.q) * c.A),
                              rel(cs.B, std::pow(s, kE.p_growth) * c.B)});
      }
      const EnergyBreakdown e0 = energy(u, lambda, kE, kt);
      const std::vector<std::pair<std::vector<int>, std::vector<bool>>> moves = {
          {{1, 0, 2}, {false, false, false}}, {{2, 0, 1}, {false, false, false}}, {{0, 1, 2}, {true, false, false}},
          {{0, 1, 2}, {false, true, true}},   {{2, 1, 0}, {true, true, false}}};
      for (const auto& [perm, flip] : moves) {
        const EnergyBreakdown e1 = energy(oracle::transform_field(u, perm, flip), lambda, kE, kt);
        for (auto [a, b] : {std::pair{e1.kinetic, e0.kinetic}, {e1.singular, e0.singular}, {e1.nonlocal, e0.nonlocal}, {e1.total, e0.total}})
          worst_sym = std::max(worst_sym, rel(a, b));
      }
    }
  }
  v.detail << "t1 scaling " << worst_scale << ", symmetry " << worst_sym << ", homogeneity " << worst_hom;
  v.check(worst_scale <= kScaleTol, "t1(su) = t1(u)/s");
  v.check(worst_sym <= kSymmetryTol, "grid symmetries");
  v.check(worst_hom <= kHomogeneityTol, "homogeneity");
  return v;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// 8. Two CLI runs give identical reports.
Verdict determinism(const char* binary) {
  Verdict v;
  if (!binary) {
    v.check(false, "no choquard binary given");
    return v;
  }
  const fs::path dir = fs::temp_directory_path() / ("choquard_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "run.conf") << "problem.n = 3\nproblem.mu = 1\nproblem.q = 0.5\nproblem.lambda_fraction = 0.1\n"
                                     "grid.shape = ball\ngrid.m = 17\nsolver.rng_seed = 7\nconstants.ladder = 9, 17, 33\n"
                                     "commands = constants, solve, verify, sweep\n";
  std::vector<std::string> reports;
  std::vector<int> codes;
  for (const char* out : {"first", "second"}) {
    const std::string cmd = "\"" + std::string(binary) + "\" run \"" + (dir / "run.conf").string() + "\" 2> \"" +
                            (dir / "log.txt").string() + "\"";
    const int status = std::system(cmd.c_str());
    codes.push_back(WIFEXITED(status) ? WEXITSTATUS(status) : -1);
    fs::rename(dir / "out", dir / out);
    reports.push_back(slurp(dir / out / "report.json"));
  }
  v.detail << "exit codes " << codes[0] << ", " << codes[1] << "; report " << reports[0].size() << " bytes";
  v.check(codes[0] == 0 && codes[1] == 0, "both runs exit 0");
  v.check(!reports[0].empty() && reports[0] == reports[1], "byte-identical report.json");
  fs::remove_all(dir);
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  const char* binary = argc > 1 ? argv[1] : nullptr;
  TwoSolution run;
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"fiber closed forms vs dense scan", fiber_oracle},
      {"direct vs fast convolution", convolution_paths},
      {"Sobolev constant", sobolev},
      {"gradient vs finite differences", gradient},
      {"two positive solutions on the 33^3 ball", [&] { return two_solutions(run); }},
      {"perturbed field is rejected", [&] { return negative_control(run); }},
      {"scaling and symmetry invariants", invariants},
      {"deterministic report", [&] { return determinism(binary); }},
  };
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    Verdict v;
    try {
      v = criteria[k].second();
    } catch (const std::exception& e) {
      v.check(false, std::string("exception: ") + e.what());
    }
    std::printf("%s [%zu] %s: %s\n", v.pass ? "PASS" : "FAIL", k + 1, criteria[k].first.c_str(), v.detail.str().c_str());
    std::fflush(stdout);
    failed += !v.pass;
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
