#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "choquard/bubble.hpp"
#include "choquard/fiber.hpp"
#include "choquard/regularity.hpp"
#include "choquard/solver.hpp"

namespace choquard {

using nlohmann::json;

inline constexpr int kSchemaVersion = 1;

// ---------------------------------------------------------------- config

enum class Command { solve, sweep, constants, verify };

inline std::string to_string(Command c) {
  switch (c) {
    case Command::solve: return "solve";
    case Command::sweep: return "sweep";
    case Command::constants: return "constants";
    default: return "verify";
  }
}

/// Thrown for malformed configs; `what()` already carries "file:line: ".
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  int n = 3;
  double mu = 1.0;
  double q = 0.5;
  std::optional<double> lambda;
  std::optional<double> lambda_fraction;
  double K = 1.0;

  Shape shape = Shape::ball;
  std::vector<double> extent{2.0};
  std::vector<int> m{33};
  double radius = 1.0;

  SolverConfig solver;
  double epsilon = 0.0;  // 0 = automatic

  std::vector<int> ladder{17, 33, 65};
  double ladder_side = 0.0;  // 0 = twice the working domain scale
  std::vector<double> ladder_epsilons{0.2, 0.3};
  bool grid_quotient = true;
  int grid_iters = 150;

  int proxy_probes = 20;
  std::uint64_t proxy_seed = 1;
  int embedding_trials = 4;
  std::uint64_t embedding_seed = 1;

  std::vector<double> sweep_lambdas;  // empty = geometric list around lambda_crit of the probe
  int sweep_count = 8;
  double sweep_lo = 0.25;
  double sweep_hi = 4.0;
  SeedKind sweep_probe = SeedKind::eigenmode;

  int verify_tests = 50;
  std::uint64_t verify_seed = 2;

  std::vector<Command> commands{Command::constants, Command::solve};
  std::filesystem::path output_dir = "out";
  ConvolutionPath convolution = ConvolutionPath::fast;

  std::map<std::string, std::string> echo;

  GridSpec grid_spec() const {
    GridSpec g;
    g.shape = shape;
    g.extent = extent.size() == 1 ? std::vector<double>(n, extent[0]) : extent;
    g.m = m.size() == 1 ? std::vector<int>(n, m[0]) : m;
    g.radius = radius;
    return g;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline double parse_double(const std::string& s) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v))
    throw std::invalid_argument("expected a number, got '" + s + "'");
  return v;
}

inline long long parse_int(const std::string& s) {
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw std::invalid_argument("expected an integer, got '" + s + "'");
  return v;
}

inline std::uint64_t parse_seed(const std::string& s) {
  const long long v = parse_int(s);
  if (v < 0) throw std::invalid_argument("seed must be nonnegative");
  return static_cast<std::uint64_t>(v);
}

inline bool parse_bool(const std::string& s) {
  if (s == "true" || s == "yes" || s == "1") return true;
  if (s == "false" || s == "no" || s == "0") return false;
  throw std::invalid_argument("expected true or false, got '" + s + "'");
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) throw std::invalid_argument("empty item in list '" + s + "'");
    out.push_back(item);
  }
  if (out.empty()) throw std::invalid_argument("empty list");
  return out;
}

template <class T, class F>
std::vector<T> parse_list(const std::string& s, F&& f) {
  std::vector<T> out;
  for (const auto& item : split_list(s)) out.push_back(static_cast<T>(f(item)));
  return out;
}

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

inline const std::map<std::string, Setter>& config_setters() {
  static const std::map<std::string, Setter> table = {
      {"problem.n", [](RunConfig& c, const std::string& v) { c.n = static_cast<int>(parse_int(v)); }},
      {"problem.mu", [](RunConfig& c, const std::string& v) { c.mu = parse_double(v); }},
      {"problem.q", [](RunConfig& c, const std::string& v) { c.q = parse_double(v); }},
      {"problem.lambda",
       [](RunConfig& c, const std::string& v) {
         c.lambda = parse_double(v);
         require(*c.lambda > 0.0, "lambda must be positive");
       }},
      {"problem.lambda_fraction",
       [](RunConfig& c, const std::string& v) {
         c.lambda_fraction = parse_double(v);
         require(*c.lambda_fraction > 0.0, "lambda_fraction must be positive");
       }},
      {"problem.K",
       [](RunConfig& c, const std::string& v) {
         c.K = parse_double(v);
         require(c.K > 0.0, "K must be positive");
       }},
      {"grid.shape", [](RunConfig& c, const std::string& v) { c.shape = parse_shape(v); }},
      {"grid.m", [](RunConfig& c, const std::string& v) { c.m = parse_list<int>(v, parse_int); }},
      {"grid.extent", [](RunConfig& c, const std::string& v) { c.extent = parse_list<double>(v, parse_double); }},
      {"grid.radius", [](RunConfig& c, const std::string& v) { c.radius = parse_double(v); }},
      {"solver.max_iters", [](RunConfig& c, const std::string& v) { c.solver.max_iters = static_cast<int>(parse_int(v)); }},
      {"solver.step0", [](RunConfig& c, const std::string& v) { c.solver.step0 = parse_double(v); }},
      {"solver.energy_tol", [](RunConfig& c, const std::string& v) { c.solver.energy_tol = parse_double(v); }},
      {"solver.residual_tol", [](RunConfig& c, const std::string& v) { c.solver.residual_tol = parse_double(v); }},
      {"solver.floor", [](RunConfig& c, const std::string& v) { c.solver.floor = parse_double(v); }},
      {"solver.seed_kind", [](RunConfig& c, const std::string& v) { c.solver.seed_kind = parse_seed_kind(v); }},
      {"solver.rng_seed", [](RunConfig& c, const std::string& v) { c.solver.rng_seed = parse_seed(v); }},
      {"solver.verify_tests", [](RunConfig& c, const std::string& v) { c.solver.verify_tests = static_cast<int>(parse_int(v)); }},
      {"solver.stall_window", [](RunConfig& c, const std::string& v) { c.solver.stall_window = static_cast<int>(parse_int(v)); }},
      {"bubble.epsilon",
       [](RunConfig& c, const std::string& v) {
         c.epsilon = v == "auto" ? 0.0 : parse_double(v);
         require(c.epsilon >= 0.0, "epsilon must be positive or 'auto'");
       }},
      {"constants.ladder", [](RunConfig& c, const std::string& v) { c.ladder = parse_list<int>(v, parse_int); }},
      {"constants.side", [](RunConfig& c, const std::string& v) { c.ladder_side = parse_double(v); }},
      {"constants.epsilons", [](RunConfig& c, const std::string& v) { c.ladder_epsilons = parse_list<double>(v, parse_double); }},
      {"constants.grid_quotient", [](RunConfig& c, const std::string& v) { c.grid_quotient = parse_bool(v); }},
      {"constants.grid_iters", [](RunConfig& c, const std::string& v) { c.grid_iters = static_cast<int>(parse_int(v)); }},
      {"proxy.probes", [](RunConfig& c, const std::string& v) { c.proxy_probes = static_cast<int>(parse_int(v)); }},
      {"proxy.seed", [](RunConfig& c, const std::string& v) { c.proxy_seed = parse_seed(v); }},
      {"embedding.trials", [](RunConfig& c, const std::string& v) { c.embedding_trials = static_cast<int>(parse_int(v)); }},
      {"embedding.seed", [](RunConfig& c, const std::string& v) { c.embedding_seed = parse_seed(v); }},
      {"sweep.lambdas", [](RunConfig& c, const std::string& v) { c.sweep_lambdas = parse_list<double>(v, parse_double); }},
      {"sweep.count", [](RunConfig& c, const std::string& v) { c.sweep_count = static_cast<int>(parse_int(v)); }},
      {"sweep.lo_fraction", [](RunConfig& c, const std::string& v) { c.sweep_lo = parse_double(v); }},
      {"sweep.hi_fraction", [](RunConfig& c, const std::string& v) { c.sweep_hi = parse_double(v); }},
      {"sweep.probe", [](RunConfig& c, const std::string& v) { c.sweep_probe = parse_seed_kind(v); }},
      {"verify.tests", [](RunConfig& c, const std::string& v) { c.verify_tests = static_cast<int>(parse_int(v)); }},
      {"verify.seed", [](RunConfig& c, const std::string& v) { c.verify_seed = parse_seed(v); }},
      {"commands",
       [](RunConfig& c, const std::string& v) {
         c.commands.clear();
         for (const auto& s : split_list(v)) {
           if (s == "solve") c.commands.push_back(Command::solve);
           else if (s == "sweep") c.commands.push_back(Command::sweep);
           else if (s == "constants") c.commands.push_back(Command::constants);
           else if (s == "verify") c.commands.push_back(Command::verify);
           else throw std::invalid_argument("unknown command '" + s + "' (expected solve, sweep, constants or verify)");
         }
       }},
      {"output_dir", [](RunConfig& c, const std::string& v) { c.output_dir = v; }},
      {"convolution", [](RunConfig& c, const std::string& v) { c.convolution = parse_convolution(v); }},
  };
  return table;
}

}  // namespace detail

/// Cross-key checks after all lines are read; `line_of` maps keys to their source line.
inline void validate_config(const RunConfig& c, const std::function<std::string(const std::string&)>& where) {
  auto fail = [&](const std::string& key, const std::string& msg) { throw ConfigError(where(key) + msg); };
  try {
    make_exponents(c.n, c.mu, c.q);
  } catch (const std::exception& e) {
    fail("problem.n", e.what());
  }
  if (c.lambda && c.lambda_fraction) fail("problem.lambda_fraction", "give problem.lambda or problem.lambda_fraction, not both");
  if (!c.lambda && !c.lambda_fraction) fail("problem.lambda", "one of problem.lambda or problem.lambda_fraction is required");
  if (c.lambda_fraction && !(*c.lambda_fraction < 1.0))
    fail("problem.lambda_fraction", "lambda_fraction must be below 1 (it scales the threshold proxy)");
  if (c.m.size() != 1 && static_cast<int>(c.m.size()) != c.n) fail("grid.m", "grid.m needs 1 or n values");
  if (c.extent.size() != 1 && static_cast<int>(c.extent.size()) != c.n) fail("grid.extent", "grid.extent needs 1 or n values");
  try {
    build_grid(c.grid_spec());
  } catch (const std::exception& e) {
    fail("grid.m", e.what());
  }
  SolverConfig s = c.solver;
  s.lambda = 1.0;
  try {
    s.validate();
  } catch (const std::exception& e) {
    fail("solver.max_iters", e.what());
  }
  if (c.ladder.size() < 3) fail("constants.ladder", "constants.ladder needs at least 3 refinements");
  for (int m : c.ladder)
    if (m < 5) fail("constants.ladder", "ladder counts must be at least 5");
  if (c.ladder_side < 0.0) fail("constants.side", "constants.side must be positive");
  if (c.ladder_epsilons.empty()) fail("constants.epsilons", "constants.epsilons must not be empty");
  for (double e : c.ladder_epsilons)
    if (!(e > 0.0 && e < 0.5)) fail("constants.epsilons", "constants.epsilons must lie in (0, 0.5)");
  if (c.grid_iters < 1) fail("constants.grid_iters", "constants.grid_iters must be at least 1");
  if (c.proxy_probes < 0) fail("proxy.probes", "proxy.probes must be nonnegative");
  if (c.embedding_trials < 1) fail("embedding.trials", "embedding.trials must be at least 1");
  if (c.sweep_count < 2) fail("sweep.count", "sweep.count must be at least 2");
  if (!(c.sweep_lo > 0.0 && c.sweep_lo < c.sweep_hi)) fail("sweep.lo_fraction", "need 0 < sweep.lo_fraction < sweep.hi_fraction");
  for (double l : c.sweep_lambdas)
    if (!(l > 0.0)) fail("sweep.lambdas", "sweep lambdas must be positive");
  if (c.verify_tests < 0) fail("verify.tests", "verify.tests must be nonnegative");
  if (c.commands.empty()) fail("commands", "no commands given");
}

/// Parses "key = value" lines ('#' starts a comment). Relative output_dir resolves against the config's folder.
inline RunConfig parse_config(std::istream& in, const std::string& name, const std::filesystem::path& base_dir = {}) {
  RunConfig cfg;
  std::map<std::string, int> line_of;
  const auto& setters = detail::config_setters();
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const auto hash = raw.find('#');
    const std::string line = detail::trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    auto here = [&] { return name + ":" + std::to_string(lineno) + ": "; };
    if (eq == std::string::npos) throw ConfigError(here() + "expected 'key = value', got '" + line + "'");
    const std::string key = detail::trim(line.substr(0, eq)), value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(here() + "missing key");
    if (value.empty()) throw ConfigError(here() + "missing value for '" + key + "'");
    const auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError(here() + "unknown key '" + key + "'");
    if (line_of.count(key)) throw ConfigError(here() + "duplicate key '" + key + "' (first set on line " + std::to_string(line_of[key]) + ")");
    try {
      it->second(cfg, value);
    } catch (const std::exception& e) {
      throw ConfigError(here() + key + ": " + e.what());
    }
    line_of[key] = lineno;
    cfg.echo[key] = value;
  }
  validate_config(cfg, [&](const std::string& key) {
    const auto it = line_of.find(key);
    return it == line_of.end() ? name + ": " : name + ":" + std::to_string(it->second) + ": ";
  });
  if (cfg.output_dir.is_relative() && !base_dir.empty()) cfg.output_dir = base_dir / cfg.output_dir;
  return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open config file");
  return parse_config(in, path.string(), path.parent_path());
}

/// Applies "--grid-override m=NN".
inline void apply_grid_override(RunConfig& cfg, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || detail::trim(spec.substr(0, eq)) != "m")
    throw ConfigError("--grid-override: expected m=NN, got '" + spec + "'");
  long long m = 0;
  try {
    m = detail::parse_int(detail::trim(spec.substr(eq + 1)));
  } catch (const std::exception& e) {
    throw ConfigError(std::string("--grid-override: ") + e.what());
  }
  if (m < 5) throw ConfigError("--grid-override: m must be at least 5");
  cfg.m = {static_cast<int>(m)};
  cfg.echo["grid.m"] = std::to_string(m);
  try {
    build_grid(cfg.grid_spec());
  } catch (const std::exception& e) {
    throw ConfigError(std::string("--grid-override: ") + e.what());
  }
}

// ---------------------------------------------------------------- sweep

struct SweepRow {
  double lambda = 0.0;
  int n_roots = 0;
  double t1 = 0.0;
  double t2 = 0.0;
  double m_max = 0.0;
  double lambda_crit = 0.0;
};

/// Fiber regimes of a fixed probe across a list of lambda values.
inline std::vector<SweepRow> sweep_lambda(const Field& probe, const Exponents& e, const KernelTable& kt, const std::vector<double>& lambdas) {
  if (probe.is_zero()) throw std::invalid_argument("sweep_lambda: probe must be nonzero");
  const FiberCoefficients c = FiberCoefficients::from_field(probe, e, kt);
  std::vector<SweepRow> rows;
  for (double lam : lambdas) {
    const FiberDiagnostics d = fiber_diagnostics(c, lam);
    SweepRow r;
    r.lambda = lam;
    r.m_max = d.m_max;
    r.lambda_crit = d.lambda_crit;
    if (d.roots) {
      r.n_roots = 2;
      r.t1 = d.roots->first;
      r.t2 = d.roots->second;
    }
    rows.push_back(r);
  }
  return rows;
}

// ---------------------------------------------------------------- JSON

namespace detail {

inline json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
inline double get_num(const json& j, const char* key) {
  const json& v = j.at(key);
  return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
}

}  // namespace detail

inline void to_json(json& j, const EnergyBreakdown& b) {
  j = {{"lambda", b.lambda}, {"kinetic", b.kinetic}, {"singular", b.singular}, {"nonlocal", b.nonlocal}, {"total", b.total}};
}
inline void from_json(const json& j, EnergyBreakdown& b) {
  b.lambda = j.at("lambda");
  b.kinetic = j.at("kinetic");
  b.singular = j.at("singular");
  b.nonlocal = j.at("nonlocal");
  b.total = j.at("total");
}

inline void to_json(json& j, const FiberDiagnostics& d) {
  j = {{"norm_sq", d.coeffs.norm_sq}, {"A", d.coeffs.A}, {"B", d.coeffs.B}, {"q", d.coeffs.q}, {"p", d.coeffs.p},
       {"lambda", d.lambda}, {"t_max", d.t_max}, {"m_max", d.m_max}, {"lambda_crit", d.lambda_crit},
       {"classification", to_string(d.classification)}, {"d1_at_one", d.d1_at_one}, {"d2_at_one", d.d2_at_one}};
  j["roots"] = d.roots ? json::array({d.roots->first, d.roots->second}) : json(nullptr);
}
inline void from_json(const json& j, FiberDiagnostics& d) {
  d.coeffs.norm_sq = j.at("norm_sq");
  d.coeffs.A = j.at("A");
  d.coeffs.B = j.at("B");
  d.coeffs.q = j.at("q");
  d.coeffs.p = j.at("p");
  d.lambda = j.at("lambda");
  d.t_max = j.at("t_max");
  d.m_max = j.at("m_max");
  d.lambda_crit = j.at("lambda_crit");
  d.classification = parse_nehari_class(j.at("classification").get<std::string>());
  d.d1_at_one = j.at("d1_at_one");
  d.d2_at_one = j.at("d2_at_one");
  if (j.at("roots").is_null()) d.roots.reset();
  else d.roots = std::make_pair(j.at("roots").at(0).get<double>(), j.at("roots").at(1).get<double>());
}

inline void to_json(json& j, const EnvelopeBand& b) {
  j = {{"delta_lo", b.delta_lo}, {"delta_hi", b.delta_hi}, {"min_ratio", b.min_ratio}, {"max_ratio", b.max_ratio}, {"count", b.count}};
}
inline void from_json(const json& j, EnvelopeBand& b) {
  b.delta_lo = j.at("delta_lo");
  b.delta_hi = j.at("delta_hi");
  b.min_ratio = j.at("min_ratio");
  b.max_ratio = j.at("max_ratio");
  b.count = j.at("count");
}

inline void to_json(json& j, const Envelope& e) {
  j = {{"L", e.L}, {"K", e.K}, {"excluded_below", e.excluded_below}, {"nodes", e.nodes}, {"bands", e.bands}};
}
inline void from_json(const json& j, Envelope& e) {
  e.L = j.at("L");
  e.K = j.at("K");
  e.excluded_below = j.at("excluded_below");
  e.nodes = j.at("nodes");
  e.bands = j.at("bands").get<std::vector<EnvelopeBand>>();
}

inline void to_json(json& j, const VerifyResult& v) {
  j = {{"residual_max", detail::num(v.residual_max)}, {"eigen_residual", detail::num(v.eigen_residual)},
       {"per_test", v.per_test}, {"singular_l1", v.singular_l1}, {"l1_finite", v.l1_finite}};
}
inline void from_json(const json& j, VerifyResult& v) {
  v.residual_max = detail::get_num(j, "residual_max");
  v.eigen_residual = detail::get_num(j, "eigen_residual");
  v.per_test = j.at("per_test").get<std::vector<double>>();
  v.singular_l1 = j.at("singular_l1").get<std::vector<double>>();
  v.l1_finite = j.at("l1_finite");
}

/// Everything except the field itself, which goes to CSV.
inline void to_json(json& j, const SolutionReport& r) {
  j = {{"branch", to_string(r.branch)},
       {"energy", r.energy},
       {"fiber", r.fiber},
       {"residual_max", detail::num(r.residual_max)},
       {"dual_residual", detail::num(r.dual_residual)},
       {"min_value", r.min_value},
       {"linf", r.linf},
       {"potential_bound", r.potential_bound},
       {"envelope", r.envelope_valid ? json(r.envelope) : json(nullptr)},
       {"max_iterate_norm", r.max_iterate_norm},
       {"iters", r.iters},
       {"converged", r.converged},
       {"best_found", true},
       {"seed", r.seed},
       {"seed_note", r.seed_note},
       {"stop_reason", r.stop_reason},
       {"failures", r.failures},
       {"energy_history", r.energy_history},
       {"verify", r.verify}};
}
inline void from_json(const json& j, SolutionReport& r) {
  r.branch = parse_nehari_class(j.at("branch").get<std::string>());
  r.energy = j.at("energy").get<EnergyBreakdown>();
  r.fiber = j.at("fiber").get<FiberDiagnostics>();
  r.residual_max = detail::get_num(j, "residual_max");
  r.dual_residual = detail::get_num(j, "dual_residual");
  r.min_value = j.at("min_value");
  r.linf = j.at("linf");
  r.potential_bound = j.at("potential_bound");
  r.envelope_valid = !j.at("envelope").is_null();
  r.envelope = r.envelope_valid ? j.at("envelope").get<Envelope>() : Envelope{};
  r.max_iterate_norm = j.at("max_iterate_norm");
  r.iters = j.at("iters");
  r.converged = j.at("converged");
  r.seed = j.at("seed");
  r.seed_note = j.at("seed_note");
  r.stop_reason = j.at("stop_reason");
  r.failures = j.at("failures").get<std::vector<std::string>>();
  r.energy_history = j.at("energy_history").get<std::vector<double>>();
  r.verify = j.at("verify").get<VerifyResult>();
}

inline void to_json(json& j, const CriticalConstants& c) {
  j = {{"S_hat", c.S_hat},         {"S_error", c.S_error},           {"S_by_epsilon", c.S_by_epsilon},
       {"S_ladder", c.S_ladder},   {"S_HL_hat", c.S_HL_hat},         {"profile_exponent", c.profile_exponent},
       {"C_nmu_hat", c.C_nmu_hat}, {"level_gap", c.level_gap},       {"S_HL_grid", c.S_HL_grid},
       {"level_gap_grid", c.level_gap_grid}, {"flagged", c.flagged}, {"flag_reason", c.flag_reason}};
}
inline void from_json(const json& j, CriticalConstants& c) {
  c.S_hat = j.at("S_hat");
  c.S_error = j.at("S_error");
  c.S_by_epsilon = j.at("S_by_epsilon").get<std::vector<double>>();
  c.S_ladder = j.at("S_ladder").get<std::vector<double>>();
  c.S_HL_hat = j.at("S_HL_hat");
  c.profile_exponent = j.at("profile_exponent");
  c.C_nmu_hat = j.at("C_nmu_hat");
  c.level_gap = j.at("level_gap");
  c.S_HL_grid = j.at("S_HL_grid");
  c.level_gap_grid = j.at("level_gap_grid");
  c.flagged = j.at("flagged");
  c.flag_reason = j.at("flag_reason");
}

inline void to_json(json& j, const SweepRow& r) {
  j = {{"lambda", r.lambda}, {"n_roots", r.n_roots}, {"t1", r.t1}, {"t2", r.t2}, {"m_max", r.m_max}, {"lambda_crit", r.lambda_crit}};
}
inline void from_json(const json& j, SweepRow& r) {
  r.lambda = j.at("lambda");
  r.n_roots = j.at("n_roots");
  r.t1 = j.at("t1");
  r.t2 = j.at("t2");
  r.m_max = j.at("m_max");
  r.lambda_crit = j.at("lambda_crit");
}

/// The constants block: critical constants plus the lambda thresholds of the run.
struct ConstantsBlock {
  std::optional<CriticalConstants> critical;
  double C_singular = 0.0;  // embedding constant for exponent 1 - q
  double C_critical = 0.0;  // embedding constant for exponent 2*
  double K = 1.0;
  double lambda_star = 0.0;  // heuristic: depends on the free factor K
  double threshold_proxy = 0.0;
  std::vector<double> threshold_probes;
  double lambda = 0.0;
  double epsilon = 0.0;
  double level_gap_used = 0.0;
};

inline void to_json(json& j, const ConstantsBlock& c) {
  j = {{"critical", c.critical ? json(*c.critical) : json(nullptr)},
       {"C_singular", c.C_singular},
       {"C_critical", c.C_critical},
       {"K", c.K},
       {"lambda_star", c.lambda_star},
       {"lambda_star_heuristic", true},
       {"threshold_proxy", c.threshold_proxy},
       {"threshold_probes", c.threshold_probes},
       {"lambda", c.lambda},
       {"epsilon", c.epsilon},
       {"level_gap_used", c.level_gap_used}};
}
inline void from_json(const json& j, ConstantsBlock& c) {
  if (j.at("critical").is_null()) c.critical.reset();
  else c.critical = j.at("critical").get<CriticalConstants>();
  c.C_singular = j.at("C_singular");
  c.C_critical = j.at("C_critical");
  c.K = j.at("K");
  c.lambda_star = j.at("lambda_star");
  c.threshold_proxy = j.at("threshold_proxy");
  c.threshold_probes = j.at("threshold_probes").get<std::vector<double>>();
  c.lambda = j.at("lambda");
  c.epsilon = j.at("epsilon");
  c.level_gap_used = j.at("level_gap_used");
}

struct RunReport {
  std::map<std::string, std::string> config_echo;
  ConstantsBlock constants;
  std::optional<SolutionReport> nplus;
  std::optional<SolutionReport> nminus;
  std::optional<std::vector<SweepRow>> sweep;
  std::vector<std::string> notes;
};

inline void to_json(json& j, const RunReport& r) {
  j = {{"config_echo", r.config_echo},
       {"constants", r.constants},
       {"nplus", r.nplus ? json(*r.nplus) : json(nullptr)},
       {"nminus", r.nminus ? json(*r.nminus) : json(nullptr)},
       {"sweep", r.sweep ? json(*r.sweep) : json(nullptr)},
       {"notes", r.notes},
       {"versions", {{"schema", kSchemaVersion}}}};
}
inline void from_json(const json& j, RunReport& r) {
  if (j.at("versions").at("schema").get<int>() != kSchemaVersion) throw std::invalid_argument("report: unsupported schema version");
  r.config_echo = j.at("config_echo").get<std::map<std::string, std::string>>();
  r.constants = j.at("constants").get<ConstantsBlock>();
  if (j.at("nplus").is_null()) r.nplus.reset();
  else r.nplus = j.at("nplus").get<SolutionReport>();
  if (j.at("nminus").is_null()) r.nminus.reset();
  else r.nminus = j.at("nminus").get<SolutionReport>();
  if (j.at("sweep").is_null()) r.sweep.reset();
  else r.sweep = j.at("sweep").get<std::vector<SweepRow>>();
  r.notes = j.at("notes").get<std::vector<std::string>>();
}

// ---------------------------------------------------------------- CSV

inline void write_bands_csv(std::ostream& os, const Envelope& env) {
  os << "band,delta_lo,delta_hi,min_ratio,max_ratio,count\n" << std::setprecision(17);
  for (std::size_t b = 0; b < env.bands.size(); ++b) {
    const auto& x = env.bands[b];
    os << b << ',' << x.delta_lo << ',' << x.delta_hi << ',' << x.min_ratio << ',' << x.max_ratio << ',' << x.count << '\n';
  }
}

/// Values along the positive first axis through the centre.
inline void write_radial_csv(std::ostream& os, const Field& u) {
  const DomainGrid& g = u.grid();
  os << "r,value\n" << std::setprecision(17);
  std::vector<double> x(g.dim(), 0.0);
  for (int k = 0; k < g.m()[0]; ++k) {
    x[0] = g.coord_of(k, 0);
    if (x[0] < -1e-12) continue;
    const std::size_t i = g.nearest(x);
    os << x[0] << ',' << u[i] << '\n';
  }
}

inline void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  os << "lambda,n_roots,t1,t2,m_max,lambda_crit\n" << std::setprecision(17);
  for (const auto& r : rows) os << r.lambda << ',' << r.n_roots << ',' << r.t1 << ',' << r.t2 << ',' << r.m_max << ',' << r.lambda_crit << '\n';
}

// ---------------------------------------------------------------- driver

struct RunOutcome {
  RunReport report;
  int exit_code = 0;
};

class Runner {
 public:
  Runner(RunConfig cfg, std::ostream& log)
      : cfg_(std::move(cfg)),
        log_(log),
        e_(make_exponents(cfg_.n, cfg_.mu, cfg_.q)),
        grid_(build_grid(cfg_.grid_spec())),
        kt_(kernel_table(grid_, cfg_.mu, cfg_.convolution)) {}

  RunOutcome execute(const std::vector<Command>& commands) {
    report_.config_echo = cfg_.echo;
    setup_lambda();
    for (Command c : commands) {
      log_ << "[" << to_string(c) << "]\n";
      switch (c) {
        case Command::constants: constants(); break;
        case Command::solve: solve(); break;
        case Command::verify: verify(); break;
        case Command::sweep: sweep(); break;
      }
    }
    write_outputs();
    RunOutcome out;
    out.report = report_;
    out.exit_code = all_converged_ ? 0 : 2;
    return out;
  }

 private:
  void setup_lambda() {
    const ThresholdProxy px = lambda_threshold_proxy(e_, kt_, cfg_.proxy_probes, cfg_.proxy_seed);
    report_.constants.threshold_proxy = px.value;
    report_.constants.threshold_probes = px.probe_values;
    report_.constants.K = cfg_.K;
    lambda_ = cfg_.lambda ? *cfg_.lambda : *cfg_.lambda_fraction * px.value;
    report_.constants.lambda = lambda_;
    log_ << "lambda = " << lambda_ << " (threshold proxy " << px.value << ")\n";
  }

  void constants() {
    ConstantsOptions opt;
    opt.epsilons = cfg_.ladder_epsilons;
    opt.grid_quotient = cfg_.grid_quotient;
    opt.seed = cfg_.solver.rng_seed;
    opt.grid_iters = cfg_.grid_iters;
    const double side = cfg_.ladder_side > 0.0 ? cfg_.ladder_side : 2.0 * domain_scale(*grid_);
    const CriticalConstants cc = estimate_critical_constants(box_ladder(cfg_.n, side, cfg_.ladder), e_, &kt_, opt);
    if (cc.flagged) report_.notes.push_back("constants flagged: " + cc.flag_reason);
    auto& b = report_.constants;
    b.critical = cc;
    b.C_singular = estimate_embedding_constant(grid_, 1.0 - cfg_.q, cfg_.embedding_trials, cfg_.embedding_seed).value;
    b.C_critical = estimate_embedding_constant(grid_, e_.two_star, cfg_.embedding_trials, cfg_.embedding_seed).value;
    Constants lc;
    lc.C_alpha[1.0 - cfg_.q] = b.C_singular;
    lc.C_alpha[e_.two_star] = b.C_critical;
    lc.C_nmu = cc.C_nmu_hat;
    lc.K = cfg_.K;
    b.lambda_star = lambda_star_closed_form(lc, e_);
    b.level_gap_used = cfg_.grid_quotient ? std::min(cc.level_gap, cc.level_gap_grid) : cc.level_gap;
    log_ << "S_hat = " << cc.S_hat << " +- " << cc.S_error << ", S_HL_hat = " << cc.S_HL_hat << ", level gap = " << b.level_gap_used << "\n";
  }

  void solve() {
    if (!report_.constants.critical) constants();
    SolverConfig sc = cfg_.solver;
    sc.lambda = lambda_;
    SolutionReport up = minimize_nplus(sc, e_, kt_, report_.constants.threshold_proxy);
    log_ << "nplus: energy " << up.energy.total << ", residual " << up.residual_max << ", converged " << up.converged << "\n";
    if (!up.converged) all_converged_ = false;
    nplus_field_ = up.field;
    report_.nplus = up;
    report_.nminus.reset();
    if (!up.converged) {
      report_.notes.push_back("nminus skipped: nplus did not converge");
      all_converged_ = false;
      return;
    }
    const double eps = cfg_.epsilon > 0.0 ? cfg_.epsilon : auto_epsilon(e_, kt_).epsilon;
    report_.constants.epsilon = eps;
    SolutionReport vm = minimize_nminus(sc, e_, kt_, up, {eps, report_.constants.level_gap_used});
    log_ << "nminus: energy " << vm.energy.total << ", residual " << vm.residual_max << ", converged " << vm.converged << "\n";
    if (!vm.converged) all_converged_ = false;
    nminus_field_ = vm.field;
    report_.nminus = vm;
  }

  void verify() {
    if (!report_.nplus) throw std::runtime_error("verify: no solution to verify (put 'solve' before 'verify')");
    for (auto* rep : {&report_.nplus, &report_.nminus}) {
      if (!*rep) continue;
      SolutionReport& r = **rep;
      const Field& u = r.branch == NehariClass::Nplus ? nplus_field_ : nminus_field_;
      if (!(u.min_interior() > 0.0)) continue;
      r.verify = verify_solution(u, lambda_, e_, kt_, cfg_.verify_tests, cfg_.verify_seed);
      r.residual_max = r.verify.residual_max;
      if (r.converged && !(r.residual_max <= cfg_.solver.residual_tol)) {
        r.converged = false;
        r.failures.push_back("weak residual above tolerance on re-verification");
        all_converged_ = false;
      }
      log_ << to_string(r.branch) << ": re-verified residual " << r.residual_max << "\n";
    }
  }

  void sweep() {
    SolverConfig probe_cfg = cfg_.solver;
    probe_cfg.seed_kind = cfg_.sweep_probe;
    const Field probe = nplus_seed(grid_, probe_cfg, e_);
    std::vector<double> lambdas = cfg_.sweep_lambdas;
    if (lambdas.empty()) {
      const double crit = fiber_diagnostics(probe, 1.0, e_, kt_).lambda_crit;
      for (int k = 0; k < cfg_.sweep_count; ++k)
        lambdas.push_back(crit * cfg_.sweep_lo * std::pow(cfg_.sweep_hi / cfg_.sweep_lo, double(k) / (cfg_.sweep_count - 1)));
    }
    report_.sweep = sweep_lambda(probe, e_, kt_, lambdas);
    log_ << "sweep: " << lambdas.size() << " rows\n";
  }

  void write_outputs() {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(cfg_.output_dir, ec);
    if (ec) throw std::runtime_error("cannot create output directory " + cfg_.output_dir.string() + ": " + ec.message());
    auto open = [&](const std::string& name) {
      std::ofstream f(cfg_.output_dir / name, std::ios::binary);
      if (!f) throw std::runtime_error("cannot write " + (cfg_.output_dir / name).string());
      return f;
    };
    {
      auto f = open("report.json");
      f << json(report_).dump(2) << '\n';
    }
    auto dump_branch = [&](const std::optional<SolutionReport>& r, const Field& u, const std::string& tag) {
      if (!r) return;
      {
        auto f = open(tag + "_field.csv");
        write_csv(f, u);
      }
      {
        auto f = open(tag + "_radial.csv");
        write_radial_csv(f, u);
      }
      if (r->envelope_valid) {
        auto f = open(tag + "_bands.csv");
        write_bands_csv(f, r->envelope);
      }
    };
    dump_branch(report_.nplus, nplus_field_, "nplus");
    dump_branch(report_.nminus, nminus_field_, "nminus");
    if (report_.sweep) {
      auto f = open("sweep.csv");
      write_sweep_csv(f, *report_.sweep);
    }
  }

  RunConfig cfg_;
  std::ostream& log_;
  Exponents e_;
  GridPtr grid_;
  KernelTable kt_;
  double lambda_ = 0.0;
  RunReport report_;
  Field nplus_field_;
  Field nminus_field_;
  bool all_converged_ = true;
};

/// `run` executes the configured command list, `sweep` only the sweep.
inline RunOutcome run(const RunConfig& cfg, std::ostream& log) { return Runner(cfg, log).execute(cfg.commands); }
inline RunOutcome run_sweep(const RunConfig& cfg, std::ostream& log) { return Runner(cfg, log).execute({Command::sweep}); }

}  // namespace choquard
