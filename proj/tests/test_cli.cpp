#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "choquard/cli.hpp"

using namespace choquard;
namespace fs = std::filesystem;

namespace {

const char* kSmoke = R"(problem.n = 3
problem.mu = 1
problem.q = 0.5
problem.lambda_fraction = 0.1
grid.shape = ball
grid.m = 13
constants.ladder = 9, 13, 17
constants.grid_iters = 40
solver.verify_tests = 5
commands = solve, verify, sweep
)";

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("choquard_cli_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

fs::path write_config(const fs::path& dir, const std::string& body, const std::string& name = "run.conf") {
  std::ofstream(dir / name) << body;
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

struct Invocation {
  int code = -1;
  std::string err;
};

Invocation invoke(const std::string& args, const fs::path& dir, const std::string& env = "") {
  const char* bin = std::getenv("CHOQUARD_BIN");
  if (!bin) return {};
  const fs::path err = dir / "stderr.txt";
  const std::string cmd = env + " \"" + std::string(bin) + "\" " + args + " 2> \"" + err.string() + "\"";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(err)};
}

RunConfig parse(const std::string& body) {
  std::istringstream in(body);
  return parse_config(in, "t.conf");
}

std::string parse_error(const std::string& body) {
  try {
    parse(body);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, ParsesValues) {
  const RunConfig c = parse(std::string(kSmoke) + "solver.seed_kind = bubble   # trailing comment\nconvolution = direct\n");
  EXPECT_EQ(c.n, 3);
  EXPECT_EQ(c.grid_spec().m, (std::vector<int>{13, 13, 13}));
  EXPECT_EQ(c.ladder, (std::vector<int>{9, 13, 17}));
  EXPECT_EQ(c.solver.seed_kind, SeedKind::bubble);
  EXPECT_EQ(c.convolution, ConvolutionPath::direct);
  EXPECT_DOUBLE_EQ(*c.lambda_fraction, 0.1);
  EXPECT_FALSE(c.lambda.has_value());
  ASSERT_EQ(c.commands.size(), 3u);
  EXPECT_EQ(c.commands[2], Command::sweep);
  EXPECT_EQ(c.echo.at("grid.m"), "13");
}

TEST(Config, ErrorsCarryLineNumbers) {
  EXPECT_NE(parse_error("problem.lambda = 0.1\nbogus.key = 3\n").find("t.conf:2: unknown key 'bogus.key'"), std::string::npos);
  EXPECT_NE(parse_error("problem.lambda = 0.1\n\n# c\nproblem.q = half\n").find("t.conf:4:"), std::string::npos);
  EXPECT_NE(parse_error("problem.lambda = 0.1\njust words\n").find("t.conf:2: expected 'key = value'"), std::string::npos);
  EXPECT_NE(parse_error("problem.lambda = 0.1\nproblem.lambda = 0.2\n").find("t.conf:2: duplicate key"), std::string::npos);
  EXPECT_NE(parse_error("problem.lambda = 0.1\nproblem.lambda_fraction = 0.1\n").find("t.conf:2:"), std::string::npos);
  EXPECT_NE(parse_error("problem.lambda = 0.1\ncommands = solve, dance\n").find("t.conf:2:"), std::string::npos);
  EXPECT_NE(parse_error("problem.lambda = 0.1\nproblem.mu = 3\n").find("t.conf:"), std::string::npos);
  EXPECT_NE(parse_error("problem.lambda = 0.1\nconstants.ladder = 9, 17\n").find("t.conf:2:"), std::string::npos);
  EXPECT_NE(parse_error("problem.q = 0.5\n").find("lambda"), std::string::npos);
  EXPECT_NE(parse_error("problem.lambda = 0.1\ngrid.m = 3\n").find("t.conf:2:"), std::string::npos);
}

TEST(Config, GridOverride) {
  RunConfig c = parse(kSmoke);
  apply_grid_override(c, "m=21");
  EXPECT_EQ(c.grid_spec().m, (std::vector<int>{21, 21, 21}));
  EXPECT_EQ(c.echo.at("grid.m"), "21");
  EXPECT_THROW(apply_grid_override(c, "n=21"), ConfigError);
  EXPECT_THROW(apply_grid_override(c, "m=abc"), ConfigError);
  EXPECT_THROW(apply_grid_override(c, "m=3"), ConfigError);
}

TEST(Sweep, RegimesAroundCriticalLambda) {
  auto g = build_grid({Shape::ball, {2.0, 2.0, 2.0}, {11, 11, 11}, 1.0});
  const Exponents e = make_exponents(3, 1.0, 0.5);
  const KernelTable kt = kernel_table(g, 1.0);
  const Field probe = eigenmode(g);
  const double crit = fiber_diagnostics(probe, 1.0, e, kt).lambda_crit;
  for (const auto& r : sweep_lambda(probe, e, kt, {0.1 * crit, 0.5 * crit, 0.99 * crit})) EXPECT_EQ(r.n_roots, 2);
  for (const auto& r : sweep_lambda(probe, e, kt, {1.01 * crit, 2.0 * crit})) EXPECT_EQ(r.n_roots, 0);
  const auto rows = sweep_lambda(probe, e, kt, {0.2 * crit, 0.6 * crit, 0.9 * crit, 1.1 * crit, 3.0 * crit});
  int transitions = 0;
  for (std::size_t k = 1; k < rows.size(); ++k) transitions += rows[k].n_roots != rows[k - 1].n_roots;
  EXPECT_EQ(transitions, 1);
  EXPECT_EQ(rows[2].n_roots, 2);
  EXPECT_EQ(rows[3].n_roots, 0);
  EXPECT_LT(rows[0].t1, rows[0].t2);
  EXPECT_THROW(sweep_lambda(Field(g), e, kt, {1.0}), std::invalid_argument);
}

TEST(Report, JsonRoundTrip) {
  const fs::path dir = scratch_dir("roundtrip");
  RunConfig c = parse(kSmoke);
  c.output_dir = dir;
  std::ostringstream log;
  const RunOutcome out = run(c, log);
  ASSERT_EQ(out.exit_code, 0) << log.str();
  const json j = out.report;
  const RunReport back = j.get<RunReport>();
  EXPECT_EQ(json(back), j);
  EXPECT_EQ(json::parse(slurp(dir / "report.json")), j);
  EXPECT_EQ(j.at("versions").at("schema"), 1);
  for (const char* key : {"config_echo", "constants", "nplus", "nminus", "sweep", "versions"}) EXPECT_TRUE(j.contains(key)) << key;
  ASSERT_TRUE(back.nplus && back.nminus);
  EXPECT_EQ(back.nplus->energy.total, out.report.nplus->energy.total);
  EXPECT_EQ(back.nminus->fiber.classification, NehariClass::Nminus);
  fs::remove_all(dir);
}

TEST(Report, CsvFilesMatchReport) {
  const fs::path dir = scratch_dir("csv");
  RunConfig c = parse(kSmoke);
  c.output_dir = dir;
  std::ostringstream log;
  const RunOutcome out = run(c, log);
  for (const char* f : {"nplus_field.csv", "nminus_field.csv", "nplus_bands.csv", "nplus_radial.csv", "sweep.csv"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  std::ifstream in(dir / "nplus_field.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "i,j,k,x,y,z,value");
  double mx = 0.0;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    mx = std::max(mx, std::stod(line.substr(line.rfind(',') + 1)));
    ++rows;
  }
  EXPECT_EQ(rows, 13u * 13u * 13u);
  EXPECT_EQ(mx, out.report.nplus->linf);
  fs::remove_all(dir);
}

class Binary : public ::testing::Test {
 protected:
  void SetUp() override {
    if (!std::getenv("CHOQUARD_BIN")) GTEST_SKIP() << "CHOQUARD_BIN not set";
  }
};

TEST_F(Binary, MissingFileExitsOne) {
  const fs::path dir = scratch_dir("missing");
  const Invocation r = invoke("run \"" + (dir / "nope.conf").string() + "\"", dir);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("cannot open"), std::string::npos);
  fs::remove_all(dir);
}

TEST_F(Binary, MalformedConfigExitsOneWithLine) {
  const fs::path dir = scratch_dir("malformed");
  const fs::path cfg = write_config(dir, "problem.lambda = 0.1\ngrid.m = 13\nsolver.step0 = fast\n");
  const Invocation r = invoke("run \"" + cfg.string() + "\"", dir);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("run.conf:3:"), std::string::npos) << r.err;
  EXPECT_EQ(invoke("run", dir).code, 1);
  EXPECT_EQ(invoke("frobnicate \"" + cfg.string() + "\"", dir).code, 1);
  fs::remove_all(dir);
}

TEST_F(Binary, ConvergedRunExitsZero) {
  const fs::path dir = scratch_dir("ok");
  const fs::path cfg = write_config(dir, std::string(kSmoke) + "output_dir = out\n");
  const Invocation r = invoke("run \"" + cfg.string() + "\"", dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = json::parse(slurp(dir / "out" / "report.json"));
  EXPECT_TRUE(j.at("nplus").at("converged").get<bool>());
  EXPECT_TRUE(j.at("nminus").at("converged").get<bool>());
  fs::remove_all(dir);
}

TEST_F(Binary, NonConvergedRunExitsTwo) {
  const fs::path dir = scratch_dir("stalled");
  const fs::path cfg = write_config(dir, std::string(kSmoke) + "solver.max_iters = 1\noutput_dir = out\n");
  const Invocation r = invoke("run \"" + cfg.string() + "\"", dir);
  EXPECT_EQ(r.code, 2) << r.err;
  EXPECT_TRUE(fs::exists(dir / "out" / "report.json"));
  fs::remove_all(dir);
}

TEST_F(Binary, SweepCommandShowsTransition) {
  const fs::path dir = scratch_dir("sweep");
  const fs::path cfg = write_config(dir, std::string(kSmoke) + "output_dir = out\n");
  ASSERT_EQ(invoke("sweep \"" + cfg.string() + "\"", dir).code, 0);
  std::ifstream in(dir / "out" / "sweep.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "lambda,n_roots,t1,t2,m_max,lambda_crit");
  std::vector<int> roots;
  while (std::getline(in, line)) roots.push_back(std::stoi(line.substr(line.find(',') + 1)));
  ASSERT_EQ(roots.size(), 8u);
  EXPECT_EQ(roots.front(), 2);
  EXPECT_EQ(roots.back(), 0);
  int transitions = 0;
  for (std::size_t k = 1; k < roots.size(); ++k) transitions += roots[k] != roots[k - 1];
  EXPECT_EQ(transitions, 1);
  const json j = json::parse(slurp(dir / "out" / "report.json"));
  EXPECT_TRUE(j.at("nplus").is_null());
  fs::remove_all(dir);
}

TEST_F(Binary, IdenticalRunsAreByteIdentical) {
  const fs::path dir = scratch_dir("determinism");
  const fs::path a = write_config(dir, std::string(kSmoke) + "output_dir = a\n", "a.conf");
  const fs::path b = write_config(dir, std::string(kSmoke) + "output_dir = a\n", "b.conf");
  ASSERT_EQ(invoke("run \"" + a.string() + "\"", dir).code, 0);
  fs::rename(dir / "a", dir / "first");
  ASSERT_EQ(invoke("run \"" + b.string() + "\"", dir, "CHOQUARD_THREADS=1").code, 0);
  EXPECT_EQ(slurp(dir / "first" / "report.json"), slurp(dir / "a" / "report.json"));
  EXPECT_EQ(slurp(dir / "first" / "nminus_field.csv"), slurp(dir / "a" / "nminus_field.csv"));
  fs::remove_all(dir);
}

TEST_F(Binary, FlagsAndThreadCap) {
  const fs::path dir = scratch_dir("flags");
  const fs::path cfg = write_config(dir, std::string(kSmoke) + "output_dir = out\n");
  const Invocation both = invoke("run \"" + cfg.string() + "\" --convolution both --grid-override m=11", dir);
  ASSERT_EQ(both.code, 0) << both.err;
  const json j = json::parse(slurp(dir / "out" / "report.json"));
  EXPECT_EQ(j.at("config_echo").at("grid.m"), "11");
  EXPECT_EQ(j.at("config_echo").at("convolution"), "both");
  EXPECT_EQ(invoke("run \"" + cfg.string() + "\" --convolution slow", dir).code, 1);
  EXPECT_EQ(invoke("run \"" + cfg.string() + "\" --grid-override m=x", dir).code, 1);
  EXPECT_EQ(invoke("run \"" + cfg.string() + "\"", dir, "CHOQUARD_THREADS=zero").code, 1);
  fs::remove_all(dir);
}
