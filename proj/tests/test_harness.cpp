#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "test_util.hpp"

namespace {

using namespace nupf;
using nupf::testing::error_code;

std::vector<StateVector> scalars(std::initializer_list<double> v) {
  std::vector<StateVector> out;
  for (double x : v) out.push_back(StateVector::Constant(1, x));
  return out;
}

std::string error_text(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(Nmse, Examples) {
  EXPECT_DOUBLE_EQ(nmse_vs_reference(scalars({1.0}), scalars({2.0})), 0.25);
  const auto truth = scalars({1.0, -2.0, 3.0});
  EXPECT_EQ(nmse_vs_reference(truth, truth), 0.0);
  EXPECT_DOUBLE_EQ(nmse_vs_reference(scalars({0.0, 0.0, 0.0}), truth), 1.0);
  // reference differs from the denominator trajectory
  EXPECT_DOUBLE_EQ(nmse_vs_reference(scalars({0.0, 0.0}), scalars({1.0, 1.0}), scalars({2.0, 0.0})), 0.5);
}

TEST(Nmse, AppendingExactStepsNeverIncreases) {
  RngStream r(1);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<StateVector> est;
    std::vector<StateVector> truth;
    for (int t = 0; t < 5; ++t) {
      est.push_back(Eigen::VectorXd::NullaryExpr(3, [&] { return r.normal(); }));
      truth.push_back(Eigen::VectorXd::NullaryExpr(3, [&] { return r.normal(); }));
    }
    const double before = nmse_vs_reference(est, truth);
    const StateVector x = Eigen::VectorXd::NullaryExpr(3, [&] { return r.normal(); });
    est.push_back(x);
    truth.push_back(x);
    EXPECT_LE(nmse_vs_reference(est, truth), before);
  }
}

TEST(Nmse, Errors) {
  EXPECT_EQ(error_code([] { (void)nmse_vs_reference(scalars({1.0}), scalars({0.0})); }), Errc::ZeroDenominator);
  EXPECT_EQ(error_code([] { (void)nmse_vs_reference(scalars({1.0}), scalars({1.0, 2.0})); }), Errc::DimensionMismatch);
  std::vector<StateVector> two{StateVector::Ones(2)};
  EXPECT_EQ(error_code([&] { (void)nmse_vs_reference(scalars({1.0}), two); }), Errc::DimensionMismatch);
}

TEST(Csv, HeaderOnlyAndRows) {
  CsvTable empty({"a", "b"});
  EXPECT_EQ(empty.str(), "a,b\n");
  CsvTable t({"k", "v"});
  t.add({"1", format_double(0.5)});
  t.add({"2", format_double(1e-12)});
  EXPECT_EQ(t.str(), "k,v\n1,0.5\n2,1e-12\n");
  EXPECT_EQ(error_code([&] { t.add({"only one"}); }), Errc::DimensionMismatch);

  const auto path = (std::filesystem::temp_directory_path() / "nupf_test_table.csv").string();
  csv_write(path, empty);
  EXPECT_EQ(slurp(path), "a,b\n");
  std::filesystem::remove(path);
  EXPECT_EQ(error_code([&] { t.write("/nonexistent-dir/x.csv"); }), Errc::Io);
}

TEST(Config, RoundTripForEveryExperiment) {
  for (const auto& id : experiment_ids()) {
    const Config c = default_config(id);
    const Config back = Config::parse(c.dump());
    EXPECT_EQ(back, c) << id;
    EXPECT_EQ(Config::parse(back.dump()).dump(), c.dump()) << id;
  }
}

TEST(Config, ParseErrorsNameKeyOrLine) {
  const std::string bad_key = error_text([] { (void)Config::parse("seed = 1\nbad key! = 3\n", "cfg"); });
  EXPECT_NE(bad_key.find("bad key!"), std::string::npos) << bad_key;
  EXPECT_NE(bad_key.find("cfg:2"), std::string::npos) << bad_key;

  const std::string no_eq = error_text([] { (void)Config::parse("# comment\nrunsonly\n", "cfg"); });
  EXPECT_NE(no_eq.find("cfg:2"), std::string::npos) << no_eq;

  const std::string dup = error_text([] { (void)Config::parse("a = 1\na = 2\n", "cfg"); });
  EXPECT_NE(dup.find("duplicate key 'a'"), std::string::npos) << dup;

  const Config c = Config::parse("experiment = bias-ratio\nruns = many\n", "cfg");
  const std::string typed = error_text([&] { (void)c.get_int("runs", 1); });
  EXPECT_NE(typed.find("runs"), std::string::npos) << typed;
  EXPECT_NE(typed.find("cfg:2"), std::string::npos) << typed;
  EXPECT_EQ(error_code([&] { (void)c.get_int("runs", 1); }), Errc::ConfigParse);
  EXPECT_EQ(error_code([] { (void)default_config("no-such-experiment"); }), Errc::ConfigParse);
}

TEST(Config, NudgeSectionRoundTrip) {
  const Config d = default_config("tracking");
  const NudgeConfig n = nudge_for(d, 500);
  EXPECT_EQ(n.selector.budget, 22);
  EXPECT_EQ(n.selector.scheme, SelectionScheme::Batch);
  Config c;
  nudge_to_config(c, "nudge", n);
  const NudgeConfig back = nudge_from_config(c, "nudge", NudgeConfig{});
  EXPECT_EQ(to_key_values(back), to_key_values(n));
}

TEST(Config, RateGuardWarnings) {
  Config c = Config::parse("experiment = bias-ratio\nnudge.M = 50\nparticles = 100,10000\n");
  const auto warnings = rate_warnings(effective_config(c));
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("N=100"), std::string::npos) << warnings[0];
  EXPECT_TRUE(rate_warnings(default_config("bias-ratio")).empty());
}

Config small(const std::string& id, const std::string& extra) {
  return Config::parse("experiment = " + id + "\n" + extra);
}

std::vector<Config> small_configs() {
  return {
      small("lg-optimal-compare", "runs = 4\nhorizon = 10\ndx = 6\ndy = 3\nparticles = 50\n"),
      small("bias-ratio", "runs = 6\nparticles = 20,40\nhorizon = 5\n"),
      small("tracking", "runs = 3\nhorizon = 20\nparticles = 50\n"),
      small("lorenz96-bpf", "runs = 3\ndim = 8\nparticles = 20\nhorizon = 50\nburn_in = 10\n"),
      small("evidence-compare", "runs = 5\nhorizon = 10\nparticles = 30\n"),
      small("sv-npf", "runs = 3\nhorizon = 20\nouter = 4\nparticles = 10\n"),
      small("sv-pmh", "runs = 2\nhorizon = 20\nparticles = 10\niterations = 20\nburn_in = 5\n"),
  };
}

TEST(Reproducibility, SummaryIndependentOfThreadCount) {
  for (Config c : small_configs()) {
    const std::string id = c.require_string("experiment");
    c.set("threads", "1");
    const auto one = execute_experiment(c);
    c.set("threads", "3");
    const auto three = execute_experiment(c);
    const auto again = execute_experiment(c);
    EXPECT_EQ(summary_table(one).str(), summary_table(three).str()) << id;
    EXPECT_EQ(runs_table(one).str(), runs_table(three).str()) << id;
    EXPECT_EQ(summary_table(three).str(), summary_table(again).str()) << id;
    for (std::size_t k = 0; k < one.tables.size(); ++k) EXPECT_EQ(one.tables[k].second.str(), three.tables[k].second.str());
  }
}

TEST(Reproducibility, WrittenFilesAreByteIdentical) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "nupf_test_out";
  fs::remove_all(dir);
  Config c = small("bias-ratio", "runs = 4\nparticles = 20\nhorizon = 5\n");
  c.set("output_dir", (dir / "a").string());
  std::vector<std::string> first;
  (void)run_experiment(c, &first);
  c.set("output_dir", (dir / "b").string());
  std::vector<std::string> second;
  (void)run_experiment(c, &second);
  ASSERT_EQ(first.size(), second.size());
  for (std::size_t i = 0; i < first.size(); ++i) {
    const std::string name = fs::path(first[i]).filename().string();
    if (name.find("timing") != std::string::npos || name.find("config") != std::string::npos) continue;
    EXPECT_EQ(slurp(first[i]), slurp(second[i])) << name;
  }
  const std::string running = slurp((dir / "a" / "bias-ratio_running_mean.csv").string());
  EXPECT_EQ(running.substr(0, running.find('\n')), "k,ratio.bpf.N20,ratio.nupf.N20");
  const Config saved = Config::load((dir / "a" / "bias-ratio_config.txt").string());
  EXPECT_EQ(saved.get_int("runs", 0), 4);
  fs::remove_all(dir);
}

TEST(Reproducibility, SeedsDiffer) {
  Config c = small("bias-ratio", "runs = 3\nparticles = 20\nhorizon = 5\n");
  const auto a = execute_experiment(c);
  c.set("seed", "7");
  const auto b = execute_experiment(c);
  EXPECT_NE(summary_table(a).str(), summary_table(b).str());
}

TEST(Runtime, PerFilterTimesAccountForWallClock) {
  Config c = small("lg-optimal-compare", "runs = 3\nhorizon = 50\nparticles = 200\n");
  const auto res = execute_experiment(c);
  double total = 0.0;
  for (const auto& r : res.runs) {
    for (const auto& [k, s] : r.runtimes) total += s;
  }
  EXPECT_GT(total, 0.95 * res.wall_seconds);
  EXPECT_LE(total, res.wall_seconds);
  const auto timing = timing_table(res).str();
  EXPECT_NE(timing.find("nupf.runtime_x_nmse"), std::string::npos);
}

double two_sided_p(const std::vector<double>& d) {
  const double p = stats::one_sample_t_greater(d, 0.0).p_value;
  return 2.0 * std::min(p, 1.0 - p);
}

std::vector<double> evidence_differences(double eps, const NudgeOperator& op, int runs) {
  const auto spec = scalar_random_walk_spec(1.0, 1.0);
  const auto m = build_linear_gaussian(spec).model;
  std::vector<double> d;
  for (int k = 0; k < runs; ++k) {
    const RngStream rng(run_seed(99, static_cast<std::size_t>(k)));
    const auto traj = simulate(m, 20, rng.split(1));
    const auto ev = evidence_compare(m, op, eps, traj.observations, 50, rng.split(2));
    d.push_back(ev.log_z1 - ev.log_z0);
  }
  return d;
}

TEST(EvidenceCompare, InactiveNudgeIsIndistinguishable) {
  EXPECT_GT(two_sided_p(evidence_differences(0.0, NudgeOperator::thresholded(0.5, 0.5), 300)), 0.01);
  EXPECT_GT(two_sided_p(evidence_differences(1.0, NudgeOperator::gradient(0.0, true), 300)), 0.01);
}

TEST(DataPath, ResolvesBundledSeries) {
  const auto y = load_returns("data/sv_prices.csv", 500);
  EXPECT_EQ(y.size(), 500u);
  EXPECT_EQ(error_code([] { (void)load_returns("data/missing.csv", 10); }), Errc::Io);
}

}  // namespace
