// Acceptance suite: one PASS/FAIL line per criterion. Optional arguments
// select criteria by number, e.g. `acceptance 3 6`.

#include <cmath>
#include <cstdio>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_bin_float.hpp>

#include "test_util.hpp"

namespace {

using namespace nupf;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

Config experiment(const std::string& id, const std::string& overrides) {
  Config c = Config::parse("experiment = " + id + "\n" + overrides);
  return c;
}

// Z/Z* on the two-dimensional model, shared by criteria 1 and 2.
const ExperimentResult& bias_ratio() {
  static const ExperimentResult res = execute_experiment(experiment("bias-ratio", "runs = 5000\n"));
  return res;
}

Verdict ac1() {
  const auto r = bias_ratio().column("ratio.bpf.N100");
  const double m = stats::mean(r);
  const double se = stats::std_error(r);
  return {std::abs(m - 1.0) <= 3.0 * se, "mean Z/Z* = " + fmt(m) + ", SE = " + fmt(se) + ", K = " + std::to_string(r.size())};
}

Verdict ac2() {
  const auto r100 = bias_ratio().column("ratio.nupf.N100");
  const auto r1000 = bias_ratio().column("ratio.nupf.N1000");
  const double m100 = stats::mean(r100);
  const double m1000 = stats::mean(r1000);
  std::vector<double> e100;
  std::vector<double> e1000;
  for (std::size_t k = 0; k < r100.size(); ++k) {
    e100.push_back(std::abs(r100[k] - 1.0));
    e1000.push_back(std::abs(r1000[k] - 1.0));
  }
  const double excess100 = m100 - 1.0;
  const double excess1000 = m1000 - 1.0;
  const double p_above = stats::one_sample_t_greater(r100, 1.0).p_value;
  const double p_paired = stats::paired_t_greater(r100, r1000).p_value;
  const bool pass = m100 > 1.0 && excess1000 < excess100;
  return {pass, "mean Z/Z* N=100: " + fmt(m100) + " (p>1: " + fmt(p_above, 3) + "), N=1000: " + fmt(m1000) +
                    "; paired excess difference p = " + fmt(p_paired, 3) + "; mean |Z/Z*-1| " + fmt(stats::mean(e100)) +
                    " -> " + fmt(stats::mean(e1000))};
}

Verdict ac3() {
  const auto spec = nupf::testing::scalar_lg_spec(1.0, 1.0);
  const auto model = build_linear_gaussian(spec).model;
  const std::vector<double> sizes{50.0, 200.0, 800.0};
  std::vector<double> nmse;
  std::vector<double> root;
  for (double nd : sizes) {
    const int n = static_cast<int>(nd);
    FilterSetup setup;
    setup.kind = FilterKind::Nupf;
    setup.particles = n;
    setup.nudge = {{SelectionScheme::Batch, auto_budget(-1, n)}, NudgeOperator::gradient(0.5, true)};
    std::vector<double> per_run;
    for (int k = 0; k < 200; ++k) {
      const RngStream rng(run_seed(3003, static_cast<std::size_t>(k)));
      const Trajectory traj = simulate(model, 50, rng.split(1));
      const KalmanResult kf = kalman_filter(spec, traj.observations);
      const FilterOutput out = run_filter(model, traj.observations, setup, rng.split(2, static_cast<std::uint64_t>(n)));
      per_run.push_back(nmse_vs_reference(out.means, kf.means, traj.states));
    }
    nmse.push_back(stats::mean(per_run));
    root.push_back(std::sqrt(nmse.back()));
  }
  const double slope_root = stats::loglog_slope(sizes, root);
  const double slope_nmse = stats::loglog_slope(sizes, nmse);
  const bool pass = slope_root >= -0.65 && slope_root <= -0.35;
  return {pass, "slope(sqrt NMSE) = " + fmt(slope_root) + ", slope(NMSE) = " + fmt(slope_nmse) + "; NMSE " +
                    fmt(nmse[0]) + ", " + fmt(nmse[1]) + ", " + fmt(nmse[2])};
}

double mean_runtime(const ExperimentResult& res, const std::string& key) {
  double total = 0.0;
  for (const auto& r : res.runs) {
    for (const auto& [k, s] : r.runtimes) {
      if (k == key) total += s;
    }
  }
  return total / static_cast<double>(res.runs.size());
}

Verdict ac4() {
  const auto res = execute_experiment(experiment("lg-optimal-compare", "runs = 200\nfilters = bpf,nupf,optimal\n"));
  const auto opt = res.column("nmse.optimal");
  const auto nu = res.column("nmse.nupf");
  const auto bpf = res.column("nmse.bpf");
  const double p1 = stats::paired_t_greater(nu, opt).p_value;
  const double p2 = stats::paired_t_greater(bpf, nu).p_value;
  const double t_nu = mean_runtime(res, "nupf");
  const double t_bpf = mean_runtime(res, "bpf");
  const bool pass = stats::mean(opt) <= stats::mean(nu) && stats::mean(nu) <= stats::mean(bpf) && p1 < 0.05 &&
                    p2 < 0.05 && t_nu <= 1.2 * t_bpf;
  return {pass, "NMSE optimal " + fmt(stats::mean(opt)) + " <= nupf " + fmt(stats::mean(nu)) + " (p = " + fmt(p1, 3) +
                    ") <= bpf " + fmt(stats::mean(bpf)) + " (p = " + fmt(p2, 3) + "); runtime nupf/bpf = " +
                    fmt(t_nu / t_bpf, 3)};
}

Verdict ac5() {
  const auto res = execute_experiment(experiment("lorenz63-misspec", "runs = 100\n"));
  const auto nu = res.column("nmse.nupf.N500");
  const auto bpf = res.column("nmse.bpf.N500");
  const double p = stats::paired_t_greater(bpf, nu).p_value;
  return {stats::mean(nu) < stats::mean(bpf) && p < 0.05,
          "NMSE nupf " + fmt(stats::mean(nu)) + " < bpf " + fmt(stats::mean(bpf)) + ", paired p = " + fmt(p, 3)};
}

Verdict ac6() {
  std::ostringstream detail;
  bool pass = true;
  for (const auto& nm : nupf::testing::bundled_models()) {
    RngStream r(run_seed(6006, nm.name.size()));
    int rs = 0;
    int th = 0;
    for (int k = 0; k < 10000; ++k) {
      auto [x, y] = nm.draw(r);
      const double base = nm.model.log_likelihood(y, x);
      rs += nm.model.log_likelihood(y, nudge_random_search(x, nm.model, y, 1.0, 20, r)) < base ? 1 : 0;
      th += nm.model.log_likelihood(y, nudge_thresholded(x, nm.model, y, 5.0, 0.0)) < base ? 1 : 0;
    }
    pass = pass && rs == 0 && th == 0;
    detail << nm.name << " " << rs << "/" << th << "; ";
  }
  return {pass, "violations (random_search/thresholded) over 10^4 draws: " + detail.str()};
}

Verdict ac7() {
  const auto res = execute_experiment(experiment("evidence-compare", "runs = 500\n"));
  const auto z1 = res.column("log_z1");
  const auto z0 = res.column("log_z0");
  const double p = stats::paired_t_greater(z1, z0).p_value;
  return {stats::mean(z1) >= stats::mean(z0) && p < 0.05,
          "mean log Z1 = " + fmt(stats::mean(z1), 6) + ", log Z0 = " + fmt(stats::mean(z0), 6) + ", paired p = " + fmt(p, 3)};
}

Verdict ac8() {
  const auto res = execute_experiment(experiment("lorenz96-bpf", "runs = 50\n"));
  bool pass = true;
  std::string detail;
  for (int n : {100, 400}) {
    const std::string s = ".d40.N" + std::to_string(n);
    const auto nu = res.column("nmse.nupf" + s);
    const auto bpf = res.column("nmse.bpf" + s);
    pass = pass && stats::mean(nu) < stats::mean(bpf);
    detail += "N=" + std::to_string(n) + ": nupf " + fmt(stats::mean(nu)) + " vs bpf " + fmt(stats::mean(bpf)) +
              " (paired p = " + fmt(stats::paired_t_greater(bpf, nu).p_value, 3) + "); ";
  }
  return {pass, detail};
}

Verdict ac9() {
  const auto npf = execute_experiment(experiment("sv-npf", "runs = 100\n"));
  const auto ev_nu = npf.column("log_evidence.nupf");
  const auto ev_bpf = npf.column("log_evidence.bpf");
  const double p_var = stats::brown_forsythe_less(ev_nu, ev_bpf).p_value;
  const bool a = stats::variance(ev_nu) < stats::variance(ev_bpf) && p_var < 0.05;

  const auto pmh = execute_experiment(experiment("sv-pmh", "runs = 20\n"));
  const auto acc_nu = pmh.column("acceptance.nupf");
  const auto acc_bpf = pmh.column("acceptance.bpf");
  const double p_acc = stats::paired_t_greater(acc_nu, acc_bpf).p_value;
  const bool b = stats::mean(acc_nu) > stats::mean(acc_bpf) && p_acc < 0.05;
  return {a && b, "(a) var log Z nupf " + fmt(stats::variance(ev_nu)) + " < bpf " + fmt(stats::variance(ev_bpf)) +
                      ", p = " + fmt(p_var, 3) + (a ? "" : " [fail]") + "; (b) acceptance nupf " +
                      fmt(stats::mean(acc_nu), 3) + " > bpf " + fmt(stats::mean(acc_bpf), 3) + ", paired p = " +
                      fmt(p_acc, 3) + (b ? "" : " [fail]") + "; wall " + fmt(npf.wall_seconds + pmh.wall_seconds, 4) + " s"};
}

using Big = boost::multiprecision::number<boost::multiprecision::cpp_bin_float<256>>;

Verdict ac10() {
  bool pass = true;
  std::ostringstream detail;
  for (const auto& nm : nupf::testing::bundled_models()) {
    const double log_err = nupf::testing::worst_log_gradient_error(nm, 100, RngStream(run_seed(1010, 1)));
    int used = 0;
    const double err = nupf::testing::worst_gradient_error(nm, 100, RngStream(run_seed(1010, 2)), &used);
    pass = pass && log_err < 1e-4 && err < 1e-4 && used > 0;
    detail << nm.name << " " << fmt(std::max(log_err, err), 2) << "; ";
  }
  RngStream r(run_seed(1010, 3));
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + r.below(100);
    std::vector<double> raw(n);
    for (auto& w : raw) w = (trial % 2 == 0 ? -1000.0 : 0.0) + 40.0 * (r.uniform() - 0.5);
    Big acc = 0;
    for (double w : raw) acc += boost::multiprecision::exp(Big(w));
    const Big log_sum = boost::multiprecision::log(acc);
    const auto got = normalize_log_weights(raw);
    worst = std::max(worst, std::abs(got.log_sum - static_cast<double>(log_sum)));
    for (std::size_t i = 0; i < n; ++i) {
      worst = std::max(worst, std::abs(got.log_weights[i] - static_cast<double>(Big(raw[i]) - log_sum)));
    }
  }
  pass = pass && worst < 1e-10;
  return {pass, "worst gradient relative error: " + detail.str() + "normalisation error vs 256-bit oracle " + fmt(worst, 3)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Verdict (*)()> criteria{ac1, ac2, ac3, ac4, ac5, ac6, ac7, ac8, ac9, ac10};
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && selected.count(id) == 0) continue;
    const Stopwatch sw;
    Verdict v;
    try {
      v = criteria[i]();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failures += v.pass ? 0 : 1;
    std::cout << "AC" << id << ' ' << (v.pass ? "PASS" : "FAIL") << ": " << v.detail << " [" << fmt(sw.seconds(), 3)
              << " s]" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
