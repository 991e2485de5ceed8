#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "nupf/core.hpp"
#include "nupf/filters/run.hpp"
#include "nupf/harness/config.hpp"
#include "nupf/harness/metrics.hpp"
#include "nupf/inference.hpp"
#include "nupf/models/linear_gaussian.hpp"
#include "nupf/models/lorenz.hpp"
#include "nupf/models/stochvol.hpp"
#include "nupf/models/tracking.hpp"
#include "nupf/nudging.hpp"
#include "nupf/rng.hpp"
#include "nupf/simulate.hpp"
#include "nupf/stats.hpp"

namespace nupf {

inline const std::vector<std::string>& experiment_ids() {
  static const std::vector<std::string> ids{
      "lg-optimal-compare", "lorenz63-misspec", "nudge-robustness-sweep", "tracking", "lorenz96-bpf",
      "lorenz96-enkf",      "bias-ratio",       "evidence-compare",       "sv-npf",   "sv-pmh"};
  return ids;
}

struct RunRecord {
  int run = 0;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, double>> values;
  std::vector<std::pair<std::string, double>> runtimes;  // seconds
  int degenerate_steps = 0;

  void put(const std::string& k, double v) { values.emplace_back(k, v); }
  void time(const std::string& k, double s) { runtimes.emplace_back(k, s); }
  [[nodiscard]] double get(const std::string& k) const {
    for (const auto& [name, v] : values) {
      if (name == k) return v;
    }
    throw Error(Errc::InvalidParam, "run record has no value '" + k + "'");
  }
};

struct ExperimentResult {
  std::string id;
  Config config;
  std::vector<RunRecord> runs;
  std::vector<std::pair<std::string, CsvTable>> tables;  // extra outputs, by file suffix
  std::vector<std::string> warnings;
  double wall_seconds = 0.0;

  [[nodiscard]] std::vector<double> column(const std::string& key) const {
    std::vector<double> out;
    out.reserve(runs.size());
    for (const auto& r : runs) out.push_back(r.get(key));
    return out;
  }
};

// ---------------------------------------------------------------------------
// Default configurations
// ---------------------------------------------------------------------------

namespace detail {

inline void common_defaults(Config& c, const std::string& id, int runs) {
  c.set("experiment", id);
  c.set("seed", "20240601");
  c.set("runs", std::to_string(runs));
  c.set("threads", "1");
  c.set("output_dir", "results");
}

inline void nudge_defaults(Config& c, SelectionScheme scheme, double gamma, bool use_log, double kappa = 0.0) {
  NudgeConfig n;
  n.selector.scheme = scheme;
  n.selector.budget = -1;  // floor(sqrt(N))
  n.op = NudgeOperator::gradient(gamma, use_log);
  n.op.velocity_kappa = kappa;
  for (const auto& [k, v] : to_key_values(n)) c.set("nudge." + k, v);
}

}  // namespace detail

inline Config default_config(const std::string& id) {
  Config c;
  if (id == "lg-optimal-compare") {
    detail::common_defaults(c, id, 200);
    c.set("dx", "20");
    c.set("dy", "8");
    c.set("q", "0.1");
    c.set("horizon", "100");
    c.set("particles", "100");
    c.set("filters", "bpf,nupf,nupf_pw,optimal");
    c.set("pw.gamma", "0.02");
    detail::nudge_defaults(c, SelectionScheme::Independent, 0.02, true);
  } else if (id == "lorenz63-misspec") {
    detail::common_defaults(c, id, 100);
    c.set("particles", "500");
    c.set("horizon", "4000");
    c.set("step", "0.001");
    c.set("obs_every", "40");
    c.set("obs_scale", "0.8");
    c.set("obs_noise_var", "1");
    c.set("b_offset", "0.75");
    c.set("filters", "bpf,nupf");
    detail::nudge_defaults(c, SelectionScheme::Independent, 0.75, true);
  } else if (id == "nudge-robustness-sweep") {
    detail::common_defaults(c, id, 20);
    c.set("particles", "500");
    c.set("horizon", "4000");
    c.set("step", "0.001");
    c.set("obs_every", "40");
    c.set("b_offset", "0.75");
    c.set("gamma_grid", "0.01,0.05,0.1,0.25,0.5,0.75,1");
    c.set("sigma2_grid", "0.01,0.05,0.1,0.5,1,2");
    c.set("max_tries", "50");
    detail::nudge_defaults(c, SelectionScheme::Independent, 0.75, true);
  } else if (id == "tracking") {
    detail::common_defaults(c, id, 100);
    c.set("particles", "500");
    c.set("horizon", "300");
    c.set("filters", "bpf,nupf,apf,ekf");
    detail::nudge_defaults(c, SelectionScheme::Batch, 5.5, true, 0.04);
  } else if (id == "lorenz96-bpf") {
    detail::common_defaults(c, id, 50);
    c.set("dim", "40");
    c.set("particles", "100,400");
    c.set("horizon", "1000");
    c.set("step", "0.01");
    c.set("obs_every", "10");
    c.set("burn_in", "1000");
    c.set("filters", "bpf,nupf");
    detail::nudge_defaults(c, SelectionScheme::Batch, 0.075, true);
  } else if (id == "lorenz96-enkf") {
    detail::common_defaults(c, id, 20);
    c.set("dim", "10,20,40");
    c.set("particles", "100");
    c.set("horizon", "1000");
    c.set("step", "0.01");
    c.set("obs_every", "10");
    c.set("burn_in", "1000");
    c.set("filters", "enkf,nupf");
    detail::nudge_defaults(c, SelectionScheme::Batch, 0.075, true);
  } else if (id == "bias-ratio") {
    detail::common_defaults(c, id, 5000);
    c.set("horizon", "25");
    c.set("particles", "100,1000");
    c.set("filters", "bpf,nupf");
    detail::nudge_defaults(c, SelectionScheme::Independent, 0.1, true);
  } else if (id == "evidence-compare") {
    detail::common_defaults(c, id, 500);
    c.set("horizon", "50");
    c.set("particles", "100");
    c.set("q", "1");
    c.set("r", "1");
    c.set("eps", "1");
    c.set("gamma", "0.5");
    c.set("threshold", "0.5");
  } else if (id == "sv-npf") {
    detail::common_defaults(c, id, 100);
    c.set("data", "data/sv_prices.csv");
    c.set("horizon", "500");
    c.set("outer", "50");
    c.set("particles", "50");
    c.set("filters", "bpf,nupf");
    c.set("jitter.mu", "0.001");
    c.set("jitter.sigma_v", "0.0001");
    c.set("jitter.phi", "0.0001");
    detail::nudge_defaults(c, SelectionScheme::Batch, 4.0, false);
  } else if (id == "sv-pmh") {
    detail::common_defaults(c, id, 20);
    c.set("data", "data/sv_prices.csv");
    c.set("horizon", "500");
    c.set("particles", "100");
    c.set("iterations", "2000");
    c.set("burn_in", "200");
    c.set("filters", "bpf,nupf");
    c.set("init.mu", "0");
    c.set("init.sigma_v", "0.1");
    c.set("init.phi", "0.95");
    c.set("proposal.mu", "0.01");
    c.set("proposal.sigma_v", "0.001");
    c.set("proposal.phi", "0.001");
    detail::nudge_defaults(c, SelectionScheme::Batch, 0.1, true);
  } else {
    throw Error(Errc::ConfigParse, "unknown experiment '" + id + "'");
  }
  return c;
}

/// Defaults for `user`'s experiment overlaid with its keys. Unknown keys are errors.
inline Config effective_config(const Config& user) {
  const std::string id = user.require_string("experiment");
  Config c = default_config(id);
  for (const auto& k : user.keys()) {
    if (!c.has(k)) throw Error(Errc::ConfigParse, "unknown key '" + k + "' for experiment '" + id + "'");
    c.set(k, user.get_string(k, ""));
  }
  return c;
}

// ---------------------------------------------------------------------------
// Helpers
// ---------------------------------------------------------------------------

inline FilterKind parse_filter_kind(const std::string& name) {
  static const std::map<std::string, FilterKind> kinds{
      {"bpf", FilterKind::Bpf},         {"nupf", FilterKind::Nupf}, {"nupf_pw", FilterKind::NupfPw},
      {"optimal", FilterKind::Optimal}, {"apf", FilterKind::Apf},   {"kalman", FilterKind::Kalman},
      {"ekf", FilterKind::Ekf},         {"enkf", FilterKind::Enkf}};
  const auto it = kinds.find(name);
  if (it == kinds.end()) throw Error(Errc::ConfigParse, "unknown filter '" + name + "'");
  return it->second;
}

inline int auto_budget(int budget, int particles) {
  return budget >= 0 ? budget : static_cast<int>(std::floor(std::sqrt(static_cast<double>(particles))));
}

inline NudgeConfig nudge_for(const Config& c, int particles) {
  NudgeConfig n = nudge_from_config(c, "nudge", NudgeConfig{});
  n.selector.budget = auto_budget(n.selector.budget, particles);
  return n;
}

inline FilterSetup make_setup(FilterKind kind, int particles, const NudgeConfig& nudge) {
  FilterSetup s;
  s.kind = kind;
  s.particles = particles;
  s.nudge = nudge;
  return s;
}

inline std::string resolve_data_path(const std::string& path) {
  namespace fs = std::filesystem;
  if (fs::path(path).is_absolute() || fs::exists(path)) return path;
  if (const char* dir = std::getenv("NUPF_DATA_DIR")) {
    const fs::path p = fs::path(dir) / fs::path(path).filename();
    if (fs::exists(p)) return p.string();
  }
#ifdef NUPF_SOURCE_DIR
  const fs::path p = fs::path(NUPF_SOURCE_DIR) / path;
  if (fs::exists(p)) return p.string();
#endif
  return path;
}

inline std::vector<Observation> load_returns(const std::string& path, int horizon) {
  const PriceSeries series = read_price_csv(resolve_data_path(path));
  std::vector<Observation> y = log_return_preprocess(series.prices);
  if (horizon > 0 && static_cast<std::size_t>(horizon) < y.size()) y.resize(static_cast<std::size_t>(horizon));
  return y;
}

/// Truth states at the epochs the filter produced estimates for.
inline double nmse_or_nan(const FilterOutput& out, const std::vector<StateVector>& reference,
                          const std::vector<StateVector>& truth) {
  for (const auto& m : out.means) {
    if (!m.allFinite()) return std::numeric_limits<double>::quiet_NaN();
  }
  return nmse_vs_reference(out.means, reference, truth);
}

template <typename F>
double timed(F&& f) {
  const Stopwatch sw;
  f();
  return sw.seconds();
}

// ---------------------------------------------------------------------------
// Individual experiments. Each returns one record per run.
// ---------------------------------------------------------------------------

/// High-dimensional linear-Gaussian comparison; NMSE against the Kalman means.
inline RunRecord run_lg_compare(const Config& c, const RngStream& rng) {
  const int dx = static_cast<int>(c.get_int("dx", 20));
  const int dy = static_cast<int>(c.get_int("dy", 8));
  const int horizon = static_cast<int>(c.get_int("horizon", 100));
  const int n = static_cast<int>(c.get_int("particles", 100));
  RngStream spec_rng = rng.split(0);
  const LinearGaussianSpec spec = high_dimensional_lg_spec(dx, dy, c.get_double("q", 0.1), horizon, spec_rng);
  const LinearGaussianModel lg = build_linear_gaussian(spec);
  const Trajectory traj = simulate(lg.model, horizon, rng.split(1));
  const KalmanResult kf = kalman_filter(spec, traj.observations);
  RunRecord rec;
  const NudgeConfig nudge = nudge_for(c, n);
  for (const auto& name : c.get_strings("filters", {})) {
    FilterSetup setup = make_setup(parse_filter_kind(name), n, nudge);
    setup.linear_gaussian = &spec;
    setup.pw_gamma = c.get_double("pw.gamma", 0.02);
    FilterOutput out;
    rec.time(name, timed([&] { out = run_filter(lg.model, traj.observations, setup, rng.split(2)); }));
    rec.put("nmse." + name, nmse_or_nan(out, kf.means, traj.states));
    rec.degenerate_steps += out.degenerate_steps;
  }
  return rec;
}

inline Lorenz63Spec lorenz63_from(const Config& c) {
  Lorenz63Spec s;
  s.step = c.get_double("step", s.step);
  s.obs_every = static_cast<int>(c.get_int("obs_every", s.obs_every));
  s.obs_scale = c.get_double("obs_scale", s.obs_scale);
  s.obs_noise_var = c.get_double("obs_noise_var", s.obs_noise_var);
  return s;
}

/// Lorenz 63 with a misspecified filter model; NMSE against the truth.
inline RunRecord run_lorenz63(const Config& c, const RngStream& rng) {
  const Lorenz63Spec truth_spec = lorenz63_from(c);
  const Lorenz63Spec filter_spec = truth_spec.misspecified(c.get_double("b_offset", 0.75));
  const int n_obs = static_cast<int>(c.get_int("horizon", 4000)) / truth_spec.obs_every;
  const Trajectory traj = simulate(build_lorenz63(truth_spec), n_obs, rng.split(1));
  const StateSpaceModel model = build_lorenz63(filter_spec);
  RunRecord rec;
  for (int n : c.get_ints("particles", {500})) {
    const NudgeConfig nudge = nudge_for(c, n);
    for (const auto& name : c.get_strings("filters", {})) {
      const FilterSetup setup = make_setup(parse_filter_kind(name), n, nudge);
      FilterOutput out;
      const std::string key = name + ".N" + std::to_string(n);
      rec.time(key, timed([&] { out = run_filter(model, traj.observations, setup, rng.split(2)); }));
      rec.put("nmse." + key, nmse_or_nan(out, traj.states, traj.states));
      rec.degenerate_steps += out.degenerate_steps;
    }
  }
  return rec;
}

/// Gradient step-size and random-search variance grids on Lorenz 63.
inline RunRecord run_robustness_sweep(const Config& c, const RngStream& rng) {
  const Lorenz63Spec truth_spec = lorenz63_from(c);
  const Lorenz63Spec filter_spec = truth_spec.misspecified(c.get_double("b_offset", 0.75));
  const int n_obs = static_cast<int>(c.get_int("horizon", 4000)) / truth_spec.obs_every;
  const Trajectory traj = simulate(build_lorenz63(truth_spec), n_obs, rng.split(1));
  const StateSpaceModel model = build_lorenz63(filter_spec);
  const int n = static_cast<int>(c.get_int("particles", 500));
  const NudgeConfig base = nudge_for(c, n);
  RunRecord rec;
  auto run_one = [&](const std::string& key, FilterKind kind, const NudgeConfig& nudge) {
    FilterOutput out;
    rec.time(key, timed([&] { out = run_filter(model, traj.observations, make_setup(kind, n, nudge), rng.split(2)); }));
    rec.put("nmse." + key, nmse_or_nan(out, traj.states, traj.states));
    rec.degenerate_steps += out.degenerate_steps;
  };
  run_one("bpf", FilterKind::Bpf, base);
  for (double g : c.get_doubles("gamma_grid", {})) {
    NudgeConfig nc = base;
    nc.op = NudgeOperator::gradient(g, base.op.use_log);
    run_one("gradient.g" + format_double(g), FilterKind::Nupf, nc);
  }
  for (double s2 : c.get_doubles("sigma2_grid", {})) {
    NudgeConfig nc = base;
    nc.op = NudgeOperator::random_search(s2, static_cast<int>(c.get_int("max_tries", 50)));
    run_one("random_search.s" + format_double(s2), FilterKind::Nupf, nc);
  }
  return rec;
}

/// Maneuvering target with RSS sensors; NMSE against the truth.
inline RunRecord run_tracking(const Config& c, const RngStream& rng) {
  const TrackingModels models = build_tracking(TrackingSpec{});
  const int horizon = static_cast<int>(c.get_int("horizon", 300));
  const Trajectory traj = simulate(models.truth, horizon, rng.split(1));
  const int n = static_cast<int>(c.get_int("particles", 500));
  const NudgeConfig nudge = nudge_for(c, n);
  RunRecord rec;
  for (const auto& name : c.get_strings("filters", {})) {
    const FilterSetup setup = make_setup(parse_filter_kind(name), n, nudge);
    FilterOutput out;
    rec.time(name, timed([&] { out = run_filter(models.filter, traj.observations, setup, rng.split(2)); }));
    rec.put("nmse." + name, nmse_or_nan(out, traj.states, traj.states));
    rec.degenerate_steps += out.degenerate_steps;
  }
  return rec;
}

inline Lorenz96Spec lorenz96_from(const Config& c, int dim) {
  Lorenz96Spec s;
  s.dim = dim;
  s.step = c.get_double("step", s.step);
  s.obs_every = static_cast<int>(c.get_int("obs_every", s.obs_every));
  s.burn_in = static_cast<int>(c.get_int("burn_in", s.burn_in));
  return s;
}

/// Lorenz 96 over a grid of dimensions and particle counts.
inline RunRecord run_lorenz96(const Config& c, const RngStream& rng) {
  RunRecord rec;
  for (int dim : c.get_ints("dim", {40})) {
    const Lorenz96Spec spec = lorenz96_from(c, dim);
    const StateSpaceModel model = build_lorenz96(spec);
    const int n_obs = static_cast<int>(c.get_int("horizon", 1000)) / spec.obs_every;
    const Trajectory traj = simulate(model, n_obs, rng.split(1, static_cast<std::uint64_t>(dim)));
    for (int n : c.get_ints("particles", {100})) {
      const NudgeConfig nudge = nudge_for(c, n);
      for (const auto& name : c.get_strings("filters", {})) {
        const FilterSetup setup = make_setup(parse_filter_kind(name), n, nudge);
        FilterOutput out;
        const std::string key = name + ".d" + std::to_string(dim) + ".N" + std::to_string(n);
        rec.time(key, timed([&] { out = run_filter(model, traj.observations, setup, rng.split(2)); }));
        rec.put("nmse." + key, nmse_or_nan(out, traj.states, traj.states));
        rec.degenerate_steps += out.degenerate_steps;
      }
    }
  }
  return rec;
}

/// Evidence ratios Z/Z* on the two-dimensional bias-study model.
inline RunRecord run_bias_ratio(const Config& c, const RngStream& rng) {
  const int horizon = static_cast<int>(c.get_int("horizon", 25));
  RngStream spec_rng = rng.split(0);
  const LinearGaussianSpec spec = bias_study_lg_spec(horizon, spec_rng);
  const LinearGaussianModel lg = build_linear_gaussian(spec);
  const Trajectory traj = simulate(lg.model, horizon, rng.split(1));
  const double log_z = kalman_filter(spec, traj.observations).log_evidence;
  RunRecord rec;
  rec.put("log_z_kalman", log_z);
  for (int n : c.get_ints("particles", {100})) {
    const NudgeConfig nudge = nudge_for(c, n);
    for (const auto& name : c.get_strings("filters", {})) {
      const FilterSetup setup = make_setup(parse_filter_kind(name), n, nudge);
      FilterOutput out;
      const std::string key = name + ".N" + std::to_string(n);
      rec.time(key, timed([&] { out = run_filter(lg.model, traj.observations, setup, rng.split(2, static_cast<std::uint64_t>(n))); }));
      rec.put("ratio." + key, std::exp(out.log_evidence - log_z));
      rec.degenerate_steps += out.degenerate_steps;
    }
  }
  return rec;
}

struct EvidencePair {
  double log_z0 = 0.0;  // original model
  double log_z1 = 0.0;  // implicit nudged model
};

/// Bootstrap-filter evidence of a model and of its observation-driven
/// (nudged) counterpart on the same data and the same random streams.
inline EvidencePair evidence_compare(const StateSpaceModel& model, const NudgeOperator& op, double eps,
                                     const std::vector<Observation>& observations, int particles,
                                     const RngStream& rng) {
  const StateSpaceModel implicit = implicit_model(model, observations, eps, op);
  FilterSetup setup;
  setup.kind = FilterKind::Bpf;
  setup.particles = particles;
  EvidencePair out;
  out.log_z0 = run_filter(model, observations, setup, rng).log_evidence;
  out.log_z1 = run_filter(implicit, observations, setup, rng).log_evidence;
  return out;
}

inline LinearGaussianSpec scalar_random_walk_spec(double q, double r) {
  return LinearGaussianSpec::random_walk(1, 1, q, r, {Eigen::MatrixXd::Ones(1, 1)}, false);
}

inline RunRecord run_evidence_compare(const Config& c, const RngStream& rng) {
  const LinearGaussianSpec spec = scalar_random_walk_spec(c.get_double("q", 1.0), c.get_double("r", 1.0));
  const LinearGaussianModel lg = build_linear_gaussian(spec);
  const Trajectory traj = simulate(lg.model, static_cast<int>(c.get_int("horizon", 50)), rng.split(1));
  const NudgeOperator op = NudgeOperator::thresholded(c.get_double("gamma", 0.5), c.get_double("threshold", 0.5));
  RunRecord rec;
  EvidencePair ev;
  rec.time("both", timed([&] {
    ev = evidence_compare(lg.model, op, c.get_double("eps", 1.0), traj.observations,
                          static_cast<int>(c.get_int("particles", 100)), rng.split(2));
  }));
  rec.put("log_z0", ev.log_z0);
  rec.put("log_z1", ev.log_z1);
  rec.put("difference", ev.log_z1 - ev.log_z0);
  return rec;
}

inline JitterKernel jitter_from(const Config& c) {
  return {c.get_double("jitter.mu", 1e-3), c.get_double("jitter.sigma_v", 1e-4), c.get_double("jitter.phi", 1e-4)};
}

/// Nested particle filter evidence with BPF or NuPF inner filters.
inline RunRecord run_sv_npf(const Config& c, const std::vector<Observation>& y, const RngStream& rng) {
  const int k = static_cast<int>(c.get_int("outer", 50));
  const int n = static_cast<int>(c.get_int("particles", 50));
  const NudgeConfig nudge = nudge_for(c, n);
  RunRecord rec;
  for (const auto& name : c.get_strings("filters", {})) {
    FilterSetup inner = make_setup(parse_filter_kind(name), n, nudge);
    inner.timing = EvidenceTiming::PreNudge;
    double ev = 0.0;
    rec.time(name, timed([&] { ev = npf_evidence(y, k, n, ParamPrior{}, jitter_from(c), inner, rng.split(2)); }));
    rec.put("log_evidence." + name, ev);
  }
  return rec;
}

inline PmhSettings pmh_settings_from(const Config& c, FilterKind kind) {
  PmhSettings s;
  s.initial = {c.get_double("init.mu", 0.0), c.get_double("init.sigma_v", 0.1), c.get_double("init.phi", 0.95)};
  s.proposal_var = {c.get_double("proposal.mu", 1e-2), c.get_double("proposal.sigma_v", 1e-3),
                    c.get_double("proposal.phi", 1e-3)};
  s.iterations = static_cast<int>(c.get_int("iterations", 2000));
  const int n = static_cast<int>(c.get_int("particles", 100));
  s.inner = make_setup(kind, n, nudge_for(c, n));
  s.inner.timing = EvidenceTiming::PostNudge;
  return s;
}

/// Particle Metropolis-Hastings chains with BPF or NuPF likelihood estimates.
inline RunRecord run_sv_pmh(const Config& c, const std::vector<Observation>& y, const RngStream& rng,
                            std::map<std::string, PMHChain>* chains = nullptr) {
  RunRecord rec;
  const auto burn = static_cast<std::ptrdiff_t>(c.get_int("burn_in", 0));
  for (const auto& name : c.get_strings("filters", {})) {
    const PmhSettings s = pmh_settings_from(c, parse_filter_kind(name));
    PMHChain chain;
    rec.time(name, timed([&] { chain = pmh_run(y, ParamPrior{}, s, rng.split(2)); }));
    rec.put("acceptance." + name, acceptance_rate(chain));
    const auto from = std::min<std::ptrdiff_t>(burn, static_cast<std::ptrdiff_t>(chain.samples.size()) - 1);
    double mu = 0.0;
    double sv = 0.0;
    double phi = 0.0;
    for (auto i = static_cast<std::size_t>(from); i < chain.samples.size(); ++i) {
      mu += chain.samples[i].mu;
      sv += chain.samples[i].sigma_v;
      phi += chain.samples[i].phi;
    }
    const double cnt = static_cast<double>(chain.samples.size() - static_cast<std::size_t>(from));
    rec.put("mean_mu." + name, mu / cnt);
    rec.put("mean_sigma_v." + name, sv / cnt);
    rec.put("mean_phi." + name, phi / cnt);
    if (chains != nullptr) (*chains)[name] = std::move(chain);
  }
  return rec;
}

// ---------------------------------------------------------------------------
// Driver
// ---------------------------------------------------------------------------

inline std::vector<std::string> rate_warnings(const Config& c) {
  std::vector<std::string> out;
  if (!c.has("nudge.M")) return out;
  std::vector<int> sizes = c.get_ints("particles", {});
  for (int n : sizes) {
    const NudgeConfig nudge = nudge_for(c, n);
    const RateCheck check = validate_rate_guard(nudge.guard(n));
    if (!check.ok) out.push_back("N=" + std::to_string(n) + ": " + check.message);
  }
  return out;
}

/// Run every configured replicate (in parallel across run indices) and
/// return the records; nothing is written.
inline ExperimentResult execute_experiment(const Config& user) {
  const Config c = effective_config(user);
  ExperimentResult res;
  res.id = c.require_string("experiment");
  res.config = c;
  res.warnings = rate_warnings(c);
  const auto master = static_cast<std::uint64_t>(c.get_int("seed", 0));
  const int runs = static_cast<int>(c.get_int("runs", 1));
  const int threads = static_cast<int>(c.get_int("threads", 1));
  if (runs < 1) throw Error(Errc::ConfigParse, "key 'runs' must be >= 1");

  std::vector<Observation> returns;
  if (res.id == "sv-npf" || res.id == "sv-pmh") {
    returns = load_returns(c.require_string("data"), static_cast<int>(c.get_int("horizon", 0)));
  }
  std::map<std::string, PMHChain> first_chains;

  res.runs.resize(static_cast<std::size_t>(runs));
  const Stopwatch wall;
  parallel_for(static_cast<std::size_t>(runs), threads, [&](std::size_t i) {
    const std::uint64_t seed = run_seed(master, i);
    const RngStream rng(seed);
    RunRecord rec;
    if (res.id == "lg-optimal-compare") rec = run_lg_compare(c, rng);
    else if (res.id == "lorenz63-misspec") rec = run_lorenz63(c, rng);
    else if (res.id == "nudge-robustness-sweep") rec = run_robustness_sweep(c, rng);
    else if (res.id == "tracking") rec = run_tracking(c, rng);
    else if (res.id == "lorenz96-bpf" || res.id == "lorenz96-enkf") rec = run_lorenz96(c, rng);
    else if (res.id == "bias-ratio") rec = run_bias_ratio(c, rng);
    else if (res.id == "evidence-compare") rec = run_evidence_compare(c, rng);
    else if (res.id == "sv-npf") rec = run_sv_npf(c, returns, rng);
    else if (res.id == "sv-pmh") rec = run_sv_pmh(c, returns, rng, i == 0 ? &first_chains : nullptr);
    rec.run = static_cast<int>(i);
    rec.seed = seed;
    res.runs[i] = std::move(rec);
  });
  res.wall_seconds = wall.seconds();

  if (res.id == "bias-ratio") {
    // Running means of Z/Z* over the first k runs.
    std::vector<std::string> keys;
    for (const auto& [k, v] : res.runs.front().values) {
      if (k.rfind("ratio.", 0) == 0) keys.push_back(k);
    }
    std::vector<std::string> header{"k"};
    header.insert(header.end(), keys.begin(), keys.end());
    CsvTable table(header);
    std::vector<double> sums(keys.size(), 0.0);
    for (std::size_t r = 0; r < res.runs.size(); ++r) {
      std::vector<std::string> row{std::to_string(r + 1)};
      for (std::size_t j = 0; j < keys.size(); ++j) {
        sums[j] += res.runs[r].get(keys[j]);
        row.push_back(format_double(sums[j] / static_cast<double>(r + 1)));
      }
      table.add(std::move(row));
    }
    res.tables.emplace_back("running_mean", std::move(table));
  }
  for (auto& [name, chain] : first_chains) {
    CsvTable table({"iter", "mu", "sigma_v", "phi", "log_marginal", "accepted"});
    for (std::size_t i = 0; i < chain.samples.size(); ++i) {
      const auto& s = chain.samples[i];
      table.add({std::to_string(i + 1), format_double(s.mu), format_double(s.sigma_v), format_double(s.phi),
                 format_double(chain.log_marginals[i]), chain.accepted[i] ? "1" : "0"});
    }
    res.tables.emplace_back("chain_" + name, std::move(table));
  }
  return res;
}

/// Per-run and summary tables. Runtimes are kept out of both so that results
/// are byte-identical across invocations and thread counts.
inline CsvTable runs_table(const ExperimentResult& res) {
  std::vector<std::string> header{"run", "seed"};
  for (const auto& [k, v] : res.runs.front().values) header.push_back(k);
  header.push_back("degenerate_steps");
  CsvTable t(header);
  for (const auto& r : res.runs) {
    std::vector<std::string> row{std::to_string(r.run), std::to_string(r.seed)};
    for (const auto& [k, v] : r.values) row.push_back(format_double(v));
    row.push_back(std::to_string(r.degenerate_steps));
    t.add(std::move(row));
  }
  return t;
}

inline CsvTable summary_table(const ExperimentResult& res) {
  CsvTable t({"metric", "mean", "sd", "runs"});
  for (const auto& [k, v] : res.runs.front().values) {
    const std::vector<double> col = res.column(k);
    const double m = stats::mean(col);
    const double s = col.size() > 1 ? stats::sd(col) : 0.0;
    t.add({k, format_double(m), format_double(s), std::to_string(col.size())});
  }
  return t;
}

inline CsvTable timing_table(const ExperimentResult& res) {
  std::vector<std::string> header{"run"};
  for (const auto& [k, v] : res.runs.front().runtimes) header.push_back(k + ".seconds");
  // runtime x NMSE, where both exist.
  std::vector<std::string> products;
  for (const auto& [k, v] : res.runs.front().runtimes) {
    for (const auto& [vk, vv] : res.runs.front().values) {
      if (vk == "nmse." + k) products.push_back(k);
    }
  }
  for (const auto& k : products) header.push_back(k + ".runtime_x_nmse");
  CsvTable t(header);
  for (const auto& r : res.runs) {
    std::vector<std::string> row{std::to_string(r.run)};
    for (const auto& [k, v] : r.runtimes) row.push_back(format_double(v));
    for (const auto& k : products) {
      double secs = 0.0;
      for (const auto& [rk, rv] : r.runtimes) {
        if (rk == k) secs = rv;
      }
      row.push_back(format_double(secs * r.get("nmse." + k)));
    }
    t.add(std::move(row));
  }
  return t;
}

/// Writes <id>_runs.csv, <id>_summary.csv, <id>_timing.csv, extra tables
/// and the effective config into `dir`.
inline std::vector<std::string> write_experiment(const ExperimentResult& res, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(Errc::Io, "cannot create output directory " + dir + ": " + ec.message());
  std::vector<std::string> files;
  auto emit = [&](const std::string& suffix, const CsvTable& t) {
    const std::string path = (fs::path(dir) / (res.id + "_" + suffix + ".csv")).string();
    t.write(path);
    files.push_back(path);
  };
  emit("runs", runs_table(res));
  emit("summary", summary_table(res));
  emit("timing", timing_table(res));
  for (const auto& [suffix, table] : res.tables) emit(suffix, table);
  const std::string cfg = (fs::path(dir) / (res.id + "_config.txt")).string();
  res.config.save(cfg);
  files.push_back(cfg);
  return files;
}

inline ExperimentResult run_experiment(const Config& user, std::vector<std::string>* files = nullptr) {
  ExperimentResult res = execute_experiment(user);
  const auto written = write_experiment(res, res.config.require_string("output_dir"));
  if (files != nullptr) *files = written;
  return res;
}

}  // namespace nupf
