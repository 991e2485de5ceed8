#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "nupf/core.hpp"
#include "nupf/linalg.hpp"
#include "nupf/models/linear_gaussian.hpp"
#include "nupf/nudging.hpp"
#include "nupf/rng.hpp"

namespace nupf {

struct FilterState {
  ParticleEnsemble ensemble;
  int time = 0;
  double cumulative_log_evidence = 0.0;
  int last_nudge_count = 0;
};

/// What one step of any filter reports.
struct StepRecord {
  StateVector mean;
  double log_evidence_increment = 0.0;
  double pre_nudge_increment = 0.0;  // equals log_evidence_increment for un-nudged filters
  double ess = 0.0;
  int nudge_count = 0;
  bool degenerate = false;
};

enum class EvidenceTiming { PostNudge, PreNudge };

// Substream purposes within a step.
namespace stream {
inline constexpr std::uint64_t kInit = 0;
inline constexpr std::uint64_t kPropagate = 1;
inline constexpr std::uint64_t kSelect = 2;
inline constexpr std::uint64_t kNudge = 3;
inline constexpr std::uint64_t kResample = 4;
inline constexpr std::uint64_t kAuxiliary = 5;
inline constexpr std::uint64_t kMixture = 6;
inline constexpr std::uint64_t kPerturb = 7;
}  // namespace stream

inline FilterState init_particles(const StateSpaceModel& model, std::size_t n, const RngStream& rng) {
  if (n < 1) throw Error(Errc::InvalidParam, "particle count must be >= 1");
  const RngStream base = rng.split(0, stream::kInit);
  std::vector<StateVector> states;
  states.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    RngStream r = base.split(i);
    states.push_back(model.sample_prior(r));
  }
  FilterState s;
  s.ensemble = ParticleEnsemble::uniform(std::move(states));
  return s;
}

namespace detail {

/// Multinomial draw of n indices from unnormalised linear weights `w`.
inline void draw_multinomial(const std::vector<double>& w, RngStream& rng, std::vector<std::size_t>& idx) {
  const std::size_t n = w.size();
  std::vector<double> cdf(n);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    acc += w[i];
    cdf[i] = acc;
  }
  idx.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double u = rng.uniform() * acc;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    idx[k] = std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), n - 1);
  }
}

/// dst[k] = src[idx[k]], reusing dst's storage where sizes already agree.
inline void gather_states(const std::vector<StateVector>& src, const std::vector<std::size_t>& idx,
                          std::vector<StateVector>& dst) {
  dst.resize(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) dst[k] = src[idx[k]];
}

}  // namespace detail

/// N i.i.d. draws from sum_i w_i delta_{x_i}; the result has uniform weights.
inline ParticleEnsemble resample_multinomial(const ParticleEnsemble& ensemble, RngStream& rng) {
  if (!ensemble.normalized) throw Error(Errc::NotNormalized, "resample_multinomial");
  std::vector<std::size_t> idx;
  detail::draw_multinomial(linear_weights(ensemble), rng, idx);
  std::vector<StateVector> out;
  detail::gather_states(ensemble.states, idx, out);
  return ParticleEnsemble::uniform(std::move(out));
}

namespace detail {

inline double log_mean_exp_weighted(std::span<const double> prev_log_w, std::span<const double> log_g) {
  double max_v = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < log_g.size(); ++i) max_v = std::max(max_v, prev_log_w[i] + log_g[i]);
  if (max_v == -std::numeric_limits<double>::infinity()) return max_v;
  double acc = 0.0;
  for (std::size_t i = 0; i < log_g.size(); ++i) acc += std::exp(prev_log_w[i] + log_g[i] - max_v);
  return max_v + std::log(acc);
}

inline StateVector plain_mean(const std::vector<StateVector>& states) {
  StateVector m = StateVector::Zero(states.front().size());
  for (const auto& x : states) m += x;
  return m / static_cast<double>(states.size());
}

/// Weight the propagated ensemble by `log_target` on top of the previous
/// normalised weights, record mean/ESS/evidence, then resample.
inline void weight_and_resample(FilterState& state, std::vector<StateVector> states,
                                const std::vector<double>& log_target, const RngStream& step_rng,
                                StepRecord& rec, bool resample = true) {
  const std::size_t n = states.size();
  std::vector<double> raw(n);
  for (std::size_t i = 0; i < n; ++i) raw[i] = state.ensemble.log_weights[i] + log_target[i];
  std::vector<double> log_w;
  std::vector<double> w(n);
  try {
    auto norm = normalize_log_weights(raw);
    log_w = std::move(norm.log_weights);
    rec.log_evidence_increment = norm.log_sum;
    StateVector mean = StateVector::Zero(states.front().size());
    double sum_sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      w[i] = std::exp(log_w[i]);
      mean += w[i] * states[i];
      sum_sq += w[i] * w[i];
    }
    rec.mean = std::move(mean);
    rec.ess = 1.0 / sum_sq;
  } catch (const Error& e) {
    if (e.code() != Errc::AllWeightsZero) throw;
    log_w.assign(n, -std::log(static_cast<double>(n)));
    w.assign(n, 1.0 / static_cast<double>(n));
    rec.degenerate = true;
    rec.log_evidence_increment = -std::numeric_limits<double>::infinity();
    rec.mean = plain_mean(states);
    rec.ess = static_cast<double>(n);
  }
  if (resample) {
    RngStream r = step_rng.split(stream::kResample);
    std::vector<std::size_t> idx;
    draw_multinomial(w, r, idx);
    // The previous ensemble is spent; recycle its storage.
    std::vector<StateVector> out = std::move(state.ensemble.states);
    gather_states(states, idx, out);
    state.ensemble = ParticleEnsemble::uniform(std::move(out));
  } else {
    state.ensemble.states = std::move(states);
    state.ensemble.log_weights = std::move(log_w);
    state.ensemble.normalized = true;
  }
}

inline std::vector<StateVector> propagate(const FilterState& state, const StateSpaceModel& model,
                                          int t, const RngStream& step_rng) {
  const RngStream base = step_rng.split(stream::kPropagate);
  std::vector<StateVector> out;
  out.reserve(state.ensemble.size());
  for (std::size_t i = 0; i < state.ensemble.size(); ++i) {
    RngStream r = base.split(i);
    out.push_back(model.sample_transition(state.ensemble.states[i], t, r));
  }
  return out;
}

inline void finish_step(FilterState& state, const StepRecord& rec) {
  state.cumulative_log_evidence += rec.log_evidence_increment;
  state.last_nudge_count = rec.nudge_count;
}

}  // namespace detail

/// Bootstrap filter: propagate, weight by g_t, record, resample.
inline StepRecord bpf_step(FilterState& state, const StateSpaceModel& model, const Observation& y,
                           const RngStream& rng) {
  const int t = state.time + 1;
  const RngStream step_rng = rng.split(static_cast<std::uint64_t>(t));
  std::vector<StateVector> states = detail::propagate(state, model, t, step_rng);
  std::vector<double> log_g(states.size());
  for (std::size_t i = 0; i < states.size(); ++i) log_g[i] = model.log_likelihood(y, states[i]);
  StepRecord rec;
  detail::weight_and_resample(state, std::move(states), log_g, step_rng, rec);
  rec.pre_nudge_increment = rec.log_evidence_increment;
  state.time = t;
  detail::finish_step(state, rec);
  return rec;
}

/// Nudged filter: as the bootstrap filter, with the selected particles moved
/// by `config.op` after propagation. Weights use plain g_t.
inline StepRecord nupf_step(FilterState& state, const StateSpaceModel& model, const Observation& y,
                            const NudgeConfig& config, const RngStream& rng,
                            EvidenceTiming timing = EvidenceTiming::PostNudge) {
  const int t = state.time + 1;
  const RngStream step_rng = rng.split(static_cast<std::uint64_t>(t));
  std::vector<StateVector> states = detail::propagate(state, model, t, step_rng);
  const std::size_t n = states.size();
  std::vector<double> log_g(n);
  for (std::size_t i = 0; i < n; ++i) log_g[i] = model.log_likelihood(y, states[i]);
  const double pre = detail::log_mean_exp_weighted(state.ensemble.log_weights, log_g);

  RngStream select_rng = step_rng.split(stream::kSelect);
  const auto chosen = config.selector.select(n, select_rng);
  const RngStream nudge_base = step_rng.split(stream::kNudge);
  for (std::size_t i : chosen) {
    RngStream r = nudge_base.split(i);
    states[i] = apply_nudge(config.op, states[i], state.ensemble.states[i], model, y, r);
    log_g[i] = model.log_likelihood(y, states[i]);
  }

  StepRecord rec;
  detail::weight_and_resample(state, std::move(states), log_g, step_rng, rec);
  rec.nudge_count = static_cast<int>(chosen.size());
  rec.pre_nudge_increment = pre;
  if (timing == EvidenceTiming::PreNudge) rec.log_evidence_increment = pre;
  state.time = t;
  detail::finish_step(state, rec);
  return rec;
}

/// Properly weighted nudged filter for linear-Gaussian models. Each particle
/// is log-gradient nudged with probability `mix`; the nudge is the affine map
/// x -> (I - gamma C'R^{-1}C) x + gamma C'R^{-1} y, so the proposal is a
/// two-component Gaussian mixture and weights are g * tau / q.
inline StepRecord nupf_pw_step(FilterState& state, const LinearGaussianSpec& spec, const Observation& y,
                               double gamma, double mix, const RngStream& rng) {
  if (mix < 0.0 || mix > 1.0) throw Error(Errc::InvalidParam, "nupf_pw: mixture weight must be in [0,1]");
  const int t = state.time + 1;
  const RngStream step_rng = rng.split(static_cast<std::uint64_t>(t));
  const Eigen::MatrixXd& c = spec.observation_matrix(y.time_index);
  const Eigen::LLT<Eigen::MatrixXd> r_llt(spec.observation_cov);
  const Eigen::MatrixXd ct_rinv = r_llt.solve(c).transpose();
  const auto dx = static_cast<Eigen::Index>(spec.state_dim);
  const Eigen::MatrixXd g_map = Eigen::MatrixXd::Identity(dx, dx) - gamma * ct_rinv * c;
  const Eigen::VectorXd shift = gamma * ct_rinv * y.values;
  const Eigen::MatrixXd q_factor = linalg::psd_factor(spec.process_cov);
  const linalg::GaussianDensity tau(spec.process_cov);
  const bool mixed = gamma != 0.0 && mix > 0.0;
  std::optional<linalg::GaussianDensity> nudged;
  if (mixed) nudged.emplace(g_map * spec.process_cov * g_map.transpose());

  const std::size_t n = state.ensemble.size();
  const RngStream prop_base = step_rng.split(stream::kPropagate);
  const RngStream mix_base = step_rng.split(stream::kMixture);
  std::vector<StateVector> states(n);
  std::vector<double> log_w(n);
  int count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::VectorXd mean = spec.transition * state.ensemble.states[i];
    RngStream r = prop_base.split(i);
    StateVector x = linalg::sample_gaussian(mean, q_factor, r);
    RngStream u = mix_base.split(i);
    if (mixed && u.uniform() < mix) {
      x = g_map * x + shift;
      ++count;
    }
    const Eigen::VectorXd resid = y.values - c * x;
    const double log_g = -0.5 * r_llt.matrixL().solve(resid).squaredNorm();
    double log_w_i = log_g;
    if (mixed) {
      const double lt = tau.log_pdf(x, mean);
      const double ln = nudged->log_pdf(x, g_map * mean + shift);
      const double a = std::log1p(-mix) + lt;
      const double b = std::log(mix) + ln;
      const double hi = std::max(a, b);
      const double log_q = hi + std::log(std::exp(a - hi) + std::exp(b - hi));
      log_w_i += lt - log_q;
    }
    states[i] = std::move(x);
    log_w[i] = log_w_i;
  }
  // Restore the Gaussian normalising constant dropped above.
  const Eigen::MatrixXd l = r_llt.matrixL();
  const double log_norm = -0.5 * (static_cast<double>(spec.obs_dim) * linalg::kLog2Pi +
                                  2.0 * l.diagonal().array().log().sum());
  for (double& w : log_w) w += log_norm;

  StepRecord rec;
  detail::weight_and_resample(state, std::move(states), log_w, step_rng, rec);
  rec.pre_nudge_increment = rec.log_evidence_increment;
  rec.nudge_count = count;
  state.time = t;
  detail::finish_step(state, rec);
  return rec;
}

/// Conjugate optimal-proposal filter for linear-Gaussian models; works with
/// singular Q through the gain form.
inline StepRecord optimal_pf_step(FilterState& state, const LinearGaussianSpec& spec,
                                  const Observation& y, const RngStream& rng) {
  const int t = state.time + 1;
  const RngStream step_rng = rng.split(static_cast<std::uint64_t>(t));
  const Eigen::MatrixXd& c = spec.observation_matrix(y.time_index);
  const Eigen::MatrixXd& q = spec.process_cov;
  const Eigen::MatrixXd s = c * q * c.transpose() + spec.observation_cov;
  const linalg::GaussianDensity pred(s);
  const Eigen::MatrixXd gain = pred.solve(c * q).transpose();  // Q C' S^{-1}
  const auto dx = static_cast<Eigen::Index>(spec.state_dim);
  Eigen::MatrixXd post_cov = (Eigen::MatrixXd::Identity(dx, dx) - gain * c) * q;
  post_cov = 0.5 * (post_cov + post_cov.transpose());
  const Eigen::MatrixXd post_factor = linalg::psd_factor(post_cov);

  const std::size_t n = state.ensemble.size();
  std::vector<double> log_pred(n);
  std::vector<StateVector> states(n);
  const RngStream base = step_rng.split(stream::kPropagate);
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::VectorXd m = spec.transition * state.ensemble.states[i];
    const Eigen::VectorXd innov = y.values - c * m;
    log_pred[i] = pred.log_pdf(y.values, c * m);
    RngStream r = base.split(i);
    states[i] = linalg::sample_gaussian(m + gain * innov, post_factor, r);
  }
  StepRecord rec;
  detail::weight_and_resample(state, std::move(states), log_pred, step_rng, rec);
  rec.pre_nudge_increment = rec.log_evidence_increment;
  state.time = t;
  detail::finish_step(state, rec);
  return rec;
}

/// Auxiliary particle filter with first-stage weights g_t(E[x_t | x_{t-1}]).
/// The ensemble leaves the step weighted, not resampled.
inline StepRecord apf_step(FilterState& state, const StateSpaceModel& model, const Observation& y,
                           const RngStream& rng) {
  if (!model.transition_mean) throw Error(Errc::UnsupportedModel, "apf: model has no transition mean");
  const int t = state.time + 1;
  const RngStream step_rng = rng.split(static_cast<std::uint64_t>(t));
  const std::size_t n = state.ensemble.size();
  std::vector<double> first(n);
  std::vector<double> log_g_mean(n);
  for (std::size_t i = 0; i < n; ++i) {
    log_g_mean[i] = model.log_likelihood(y, model.transition_mean(state.ensemble.states[i], t));
    first[i] = state.ensemble.log_weights[i] + log_g_mean[i];
  }
  StepRecord rec;
  double first_log_sum = 0.0;
  std::vector<std::size_t> ancestors(n);
  try {
    auto norm = normalize_log_weights(first);
    first_log_sum = norm.log_sum;
    std::vector<double> cdf(n);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) cdf[i] = (acc += std::exp(norm.log_weights[i]));
    RngStream r = step_rng.split(stream::kAuxiliary);
    for (std::size_t k = 0; k < n; ++k) {
      auto it = std::upper_bound(cdf.begin(), cdf.end(), r.uniform() * acc);
      ancestors[k] = std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), n - 1);
    }
  } catch (const Error& e) {
    if (e.code() != Errc::AllWeightsZero) throw;
    // First stage uninformative: fall back to the current weights.
    first_log_sum = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) ancestors[i] = i;
    std::fill(log_g_mean.begin(), log_g_mean.end(), 0.0);
  }
  const RngStream base = step_rng.split(stream::kPropagate);
  std::vector<StateVector> states(n);
  std::vector<double> second(n);
  for (std::size_t k = 0; k < n; ++k) {
    RngStream r = base.split(k);
    states[k] = model.sample_transition(state.ensemble.states[ancestors[k]], t, r);
    second[k] = model.log_likelihood(y, states[k]) - log_g_mean[ancestors[k]];
  }
  FilterState uniform_prev = state;
  uniform_prev.ensemble.log_weights.assign(n, -std::log(static_cast<double>(n)));
  detail::weight_and_resample(uniform_prev, std::move(states), second, step_rng, rec, false);
  state.ensemble = std::move(uniform_prev.ensemble);
  if (std::isfinite(first_log_sum)) {
    rec.log_evidence_increment += first_log_sum;
  } else if (!rec.degenerate) {
    rec.log_evidence_increment = -std::numeric_limits<double>::infinity();
    rec.degenerate = true;
  }
  rec.pre_nudge_increment = rec.log_evidence_increment;
  state.time = t;
  detail::finish_step(state, rec);
  return rec;
}

/// Draw from the observation-driven kernel: tau, then the nudge with
/// probability eps. Returns the state and whether it was nudged.
inline std::pair<StateVector, bool> implicit_kernel_sample(const StateVector& x_prev,
                                                           const StateSpaceModel& model,
                                                           const Observation& y, double eps,
                                                           const NudgeOperator& op, RngStream& rng) {
  if (eps < 0.0 || eps > 1.0) throw Error(Errc::InvalidParam, "implicit kernel: eps must be in [0,1]");
  StateVector x = model.sample_transition(x_prev, y.time_index, rng);
  if (rng.uniform() < eps) return {apply_nudge(op, x, x_prev, model, y, rng), true};
  return {std::move(x), false};
}

/// The model whose transition is the observation-driven kernel for the
/// given observation sequence (y_t looked up by time index).
inline StateSpaceModel implicit_model(const StateSpaceModel& base, std::vector<Observation> observations,
                                      double eps, const NudgeOperator& op) {
  StateSpaceModel m = base;
  auto obs = std::make_shared<const std::vector<Observation>>(std::move(observations));
  m.sample_transition = [base, obs, eps, op](const StateVector& x, int t, RngStream& rng) {
    if (t < 1 || static_cast<std::size_t>(t) > obs->size()) {
      throw Error(Errc::DimensionMismatch, "implicit model: no observation for time " + std::to_string(t));
    }
    return implicit_kernel_sample(x, base, (*obs)[static_cast<std::size_t>(t - 1)], eps, op, rng).first;
  };
  m.transition_mean = nullptr;
  m.gaussian.reset();
  return m;
}

}  // namespace nupf
