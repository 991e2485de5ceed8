#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "nupf/rng.hpp"

namespace nupf {

using StateVector = Eigen::VectorXd;

enum class Errc {
  AllWeightsZero,
  NotNormalized,
  DimensionMismatch,
  InvalidParam,
  BudgetExceedsN,
  NonFiniteGradient,
  UnsupportedModel,
  SingularInnovation,
  NonPositivePrice,
  InsufficientChain,
  ZeroDenominator,
  ConfigParse,
  Io,
};

inline const char* to_string(Errc code) noexcept {
  switch (code) {
    case Errc::AllWeightsZero: return "AllWeightsZero";
    case Errc::NotNormalized: return "NotNormalized";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::InvalidParam: return "InvalidParam";
    case Errc::BudgetExceedsN: return "BudgetExceedsN";
    case Errc::NonFiniteGradient: return "NonFiniteGradient";
    case Errc::UnsupportedModel: return "UnsupportedModel";
    case Errc::SingularInnovation: return "SingularInnovation";
    case Errc::NonPositivePrice: return "NonPositivePrice";
    case Errc::InsufficientChain: return "InsufficientChain";
    case Errc::ZeroDenominator: return "ZeroDenominator";
    case Errc::ConfigParse: return "ConfigParse";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

/// Library error: a std::runtime_error tagged with a machine-checkable code.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
  [[nodiscard]] Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

struct Observation {
  Eigen::VectorXd values;
  int time_index = 1;
};

/// Linearisation hooks used by the Gaussian baselines (EKF, EnKF).
/// Observation noise is assumed independent across components.
struct GaussianApproximation {
  std::function<StateVector(const StateVector&, int)> transition_mean;
  std::function<Eigen::MatrixXd(const StateVector&, int)> transition_jacobian;
  Eigen::MatrixXd process_cov;
  std::function<Eigen::VectorXd(const StateVector&, int)> observation_mean;
  std::function<Eigen::MatrixXd(const StateVector&, int)> observation_jacobian;
  Eigen::VectorXd observation_noise_var;
};

/// A state-space model {prior, Markov kernel, likelihood}.
///
/// The gradient hook, when present, returns the gradient of log g; the
/// gradient of g itself is recovered as g * grad(log g) by
/// `likelihood_gradient`, which avoids underflow in high-dimensional
/// likelihoods.
struct StateSpaceModel {
  int state_dim = 0;
  int obs_dim = 0;
  std::function<StateVector(RngStream&)> sample_prior;
  std::function<StateVector(const StateVector&, int, RngStream&)> sample_transition;
  std::function<double(const Observation&, const StateVector&)> log_likelihood;
  std::function<Eigen::VectorXd(const Observation&, const StateVector&)> log_likelihood_gradient;
  std::function<Observation(const StateVector&, int, RngStream&)> sample_observation;
  /// E[x_t | x_{t-1}]; needed by the auxiliary particle filter.
  std::function<StateVector(const StateVector&, int)> transition_mean;
  std::optional<GaussianApproximation> gaussian;
};

struct ParticleEnsemble {
  std::vector<StateVector> states;
  std::vector<double> log_weights;
  bool normalized = false;

  [[nodiscard]] std::size_t size() const noexcept { return states.size(); }

  static ParticleEnsemble uniform(std::vector<StateVector> states) {
    const auto n = states.size();
    ParticleEnsemble e;
    e.states = std::move(states);
    e.log_weights.assign(n, -std::log(static_cast<double>(n)));
    e.normalized = true;
    return e;
  }
};

struct NormalizedLogWeights {
  std::vector<double> log_weights;
  double log_sum = 0.0;
};

/// Normalise raw log-weights with max-subtraction; log_sum = log sum exp(raw).
inline NormalizedLogWeights normalize_log_weights(std::span<const double> raw) {
  if (raw.empty()) throw Error(Errc::InvalidParam, "normalize_log_weights: empty input");
  double max_w = -std::numeric_limits<double>::infinity();
  for (double w : raw) {
    if (std::isnan(w)) throw Error(Errc::InvalidParam, "normalize_log_weights: NaN weight");
    max_w = std::max(max_w, w);
  }
  if (max_w == -std::numeric_limits<double>::infinity()) {
    throw Error(Errc::AllWeightsZero, "every log-weight is -inf");
  }
  if (max_w == std::numeric_limits<double>::infinity()) {
    throw Error(Errc::InvalidParam, "normalize_log_weights: +inf weight");
  }
  double acc = 0.0;
  for (double w : raw) acc += std::exp(w - max_w);
  const double log_sum = max_w + std::log(acc);
  NormalizedLogWeights out;
  out.log_sum = log_sum;
  out.log_weights.reserve(raw.size());
  for (double w : raw) out.log_weights.push_back(w - log_sum);
  return out;
}

inline std::vector<double> linear_weights(const ParticleEnsemble& ensemble) {
  std::vector<double> w(ensemble.size());
  std::transform(ensemble.log_weights.begin(), ensemble.log_weights.end(), w.begin(),
                 [](double lw) { return std::exp(lw); });
  return w;
}

/// 1 / sum(w_i^2) for a normalised ensemble.
inline double effective_sample_size(const ParticleEnsemble& ensemble) {
  if (!ensemble.normalized) throw Error(Errc::NotNormalized, "effective_sample_size");
  double sum_sq = 0.0;
  for (double lw : ensemble.log_weights) sum_sq += std::exp(2.0 * lw);
  return 1.0 / sum_sq;
}

inline StateVector weighted_mean(const ParticleEnsemble& ensemble) {
  if (!ensemble.normalized) throw Error(Errc::NotNormalized, "weighted_mean");
  StateVector mean = StateVector::Zero(ensemble.states.front().size());
  for (std::size_t i = 0; i < ensemble.size(); ++i) {
    mean += std::exp(ensemble.log_weights[i]) * ensemble.states[i];
  }
  return mean;
}

/// Central differences of g (not log g), one coordinate at a time.
inline Eigen::VectorXd finite_difference_gradient(const StateSpaceModel& model, const Observation& y,
                                                  const StateVector& x, double h) {
  if (!(h > 0.0)) throw Error(Errc::InvalidParam, "finite_difference_gradient: h must be > 0");
  Eigen::VectorXd grad(x.size());
  StateVector probe = x;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    probe[k] = x[k] + h;
    const double up = std::exp(model.log_likelihood(y, probe));
    probe[k] = x[k] - h;
    const double down = std::exp(model.log_likelihood(y, probe));
    probe[k] = x[k];
    grad[k] = (up - down) / (2.0 * h);
  }
  return grad;
}

/// Central differences of log g.
inline Eigen::VectorXd finite_difference_log_gradient(const StateSpaceModel& model,
                                                      const Observation& y, const StateVector& x,
                                                      double h) {
  if (!(h > 0.0)) throw Error(Errc::InvalidParam, "finite_difference_log_gradient: h must be > 0");
  Eigen::VectorXd grad(x.size());
  StateVector probe = x;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    probe[k] = x[k] + h;
    const double up = model.log_likelihood(y, probe);
    probe[k] = x[k] - h;
    const double down = model.log_likelihood(y, probe);
    probe[k] = x[k];
    grad[k] = (up - down) / (2.0 * h);
  }
  return grad;
}

inline constexpr double kDefaultFdStep = 1e-5;

inline Eigen::VectorXd log_likelihood_gradient(const StateSpaceModel& model, const Observation& y,
                                               const StateVector& x) {
  if (model.log_likelihood_gradient) return model.log_likelihood_gradient(y, x);
  return finite_difference_log_gradient(model, y, x, kDefaultFdStep);
}

/// Gradient of g; closed form via g * grad(log g) when the model provides it.
inline Eigen::VectorXd likelihood_gradient(const StateSpaceModel& model, const Observation& y,
                                           const StateVector& x) {
  if (model.log_likelihood_gradient) {
    return std::exp(model.log_likelihood(y, x)) * model.log_likelihood_gradient(y, x);
  }
  return finite_difference_gradient(model, y, x, kDefaultFdStep);
}

inline bool all_finite(const Eigen::Ref<const Eigen::VectorXd>& v) noexcept {
  return v.allFinite();
}

}  // namespace nupf
