#pragma once

#include <cmath>
#include <memory>

#include <Eigen/Core>

#include "nupf/core.hpp"
#include "nupf/linalg.hpp"
#include "nupf/rng.hpp"

namespace nupf {

/// x_0 ~ N(mu, sv^2 / (1 - phi^2)),  x_t = mu + phi (x_{t-1} - mu) + sv u_t,
/// y_t ~ N(0, exp(x_t)).
struct StochVolSpec {
  double mu = 0.0;
  double sigma_v = 0.15;
  double phi = 0.97;

  void validate() const {
    if (!(std::abs(phi) < 1.0)) throw Error(Errc::InvalidParam, "stochvol: |phi| must be < 1");
    if (!(sigma_v > 0.0)) throw Error(Errc::InvalidParam, "stochvol: sigma_v must be > 0");
    if (!std::isfinite(mu)) throw Error(Errc::InvalidParam, "stochvol: mu must be finite");
  }

  [[nodiscard]] double stationary_var() const { return sigma_v * sigma_v / (1.0 - phi * phi); }
};

inline double stochvol_log_likelihood(double y, double x) {
  return -0.5 * (linalg::kLog2Pi + x + y * y * std::exp(-x));
}

inline double stochvol_log_gradient(double y, double x) { return -0.5 + 0.5 * y * y * std::exp(-x); }

inline StateSpaceModel build_stochvol(const StochVolSpec& spec) {
  spec.validate();
  const double mu = spec.mu;
  const double phi = spec.phi;
  const double sv = spec.sigma_v;
  const double prior_sd = std::sqrt(spec.stationary_var());
  StateSpaceModel m;
  m.state_dim = 1;
  m.obs_dim = 1;
  m.sample_prior = [mu, prior_sd](RngStream& rng) -> StateVector {
    StateVector x(1);
    x[0] = mu + prior_sd * rng.normal();
    return x;
  };
  m.sample_transition = [mu, phi, sv](const StateVector& x, int, RngStream& rng) -> StateVector {
    StateVector out(1);
    out[0] = mu + phi * (x[0] - mu) + sv * rng.normal();
    return out;
  };
  m.transition_mean = [mu, phi](const StateVector& x, int) -> StateVector {
    StateVector out(1);
    out[0] = mu + phi * (x[0] - mu);
    return out;
  };
  m.log_likelihood = [](const Observation& y, const StateVector& x) {
    return stochvol_log_likelihood(y.values[0], x[0]);
  };
  m.log_likelihood_gradient = [](const Observation& y, const StateVector& x) {
    Eigen::VectorXd g(1);
    g[0] = stochvol_log_gradient(y.values[0], x[0]);
    return g;
  };
  m.sample_observation = [](const StateVector& x, int t, RngStream& rng) {
    Eigen::VectorXd y(1);
    y[0] = std::exp(0.5 * x[0]) * rng.normal();
    return Observation{std::move(y), t};
  };
  return m;
}

}  // namespace nupf
