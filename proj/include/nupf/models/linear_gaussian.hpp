#pragma once

#include <memory>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "nupf/core.hpp"
#include "nupf/linalg.hpp"
#include "nupf/rng.hpp"

namespace nupf {

/// x_0 ~ N(m0, P0),  x_t = A x_{t-1} + N(0, Q),  y_t = C_t x_t + N(0, R).
///
/// `observation_matrices` holds either one matrix (time-invariant) or one
/// matrix per time step, C_t = observation_matrices[t - 1].
struct LinearGaussianSpec {
  int state_dim = 1;
  int obs_dim = 1;
  Eigen::MatrixXd transition;
  Eigen::MatrixXd process_cov;
  std::vector<Eigen::MatrixXd> observation_matrices;
  Eigen::MatrixXd observation_cov;
  Eigen::VectorXd prior_mean;
  Eigen::MatrixXd prior_cov;
  bool time_varying = false;

  [[nodiscard]] const Eigen::MatrixXd& observation_matrix(int t) const {
    if (!time_varying) return observation_matrices.front();
    if (t < 1 || static_cast<std::size_t>(t) > observation_matrices.size()) {
      throw Error(Errc::DimensionMismatch,
                  "no observation matrix for time index " + std::to_string(t));
    }
    return observation_matrices[static_cast<std::size_t>(t - 1)];
  }

  void validate() const {
    if (state_dim < 1 || obs_dim < 1) throw Error(Errc::InvalidParam, "dimensions must be >= 1");
    const auto dx = static_cast<Eigen::Index>(state_dim);
    const auto dy = static_cast<Eigen::Index>(obs_dim);
    if (transition.rows() != dx || transition.cols() != dx) {
      throw Error(Errc::DimensionMismatch, "transition matrix must be d_x x d_x");
    }
    if (process_cov.rows() != dx || process_cov.cols() != dx) {
      throw Error(Errc::DimensionMismatch, "process covariance must be d_x x d_x");
    }
    if (observation_cov.rows() != dy || observation_cov.cols() != dy) {
      throw Error(Errc::DimensionMismatch, "observation covariance must be d_y x d_y");
    }
    if (prior_mean.size() != dx || prior_cov.rows() != dx || prior_cov.cols() != dx) {
      throw Error(Errc::DimensionMismatch, "prior must be d_x dimensional");
    }
    if (observation_matrices.empty()) {
      throw Error(Errc::DimensionMismatch, "at least one observation matrix is required");
    }
    for (const auto& c : observation_matrices) {
      if (c.rows() != dy || c.cols() != dx) {
        throw Error(Errc::DimensionMismatch, "observation matrix must be d_y x d_x");
      }
    }
    Eigen::LLT<Eigen::MatrixXd> r_llt(observation_cov);
    if (r_llt.info() != Eigen::Success) {
      throw Error(Errc::InvalidParam, "observation covariance must be positive definite");
    }
    (void)linalg::psd_factor(process_cov);
    (void)linalg::psd_factor(prior_cov);
  }

  /// Random-walk model with Q = q I, R = r I and given observation matrices.
  static LinearGaussianSpec random_walk(int dx, int dy, double q, double r,
                                        std::vector<Eigen::MatrixXd> c, bool time_varying) {
    LinearGaussianSpec s;
    s.state_dim = dx;
    s.obs_dim = dy;
    s.transition = Eigen::MatrixXd::Identity(dx, dx);
    s.process_cov = q * Eigen::MatrixXd::Identity(dx, dx);
    s.observation_matrices = std::move(c);
    s.observation_cov = r * Eigen::MatrixXd::Identity(dy, dy);
    s.prior_mean = Eigen::VectorXd::Zero(dx);
    s.prior_cov = Eigen::MatrixXd::Identity(dx, dx);
    s.time_varying = time_varying;
    return s;
  }
};

/// `count` matrices of shape dy x dx with i.i.d. Bernoulli(1/2) entries.
inline std::vector<Eigen::MatrixXd> draw_binary_matrices(int dy, int dx, int count, RngStream& rng) {
  std::vector<Eigen::MatrixXd> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    Eigen::MatrixXd c(dy, dx);
    for (Eigen::Index i = 0; i < c.rows(); ++i)
      for (Eigen::Index j = 0; j < c.cols(); ++j) c(i, j) = rng.uniform() < 0.5 ? 1.0 : 0.0;
    out.push_back(std::move(c));
  }
  return out;
}

/// The high-dimensional time-varying model of the linear-Gaussian comparison:
/// q = 0.1, R = I, C_t random binary, one draw per time step.
inline LinearGaussianSpec high_dimensional_lg_spec(int dx, int dy, double q, int horizon,
                                                   RngStream& rng) {
  auto c = draw_binary_matrices(dy, dx, horizon, rng);
  return LinearGaussianSpec::random_walk(dx, dy, q, 1.0, std::move(c), true);
}

/// Two-dimensional model with cross-correlated process noise used for the
/// marginal-likelihood bias study; C_t in {0,1}^{1x2}.
inline LinearGaussianSpec bias_study_lg_spec(int horizon, RngStream& rng) {
  auto c = draw_binary_matrices(1, 2, horizon, rng);
  auto s = LinearGaussianSpec::random_walk(2, 1, 1.0, 1.0, std::move(c), true);
  s.process_cov << 2.7, -0.48, -0.48, 2.05;
  return s;
}

struct LinearGaussianModel {
  LinearGaussianSpec spec;
  StateSpaceModel model;
};

namespace detail {

struct LgCache {
  LinearGaussianSpec spec;
  Eigen::MatrixXd process_factor;
  Eigen::MatrixXd prior_factor;
  Eigen::MatrixXd obs_factor;
  Eigen::LLT<Eigen::MatrixXd> r_llt;
  double r_log_det = 0.0;
};

}  // namespace detail

inline LinearGaussianModel build_linear_gaussian(const LinearGaussianSpec& spec) {
  spec.validate();
  auto cache = std::make_shared<detail::LgCache>();
  cache->spec = spec;
  cache->process_factor = linalg::psd_factor(spec.process_cov);
  cache->prior_factor = linalg::psd_factor(spec.prior_cov);
  cache->obs_factor = linalg::psd_factor(spec.observation_cov);
  cache->r_llt.compute(spec.observation_cov);
  const Eigen::MatrixXd rl = cache->r_llt.matrixL();
  cache->r_log_det = 2.0 * rl.diagonal().array().log().sum();

  StateSpaceModel m;
  m.state_dim = spec.state_dim;
  m.obs_dim = spec.obs_dim;
  m.sample_prior = [cache](RngStream& rng) {
    return linalg::sample_gaussian(cache->spec.prior_mean, cache->prior_factor, rng);
  };
  m.sample_transition = [cache](const StateVector& x, int, RngStream& rng) {
    return linalg::sample_gaussian(cache->spec.transition * x, cache->process_factor, rng);
  };
  m.transition_mean = [cache](const StateVector& x, int) -> StateVector {
    return cache->spec.transition * x;
  };
  m.log_likelihood = [cache](const Observation& y, const StateVector& x) {
    const Eigen::MatrixXd& c = cache->spec.observation_matrix(y.time_index);
    const Eigen::VectorXd z = cache->r_llt.matrixL().solve(y.values - c * x);
    return -0.5 * (static_cast<double>(y.values.size()) * linalg::kLog2Pi + cache->r_log_det +
                   z.squaredNorm());
  };
  m.log_likelihood_gradient = [cache](const Observation& y, const StateVector& x) {
    const Eigen::MatrixXd& c = cache->spec.observation_matrix(y.time_index);
    return Eigen::VectorXd(c.transpose() * cache->r_llt.solve(y.values - c * x));
  };
  m.sample_observation = [cache](const StateVector& x, int t, RngStream& rng) {
    const Eigen::MatrixXd& c = cache->spec.observation_matrix(t);
    return Observation{linalg::sample_gaussian(c * x, cache->obs_factor, rng), t};
  };

  if (spec.observation_cov.isDiagonal()) {
    GaussianApproximation g;
    g.transition_mean = m.transition_mean;
    g.transition_jacobian = [cache](const StateVector&, int) { return cache->spec.transition; };
    g.process_cov = spec.process_cov;
    g.observation_mean = [cache](const StateVector& x, int t) -> Eigen::VectorXd {
      return cache->spec.observation_matrix(t) * x;
    };
    g.observation_jacobian = [cache](const StateVector&, int t) {
      return cache->spec.observation_matrix(t);
    };
    g.observation_noise_var = spec.observation_cov.diagonal();
    m.gaussian = std::move(g);
  }
  return LinearGaussianModel{spec, std::move(m)};
}

}  // namespace nupf
