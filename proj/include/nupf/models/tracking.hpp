#pragma once

#include <cmath>
#include <memory>
#include <random>
#include <vector>

#include <Eigen/Core>

#include "nupf/core.hpp"
#include "nupf/linalg.hpp"
#include "nupf/rng.hpp"

namespace nupf {

/// Maneuvering target observed through received-signal-strength sensors with
/// Student-t noise. State layout (r1, r2, v1, v2).
struct TrackingSpec {
  double kappa = 0.04;
  /// 2x4 feedback policy (the solved Riccati gain), used only by the truth model.
  Eigen::Matrix<double, 2, 4> policy = (Eigen::Matrix<double, 2, 4>() << -0.0134, 0.0, -0.0381, 0.0,
                                        0.0, -0.0134, 0.0, -0.0381)
                                           .finished();
  Eigen::Vector4d target{140.0, -140.0, 0.0, 0.0};
  Eigen::Vector4d initial{140.0, 140.0, 50.0, 0.0};
  Eigen::Matrix4d prior_cov = Eigen::Matrix4d::Identity();
  std::vector<Eigen::Vector2d> sensors = default_sensors();
  double power = 1.0;        // P0
  double sensitivity = 1e-9; // eta
  double dof = 1.01;         // nu

  static std::vector<Eigen::Vector2d> default_sensors() {
    std::vector<Eigen::Vector2d> s;
    for (double x : {100.0, 200.0})
      for (double y : {-150.0, -75.0, 0.0, 75.0, 150.0}) s.emplace_back(x, y);
    return s;
  }

  [[nodiscard]] Eigen::Matrix4d transition() const {
    Eigen::Matrix4d a = Eigen::Matrix4d::Identity();
    a.block<2, 2>(0, 2) = kappa * Eigen::Matrix2d::Identity();
    a.block<2, 2>(2, 2) = 0.99 * Eigen::Matrix2d::Identity();
    return a;
  }

  [[nodiscard]] Eigen::Matrix<double, 4, 2> input() const {
    Eigen::Matrix<double, 4, 2> b = Eigen::Matrix<double, 4, 2>::Zero();
    b.block<2, 2>(2, 0) = Eigen::Matrix2d::Identity();
    return b;
  }

  [[nodiscard]] Eigen::Matrix4d process_cov() const {
    const Eigen::Matrix2d i2 = Eigen::Matrix2d::Identity();
    Eigen::Matrix4d q;
    q.block<2, 2>(0, 0) = (kappa * kappa * kappa / 3.0) * i2;
    q.block<2, 2>(0, 2) = (kappa * kappa / 2.0) * i2;
    q.block<2, 2>(2, 0) = (kappa * kappa / 2.0) * i2;
    q.block<2, 2>(2, 2) = kappa * i2;
    return q;
  }

  void validate() const {
    if (!(dof > 1.0)) throw Error(Errc::InvalidParam, "tracking: dof must be > 1");
    if (!(kappa > 0.0)) throw Error(Errc::InvalidParam, "tracking: kappa must be > 0");
    if (sensors.empty()) throw Error(Errc::InvalidParam, "tracking: no sensors");
    if (!(power > 0.0) || !(sensitivity > 0.0)) {
      throw Error(Errc::InvalidParam, "tracking: power and sensitivity must be > 0");
    }
  }
};

/// 10 log10(P0 / |r - s|^2 + eta), in dB.
inline double rss_db(const Eigen::Vector2d& r, const Eigen::Vector2d& sensor, double power,
                     double sensitivity) {
  return 10.0 * std::log10(power / (r - sensor).squaredNorm() + sensitivity);
}

/// Log-density of the standard location-scale Student-t with `dof` degrees of freedom.
inline double student_t_log_pdf(double z, double dof) {
  return std::lgamma(0.5 * (dof + 1.0)) - std::lgamma(0.5 * dof) -
         0.5 * std::log(dof * 3.14159265358979323846) -
         0.5 * (dof + 1.0) * std::log1p(z * z / dof);
}

struct TrackingModels {
  StateSpaceModel truth;
  StateSpaceModel filter;
};

namespace detail {

struct TrackingCache {
  TrackingSpec spec;
  Eigen::Matrix4d a;
  Eigen::Matrix<double, 4, 2> b;
  Eigen::Matrix4d q_factor;
  Eigen::Matrix4d prior_factor;
  double t_log_norm = 0.0;

  [[nodiscard]] Eigen::VectorXd rss(const StateVector& x) const {
    const Eigen::Vector2d r = x.head<2>();
    Eigen::VectorXd h(static_cast<Eigen::Index>(spec.sensors.size()));
    for (std::size_t i = 0; i < spec.sensors.size(); ++i) {
      h[static_cast<Eigen::Index>(i)] = rss_db(r, spec.sensors[i], spec.power, spec.sensitivity);
    }
    return h;
  }

  /// d h_i / d r, one row per sensor (velocity columns zero).
  [[nodiscard]] Eigen::MatrixXd rss_jacobian(const StateVector& x) const {
    const Eigen::Vector2d r = x.head<2>();
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(spec.sensors.size()), 4);
    const double c = 10.0 / std::log(10.0);
    for (std::size_t i = 0; i < spec.sensors.size(); ++i) {
      const Eigen::Vector2d diff = r - spec.sensors[i];
      const double d2 = diff.squaredNorm();
      const double inner = spec.power / d2 + spec.sensitivity;
      // d/dr [P0 / d2] = -2 P0 diff / d2^2
      const Eigen::Vector2d dinner = (-2.0 * spec.power / (d2 * d2)) * diff;
      jac.block<1, 2>(static_cast<Eigen::Index>(i), 0) = (c / inner) * dinner.transpose();
    }
    return jac;
  }
};

}  // namespace detail

inline TrackingModels build_tracking(const TrackingSpec& spec) {
  spec.validate();
  auto c = std::make_shared<detail::TrackingCache>();
  c->spec = spec;
  c->a = spec.transition();
  c->b = spec.input();
  c->q_factor = linalg::psd_factor(spec.process_cov());
  c->prior_factor = linalg::psd_factor(spec.prior_cov);
  const double nu = spec.dof;
  const auto n_sensors = static_cast<int>(spec.sensors.size());

  StateSpaceModel base;
  base.state_dim = 4;
  base.obs_dim = n_sensors;
  base.sample_prior = [c](RngStream& rng) -> StateVector {
    return linalg::sample_gaussian(c->spec.initial, c->prior_factor, rng);
  };
  base.log_likelihood = [c, nu](const Observation& y, const StateVector& x) {
    const Eigen::VectorXd h = c->rss(x);
    double lp = 0.0;
    for (Eigen::Index i = 0; i < h.size(); ++i) lp += student_t_log_pdf(y.values[i] - h[i], nu);
    return lp;
  };
  base.log_likelihood_gradient = [c, nu](const Observation& y, const StateVector& x) {
    const Eigen::VectorXd h = c->rss(x);
    const Eigen::MatrixXd jac = c->rss_jacobian(x);
    Eigen::VectorXd score(h.size());
    for (Eigen::Index i = 0; i < h.size(); ++i) {
      const double z = y.values[i] - h[i];
      score[i] = (nu + 1.0) * z / (nu + z * z);  // d log t(z) / d h_i, with dz/dh = -1
    }
    return Eigen::VectorXd(jac.transpose() * score);
  };
  base.sample_observation = [c, nu](const StateVector& x, int t, RngStream& rng) {
    Eigen::VectorXd y = c->rss(x);
    std::student_t_distribution<double> noise(nu);
    for (Eigen::Index i = 0; i < y.size(); ++i) y[i] += noise(rng);
    return Observation{std::move(y), t};
  };

  StateSpaceModel filter = base;
  filter.sample_transition = [c](const StateVector& x, int, RngStream& rng) -> StateVector {
    return linalg::sample_gaussian(c->a * x, c->q_factor, rng);
  };
  filter.transition_mean = [c](const StateVector& x, int) -> StateVector { return c->a * x; };
  GaussianApproximation g;
  g.transition_mean = filter.transition_mean;
  g.transition_jacobian = [c](const StateVector&, int) { return Eigen::MatrixXd(c->a); };
  g.process_cov = spec.process_cov();
  g.observation_mean = [c](const StateVector& x, int) { return c->rss(x); };
  g.observation_jacobian = [c](const StateVector& x, int) { return c->rss_jacobian(x); };
  g.observation_noise_var = Eigen::VectorXd::Ones(n_sensors);
  filter.gaussian = std::move(g);

  StateSpaceModel truth = base;
  truth.sample_transition = [c](const StateVector& x, int, RngStream& rng) -> StateVector {
    const Eigen::Vector4d mean = c->a * x + c->b * (c->spec.policy * (x - c->spec.target));
    return linalg::sample_gaussian(mean, c->q_factor, rng);
  };
  truth.transition_mean = [c](const StateVector& x, int) -> StateVector {
    return c->a * x + c->b * (c->spec.policy * (x - c->spec.target));
  };
  return TrackingModels{std::move(truth), std::move(filter)};
}

}  // namespace nupf
