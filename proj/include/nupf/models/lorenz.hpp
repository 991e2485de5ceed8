#pragma once

#include <cmath>
#include <memory>

#include <Eigen/Core>

#include "nupf/core.hpp"
#include "nupf/linalg.hpp"
#include "nupf/rng.hpp"

namespace nupf {

// ---------------------------------------------------------------------------
// Stochastic Lorenz 63
// ---------------------------------------------------------------------------

struct Lorenz63Spec {
  double a = 10.0;
  double r = 28.0;
  double b = 8.0 / 3.0;
  double step = 1e-3;       // Euler-Maruyama integration step
  int obs_every = 40;       // inner steps per observation epoch (t_s)
  double obs_scale = 0.8;   // k_o
  double obs_noise_var = 1.0;
  Eigen::Vector3d initial{-5.91652, -5.52332, 24.5723};
  double prior_var = 0.0;   // filter prior N(initial, prior_var I)

  void validate() const {
    if (!(step > 0.0)) throw Error(Errc::InvalidParam, "lorenz63: step must be > 0");
    if (obs_every < 1) throw Error(Errc::InvalidParam, "lorenz63: obs_every must be >= 1");
    if (!(obs_noise_var > 0.0)) throw Error(Errc::InvalidParam, "lorenz63: obs_noise_var must be > 0");
    if (prior_var < 0.0) throw Error(Errc::InvalidParam, "lorenz63: prior_var must be >= 0");
  }

  /// Filter model with b replaced by b + eps.
  [[nodiscard]] Lorenz63Spec misspecified(double eps) const {
    Lorenz63Spec s = *this;
    s.b += eps;
    return s;
  }
};

inline Eigen::Vector3d lorenz63_drift(const Eigen::Vector3d& x, const Lorenz63Spec& spec) {
  return {-spec.a * (x[0] - x[1]), spec.r * x[0] - x[1] - x[0] * x[2], x[0] * x[1] - spec.b * x[2]};
}

/// One Euler-Maruyama step: x + T f(x) + sqrt(T) u, u ~ N(0, I_3).
inline StateVector euler_maruyama_l63(const StateVector& x, const Lorenz63Spec& spec, RngStream& rng) {
  const Eigen::Vector3d x3 = x;
  const double noise = std::sqrt(spec.step);
  Eigen::Vector3d out = x3 + spec.step * lorenz63_drift(x3, spec);
  for (int i = 0; i < 3; ++i) out[i] += noise * rng.normal();
  return out;
}

inline StateSpaceModel build_lorenz63(const Lorenz63Spec& spec) {
  spec.validate();
  auto s = std::make_shared<const Lorenz63Spec>(spec);
  StateSpaceModel m;
  m.state_dim = 3;
  m.obs_dim = 1;
  m.sample_prior = [s](RngStream& rng) -> StateVector {
    StateVector x = s->initial;
    if (s->prior_var > 0.0) {
      const double sd = std::sqrt(s->prior_var);
      for (int i = 0; i < 3; ++i) x[i] += sd * rng.normal();
    }
    return x;
  };
  m.sample_transition = [s](const StateVector& x, int, RngStream& rng) -> StateVector {
    const double noise = std::sqrt(s->step);
    Eigen::Vector3d cur = x;
    for (int k = 0; k < s->obs_every; ++k) {
      const Eigen::Vector3d f = lorenz63_drift(cur, *s);
      for (int i = 0; i < 3; ++i) cur[i] += s->step * f[i] + noise * rng.normal();
    }
    return cur;
  };
  m.log_likelihood = [s](const Observation& y, const StateVector& x) {
    return linalg::log_normal_pdf(y.values[0], s->obs_scale * x[0], s->obs_noise_var);
  };
  m.log_likelihood_gradient = [s](const Observation& y, const StateVector& x) {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(3);
    g[0] = s->obs_scale * (y.values[0] - s->obs_scale * x[0]) / s->obs_noise_var;
    return g;
  };
  m.sample_observation = [s](const StateVector& x, int t, RngStream& rng) {
    Eigen::VectorXd y(1);
    y[0] = s->obs_scale * x[0] + std::sqrt(s->obs_noise_var) * rng.normal();
    return Observation{std::move(y), t};
  };
  return m;
}

// ---------------------------------------------------------------------------
// Stochastic Lorenz 96
// ---------------------------------------------------------------------------

struct Lorenz96Spec {
  int dim = 40;
  double forcing = 8.0;
  double step = 1e-2;
  int obs_every = 10;
  double obs_noise_var = 1.0;
  int burn_in = 1000;  // inner steps run from U(0,1)^d to initialise

  void validate() const {
    if (dim < 4) throw Error(Errc::InvalidParam, "lorenz96: dim must be >= 4");
    if (!(step > 0.0)) throw Error(Errc::InvalidParam, "lorenz96: step must be > 0");
    if (obs_every < 1) throw Error(Errc::InvalidParam, "lorenz96: obs_every must be >= 1");
    if (!(obs_noise_var > 0.0)) throw Error(Errc::InvalidParam, "lorenz96: obs_noise_var must be > 0");
    if (burn_in < 0) throw Error(Errc::InvalidParam, "lorenz96: burn_in must be >= 0");
  }

  /// Observed coordinates x_1, x_3, ... (1-based), i.e. even 0-based indices.
  [[nodiscard]] int observed_count() const noexcept { return dim / 2; }
};

/// (x_{i+1} - x_{i-2}) x_{i-1} - x_i + F with circular indexing.
inline Eigen::VectorXd lorenz96_drift(const Eigen::VectorXd& x, double forcing) {
  const Eigen::Index d = x.size();
  Eigen::VectorXd f(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    const Eigen::Index ip1 = (i + 1) % d;
    const Eigen::Index im1 = (i + d - 1) % d;
    const Eigen::Index im2 = (i + d - 2) % d;
    f[i] = (x[ip1] - x[im2]) * x[im1] - x[i] + forcing;
  }
  return f;
}

inline void euler_maruyama_l96_inplace(Eigen::VectorXd& x, const Lorenz96Spec& spec, RngStream& rng) {
  const double noise = std::sqrt(spec.step);
  const Eigen::VectorXd f = lorenz96_drift(x, spec.forcing);
  for (Eigen::Index i = 0; i < x.size(); ++i) x[i] += spec.step * f[i] + noise * rng.normal();
}

inline StateSpaceModel build_lorenz96(const Lorenz96Spec& spec) {
  spec.validate();
  auto s = std::make_shared<const Lorenz96Spec>(spec);
  const int dy = spec.observed_count();
  StateSpaceModel m;
  m.state_dim = spec.dim;
  m.obs_dim = dy;
  m.sample_prior = [s](RngStream& rng) -> StateVector {
    Eigen::VectorXd x(s->dim);
    for (int i = 0; i < s->dim; ++i) x[i] = rng.uniform();
    for (int k = 0; k < s->burn_in; ++k) euler_maruyama_l96_inplace(x, *s, rng);
    return x;
  };
  m.sample_transition = [s](const StateVector& x, int, RngStream& rng) -> StateVector {
    Eigen::VectorXd cur = x;
    for (int k = 0; k < s->obs_every; ++k) euler_maruyama_l96_inplace(cur, *s, rng);
    return cur;
  };
  m.log_likelihood = [s, dy](const Observation& y, const StateVector& x) {
    double ss = 0.0;
    for (int j = 0; j < dy; ++j) {
      const double r = y.values[j] - x[2 * j];
      ss += r * r;
    }
    return -0.5 * (dy * (linalg::kLog2Pi + std::log(s->obs_noise_var)) + ss / s->obs_noise_var);
  };
  m.log_likelihood_gradient = [s, dy](const Observation& y, const StateVector& x) {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(x.size());
    for (int j = 0; j < dy; ++j) g[2 * j] = (y.values[j] - x[2 * j]) / s->obs_noise_var;
    return g;
  };
  m.sample_observation = [s, dy](const StateVector& x, int t, RngStream& rng) {
    Eigen::VectorXd y(dy);
    const double sd = std::sqrt(s->obs_noise_var);
    for (int j = 0; j < dy; ++j) y[j] = x[2 * j] + sd * rng.normal();
    return Observation{std::move(y), t};
  };

  // Observation side only: the composed Euler kernel has no closed-form
  // linearisation, so EKF is unsupported here; EnKF samples the kernel.
  GaussianApproximation g;
  g.observation_mean = [dy](const StateVector& x, int) -> Eigen::VectorXd {
    Eigen::VectorXd h(dy);
    for (int j = 0; j < dy; ++j) h[j] = x[2 * j];
    return h;
  };
  g.observation_jacobian = [dy](const StateVector& x, int) {
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(dy, x.size());
    for (int j = 0; j < dy; ++j) h(j, 2 * j) = 1.0;
    return h;
  };
  g.observation_noise_var = Eigen::VectorXd::Constant(dy, spec.obs_noise_var);
  m.gaussian = std::move(g);
  return m;
}

}  // namespace nupf
