#pragma once

#include <span>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "nupf/core.hpp"
#include "nupf/filters/particle.hpp"
#include "nupf/linalg.hpp"
#include "nupf/models/linear_gaussian.hpp"
#include "nupf/rng.hpp"

namespace nupf {

struct GaussianBelief {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

struct KalmanResult {
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covariances;
  std::vector<double> log_evidence_increments;
  double log_evidence = 0.0;
};

namespace detail {

/// Measurement update of a Gaussian belief; returns log N(y; h, S).
inline double kalman_update(GaussianBelief& b, const Eigen::VectorXd& y, const Eigen::VectorXd& predicted_y,
                            const Eigen::MatrixXd& h, const Eigen::MatrixXd& r) {
  const Eigen::MatrixXd s = h * b.cov * h.transpose() + r;
  const linalg::GaussianDensity dens(s);
  const Eigen::MatrixXd gain = dens.solve(h * b.cov).transpose();
  const double inc = dens.log_pdf(y, predicted_y);
  b.mean += gain * (y - predicted_y);
  const auto d = b.mean.size();
  // Joseph form keeps the covariance symmetric PSD.
  const Eigen::MatrixXd ikh = Eigen::MatrixXd::Identity(d, d) - gain * h;
  b.cov = ikh * b.cov * ikh.transpose() + gain * r * gain.transpose();
  return inc;
}

}  // namespace detail

/// Exact filtering recursions and log p(y_{1:T}).
inline KalmanResult kalman_filter(const LinearGaussianSpec& spec, std::span<const Observation> observations) {
  spec.validate();
  GaussianBelief b{spec.prior_mean, spec.prior_cov};
  KalmanResult out;
  for (const auto& y : observations) {
    b.mean = spec.transition * b.mean;
    b.cov = spec.transition * b.cov * spec.transition.transpose() + spec.process_cov;
    const Eigen::MatrixXd& c = spec.observation_matrix(y.time_index);
    const double inc = detail::kalman_update(b, y.values, c * b.mean, c, spec.observation_cov);
    out.log_evidence_increments.push_back(inc);
    out.log_evidence += inc;
    out.means.push_back(b.mean);
    out.covariances.push_back(b.cov);
  }
  return out;
}

inline GaussianBelief prior_belief(const LinearGaussianSpec& spec) { return {spec.prior_mean, spec.prior_cov}; }

/// Extended Kalman filter step using the model's linearisation hooks.
inline StepRecord ekf_step(GaussianBelief& b, const StateSpaceModel& model, const Observation& y) {
  if (!model.gaussian || !model.gaussian->transition_jacobian || model.gaussian->process_cov.size() == 0) {
    throw Error(Errc::UnsupportedModel, "ekf: model has no transition linearisation");
  }
  const auto& g = *model.gaussian;
  const int t = y.time_index;
  const Eigen::MatrixXd f = g.transition_jacobian(b.mean, t);
  b.mean = g.transition_mean(b.mean, t);
  b.cov = f * b.cov * f.transpose() + g.process_cov;
  const Eigen::MatrixXd h = g.observation_jacobian(b.mean, t);
  const Eigen::MatrixXd r = g.observation_noise_var.asDiagonal();
  StepRecord rec;
  rec.log_evidence_increment = detail::kalman_update(b, y.values, g.observation_mean(b.mean, t), h, r);
  rec.pre_nudge_increment = rec.log_evidence_increment;
  rec.mean = b.mean;
  return rec;
}

/// Stochastic (perturbed-observation) EnKF step. Forecast members come from
/// the model's transition sampler; the gain uses ensemble covariances and,
/// when d_y exceeds the ensemble size, the Woodbury form of S^{-1}.
inline StepRecord enkf_step(FilterState& state, const StateSpaceModel& model, const Observation& y,
                            const RngStream& rng) {
  if (!model.gaussian || !model.gaussian->observation_mean) {
    throw Error(Errc::UnsupportedModel, "enkf: model has no observation mean");
  }
  const std::size_t n = state.ensemble.size();
  if (n < 2) throw Error(Errc::InvalidParam, "enkf: ensemble size must be >= 2");
  const auto& g = *model.gaussian;
  const int t = state.time + 1;
  const RngStream step_rng = rng.split(static_cast<std::uint64_t>(t));
  std::vector<StateVector> fc = detail::propagate(state, model, t, step_rng);

  const auto dx = fc.front().size();
  const auto dy = y.values.size();
  const auto ni = static_cast<Eigen::Index>(n);
  Eigen::MatrixXd x(dx, ni);
  Eigen::MatrixXd hx(dy, ni);
  for (Eigen::Index i = 0; i < ni; ++i) {
    x.col(i) = fc[static_cast<std::size_t>(i)];
    hx.col(i) = g.observation_mean(fc[static_cast<std::size_t>(i)], y.time_index);
  }
  const Eigen::VectorXd x_bar = x.rowwise().mean();
  const Eigen::VectorXd h_bar = hx.rowwise().mean();
  const double scale = 1.0 / std::sqrt(static_cast<double>(n - 1));
  const Eigen::MatrixXd xa = (x.colwise() - x_bar) * scale;
  const Eigen::MatrixXd ya = (hx.colwise() - h_bar) * scale;
  const Eigen::VectorXd r = g.observation_noise_var;
  const Eigen::VectorXd r_inv = r.cwiseInverse();

  // innovation residuals d_i = y + eps_i - h(x_i)
  const RngStream pert = step_rng.split(stream::kPerturb);
  Eigen::MatrixXd d(dy, ni);
  for (Eigen::Index i = 0; i < ni; ++i) {
    RngStream ri = pert.split(static_cast<std::uint64_t>(i));
    for (Eigen::Index j = 0; j < dy; ++j) d(j, i) = y.values[j] + std::sqrt(r[j]) * ri.normal() - hx(j, i);
  }
  // S = Ya Ya' + R
  Eigen::MatrixXd s_inv_d;
  double log_det_s = 0.0;
  double quad = 0.0;
  const Eigen::VectorXd innov = y.values - h_bar;
  if (dy > ni) {
    const Eigen::MatrixXd rinv_ya = r_inv.asDiagonal() * ya;
    Eigen::MatrixXd core = Eigen::MatrixXd::Identity(ni, ni) + ya.transpose() * rinv_ya;
    const Eigen::LLT<Eigen::MatrixXd> llt(core);
    if (llt.info() != Eigen::Success) throw Error(Errc::SingularInnovation, "enkf: Woodbury core");
    auto apply_s_inv = [&](const Eigen::MatrixXd& m) -> Eigen::MatrixXd {
      const Eigen::MatrixXd rm = r_inv.asDiagonal() * m;
      return rm - rinv_ya * llt.solve(rinv_ya.transpose() * m);
    };
    s_inv_d = apply_s_inv(d);
    const Eigen::MatrixXd lc = llt.matrixL();
    log_det_s = r.array().log().sum() + 2.0 * lc.diagonal().array().log().sum();
    quad = innov.dot(apply_s_inv(innov).col(0));
  } else {
    const Eigen::MatrixXd s = ya * ya.transpose() + Eigen::MatrixXd(r.asDiagonal());
    const linalg::GaussianDensity dens(s);
    s_inv_d = dens.solve(d);
    log_det_s = dens.log_det();
    quad = innov.dot(dens.solve(innov).col(0));
  }
  if (dx * dy < ni * ni) {
    x += (xa * ya.transpose()) * s_inv_d;
  } else {
    x += xa * (ya.transpose() * s_inv_d);
  }

  StepRecord rec;
  rec.log_evidence_increment = -0.5 * (static_cast<double>(dy) * linalg::kLog2Pi + log_det_s + quad);
  rec.pre_nudge_increment = rec.log_evidence_increment;
  rec.mean = x.rowwise().mean();
  rec.ess = static_cast<double>(n);
  std::vector<StateVector> states(n);
  for (Eigen::Index i = 0; i < ni; ++i) states[static_cast<std::size_t>(i)] = x.col(i);
  state.ensemble = ParticleEnsemble::uniform(std::move(states));
  state.time = t;
  state.cumulative_log_evidence += rec.log_evidence_increment;
  return rec;
}

}  // namespace nupf
