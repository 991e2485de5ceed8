#pragma once

#include <cmath>
#include <numbers>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "nupf/core.hpp"
#include "nupf/rng.hpp"

namespace nupf::linalg {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

/// L with L * L^T = cov. Falls back to a symmetric square root for
/// semidefinite input (e.g. zero process noise).
inline Eigen::MatrixXd psd_factor(const Eigen::MatrixXd& cov) {
  if (cov.rows() != cov.cols()) throw Error(Errc::DimensionMismatch, "psd_factor: non-square");
  if (cov.size() == 0) return cov;
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (cov + cov.transpose()));
  const double tol = 1e-12 * std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
  if (eig.eigenvalues().minCoeff() < -tol) {
    throw Error(Errc::InvalidParam, "psd_factor: covariance is not positive semidefinite");
  }
  const Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

inline Eigen::VectorXd standard_normal(Eigen::Index n, RngStream& rng) {
  Eigen::VectorXd z(n);
  for (Eigen::Index i = 0; i < n; ++i) z[i] = rng.normal();
  return z;
}

inline Eigen::VectorXd sample_gaussian(const Eigen::VectorXd& mean, const Eigen::MatrixXd& factor,
                                       RngStream& rng) {
  return mean + factor * standard_normal(mean.size(), rng);
}

inline double log_normal_pdf(double x, double mean, double var) {
  const double r = x - mean;
  return -0.5 * (kLog2Pi + std::log(var) + r * r / var);
}

/// Multivariate normal density with a cached Cholesky factorisation.
class GaussianDensity {
 public:
  explicit GaussianDensity(const Eigen::MatrixXd& cov) : llt_(cov) {
    if (llt_.info() != Eigen::Success) {
      throw Error(Errc::SingularInnovation, "GaussianDensity: covariance not positive definite");
    }
    const Eigen::MatrixXd l = llt_.matrixL();
    log_det_ = 2.0 * l.diagonal().array().log().sum();
    dim_ = cov.rows();
  }

  [[nodiscard]] double log_pdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mean) const {
    const Eigen::VectorXd r = x - mean;
    const Eigen::VectorXd z = llt_.matrixL().solve(r);
    return -0.5 * (static_cast<double>(dim_) * kLog2Pi + log_det_ + z.squaredNorm());
  }

  [[nodiscard]] Eigen::MatrixXd solve(const Eigen::MatrixXd& rhs) const { return llt_.solve(rhs); }
  [[nodiscard]] double log_det() const noexcept { return log_det_; }

 private:
  Eigen::LLT<Eigen::MatrixXd> llt_;
  double log_det_ = 0.0;
  Eigen::Index dim_ = 0;
};

}  // namespace nupf::linalg
