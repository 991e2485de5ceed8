#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "nupf/core.hpp"
#include "nupf/linalg.hpp"
#include "nupf/rng.hpp"

namespace nupf {

enum class SelectionScheme { Batch, Independent };

inline const char* to_string(SelectionScheme s) noexcept {
  return s == SelectionScheme::Batch ? "batch" : "independent";
}

/// Which particles get nudged at a step. Batch picks exactly M distinct
/// indices; independent includes each index with probability M/N.
struct NudgeSelector {
  SelectionScheme scheme = SelectionScheme::Batch;
  int budget = 0;  // M

  /// Sorted index set. M = 0 selects nothing.
  [[nodiscard]] std::vector<std::size_t> select(std::size_t n, RngStream& rng) const {
    if (budget < 0) throw Error(Errc::InvalidParam, "nudge budget must be >= 0");
    if (static_cast<std::size_t>(budget) > n) {
      throw Error(Errc::BudgetExceedsN, "M=" + std::to_string(budget) + " > N=" + std::to_string(n));
    }
    std::vector<std::size_t> out;
    if (budget == 0) return out;
    const auto m = static_cast<std::size_t>(budget);
    if (scheme == SelectionScheme::Batch) {
      if (m == n) {
        out.resize(n);
        std::iota(out.begin(), out.end(), std::size_t{0});
        return out;
      }
      // Partial Fisher-Yates.
      std::vector<std::size_t> pool(n);
      std::iota(pool.begin(), pool.end(), std::size_t{0});
      for (std::size_t k = 0; k < m; ++k) {
        const std::size_t j = k + rng.below(n - k);
        std::swap(pool[k], pool[j]);
      }
      out.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(m));
      std::sort(out.begin(), out.end());
      return out;
    }
    const double p = static_cast<double>(m) / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (rng.uniform() < p) out.push_back(i);
    }
    return out;
  }
};

inline std::vector<std::size_t> select_indices(const NudgeSelector& selector, std::size_t n,
                                               RngStream& rng) {
  return selector.select(n, rng);
}

enum class NudgeKind { Identity, Gradient, RandomSearch, Thresholded };

inline const char* to_string(NudgeKind k) noexcept {
  switch (k) {
    case NudgeKind::Identity: return "identity";
    case NudgeKind::Gradient: return "gradient";
    case NudgeKind::RandomSearch: return "random_search";
    case NudgeKind::Thresholded: return "thresholded";
  }
  return "unknown";
}

/// A nudging map. `velocity_kappa > 0` wraps the map with the tracking
/// velocity update v = (r_t - r_{t-1}) / kappa.
struct NudgeOperator {
  NudgeKind kind = NudgeKind::Identity;
  double gamma = 0.0;
  bool use_log = false;
  double cov_scale = 1.0;       // random search: C = cov_scale * I unless `cov` is set
  Eigen::MatrixXd cov;          // random search, optional full covariance
  int max_tries = 50;
  double threshold = 0.0;
  double velocity_kappa = 0.0;

  static NudgeOperator identity() { return {}; }
  static NudgeOperator gradient(double gamma, bool use_log = false) {
    NudgeOperator op;
    op.kind = NudgeKind::Gradient;
    op.gamma = gamma;
    op.use_log = use_log;
    return op;
  }
  static NudgeOperator random_search(double cov_scale, int max_tries = 50) {
    NudgeOperator op;
    op.kind = NudgeKind::RandomSearch;
    op.cov_scale = cov_scale;
    op.max_tries = max_tries;
    return op;
  }
  static NudgeOperator thresholded(double gamma, double threshold) {
    NudgeOperator op;
    op.kind = NudgeKind::Thresholded;
    op.gamma = gamma;
    op.threshold = threshold;
    op.use_log = true;
    return op;
  }
  [[nodiscard]] NudgeOperator with_velocity(double kappa) const {
    NudgeOperator op = *this;
    op.velocity_kappa = kappa;
    return op;
  }

  [[nodiscard]] bool is_gradient_based() const noexcept {
    return kind == NudgeKind::Gradient || kind == NudgeKind::Thresholded;
  }
};

/// x + gamma * grad g(x), or x + gamma * grad log g(x) when use_log.
inline StateVector nudge_gradient(const StateVector& x, const StateSpaceModel& model,
                                  const Observation& y, double gamma, bool use_log) {
  if (gamma == 0.0) return x;
  const Eigen::VectorXd grad =
      use_log ? log_likelihood_gradient(model, y, x) : likelihood_gradient(model, y, x);
  if (!grad.allFinite()) throw Error(Errc::NonFiniteGradient, "gradient nudge");
  return x + gamma * grad;
}

/// First x + eta, eta ~ N(0, C), with a strictly larger likelihood; x itself
/// after `max_tries` failures.
inline StateVector nudge_random_search(const StateVector& x, const StateSpaceModel& model,
                                       const Observation& y, const Eigen::MatrixXd& cov_factor,
                                       int max_tries, RngStream& rng) {
  if (max_tries < 1) throw Error(Errc::InvalidParam, "random search: max_tries must be >= 1");
  const double base = model.log_likelihood(y, x);
  for (int k = 0; k < max_tries; ++k) {
    StateVector cand = x + cov_factor * linalg::standard_normal(x.size(), rng);
    if (model.log_likelihood(y, cand) > base) return cand;
  }
  return x;
}

inline StateVector nudge_random_search(const StateVector& x, const StateSpaceModel& model,
                                       const Observation& y, double cov_scale, int max_tries,
                                       RngStream& rng) {
  if (cov_scale < 0.0) throw Error(Errc::InvalidParam, "random search: cov_scale must be >= 0");
  const Eigen::MatrixXd factor =
      std::sqrt(cov_scale) * Eigen::MatrixXd::Identity(x.size(), x.size());
  return nudge_random_search(x, model, y, factor, max_tries, rng);
}

/// Log-gradient step taken only where ||grad log g|| >= threshold. A step
/// that would lower g is discarded, so g(out) >= g(x) always holds.
inline StateVector nudge_thresholded(const StateVector& x, const StateSpaceModel& model,
                                     const Observation& y, double gamma, double threshold) {
  if (!(gamma > 0.0)) throw Error(Errc::InvalidParam, "thresholded nudge: gamma must be > 0");
  if (threshold < 0.0) throw Error(Errc::InvalidParam, "thresholded nudge: threshold must be >= 0");
  const Eigen::VectorXd grad = log_likelihood_gradient(model, y, x);
  if (!grad.allFinite()) throw Error(Errc::NonFiniteGradient, "thresholded nudge");
  if (grad.norm() < threshold) return x;
  StateVector out = x + gamma * grad;
  if (!(model.log_likelihood(y, out) >= model.log_likelihood(y, x))) return x;
  return out;
}

/// Overwrite velocities (coordinates 2, 3) with (r_t - r_{t-1}) / kappa.
inline StateVector nudge_velocity_coupling(const StateVector& nudged, const StateVector& previous,
                                           double kappa) {
  if (nudged.size() != 4 || previous.size() != 4) {
    throw Error(Errc::DimensionMismatch, "velocity coupling expects (r1, r2, v1, v2) states");
  }
  if (!(kappa > 0.0)) throw Error(Errc::InvalidParam, "velocity coupling: kappa must be > 0");
  StateVector out = nudged;
  out.tail<2>() = (nudged.head<2>() - previous.head<2>()) / kappa;
  return out;
}

/// Apply `op` to one particle; `previous` is its state at the last epoch.
inline StateVector apply_nudge(const NudgeOperator& op, const StateVector& x,
                               const StateVector& previous, const StateSpaceModel& model,
                               const Observation& y, RngStream& rng) {
  StateVector out;
  switch (op.kind) {
    case NudgeKind::Identity: out = x; break;
    case NudgeKind::Gradient: out = nudge_gradient(x, model, y, op.gamma, op.use_log); break;
    case NudgeKind::RandomSearch:
      if (op.cov.size() > 0) {
        out = nudge_random_search(x, model, y, linalg::psd_factor(op.cov), op.max_tries, rng);
      } else {
        out = nudge_random_search(x, model, y, op.cov_scale, op.max_tries, rng);
      }
      break;
    case NudgeKind::Thresholded: out = nudge_thresholded(x, model, y, op.gamma, op.threshold); break;
  }
  if (op.velocity_kappa > 0.0) out = nudge_velocity_coupling(out, previous, op.velocity_kappa);
  return out;
}

struct RateGuard {
  int particles = 1;  // N
  int budget = 0;     // M
  double gamma = 0.0;
  bool gradient = false;
};

struct RateCheck {
  bool ok = true;
  std::string message;
};

/// M <= sqrt(N), plus gamma * M <= sqrt(N) for gradient operators. Never fatal.
inline RateCheck validate_rate_guard(const RateGuard& guard) {
  const double root_n = std::sqrt(static_cast<double>(guard.particles));
  std::ostringstream msg;
  bool ok = true;
  if (static_cast<double>(guard.budget) > root_n) {
    ok = false;
    msg << "M=" << guard.budget << " exceeds sqrt(N)=" << root_n;
  }
  if (guard.gradient && guard.gamma * guard.budget > root_n) {
    if (!ok) msg << "; ";
    ok = false;
    msg << "gamma*M=" << guard.gamma * guard.budget << " exceeds sqrt(N)=" << root_n;
  }
  return {ok, msg.str()};
}

struct NudgeConfig {
  NudgeSelector selector;
  NudgeOperator op;

  [[nodiscard]] RateGuard guard(int particles) const {
    return {particles, selector.budget, op.gamma, op.is_gradient_based()};
  }
};

// Flat key/value form used by the config files.

inline std::map<std::string, std::string> to_key_values(const NudgeConfig& c) {
  auto num = [](double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
  };
  return {
      {"scheme", to_string(c.selector.scheme)},
      {"M", std::to_string(c.selector.budget)},
      {"operator.kind", to_string(c.op.kind)},
      {"operator.gamma", num(c.op.gamma)},
      {"operator.cov_scale", num(c.op.cov_scale)},
      {"operator.max_tries", std::to_string(c.op.max_tries)},
      {"operator.threshold", num(c.op.threshold)},
      {"operator.use_log", c.op.use_log ? "true" : "false"},
      {"operator.velocity_kappa", num(c.op.velocity_kappa)},
  };
}

namespace detail {

inline double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) {
    throw Error(Errc::ConfigParse, "key '" + key + "': expected a number, got '" + v + "'");
  }
  return out;
}

inline long long parse_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) {
    throw Error(Errc::ConfigParse, "key '" + key + "': expected an integer, got '" + v + "'");
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw Error(Errc::ConfigParse, "key '" + key + "': expected true/false, got '" + v + "'");
}

}  // namespace detail

/// Update `c` from the keys present in `kv`; unknown keys are ignored here.
inline void apply_key_values(NudgeConfig& c, const std::map<std::string, std::string>& kv) {
  for (const auto& [key, v] : kv) {
    if (key == "scheme") {
      if (v == "batch") {
        c.selector.scheme = SelectionScheme::Batch;
      } else if (v == "independent") {
        c.selector.scheme = SelectionScheme::Independent;
      } else {
        throw Error(Errc::ConfigParse, "key 'scheme': expected batch or independent, got '" + v + "'");
      }
    } else if (key == "M") {
      c.selector.budget = static_cast<int>(detail::parse_int(key, v));
    } else if (key == "operator.kind") {
      if (v == "identity") c.op.kind = NudgeKind::Identity;
      else if (v == "gradient") c.op.kind = NudgeKind::Gradient;
      else if (v == "random_search") c.op.kind = NudgeKind::RandomSearch;
      else if (v == "thresholded") c.op.kind = NudgeKind::Thresholded;
      else throw Error(Errc::ConfigParse, "key 'operator.kind': unknown operator '" + v + "'");
    } else if (key == "operator.gamma") {
      c.op.gamma = detail::parse_double(key, v);
    } else if (key == "operator.cov_scale") {
      c.op.cov_scale = detail::parse_double(key, v);
    } else if (key == "operator.max_tries") {
      c.op.max_tries = static_cast<int>(detail::parse_int(key, v));
    } else if (key == "operator.threshold") {
      c.op.threshold = detail::parse_double(key, v);
    } else if (key == "operator.use_log") {
      c.op.use_log = detail::parse_bool(key, v);
    } else if (key == "operator.velocity_kappa") {
      c.op.velocity_kappa = detail::parse_double(key, v);
    }
  }
}

}  // namespace nupf
