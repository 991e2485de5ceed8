#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "nupf/core.hpp"
#include "nupf/filters/gaussian.hpp"
#include "nupf/filters/particle.hpp"
#include "nupf/models/linear_gaussian.hpp"
#include "nupf/nudging.hpp"
#include "nupf/rng.hpp"

namespace nupf {

enum class FilterKind { Bpf, Nupf, NupfPw, Optimal, Apf, Kalman, Ekf, Enkf };

inline const char* to_string(FilterKind k) noexcept {
  switch (k) {
    case FilterKind::Bpf: return "bpf";
    case FilterKind::Nupf: return "nupf";
    case FilterKind::NupfPw: return "nupf_pw";
    case FilterKind::Optimal: return "optimal";
    case FilterKind::Apf: return "apf";
    case FilterKind::Kalman: return "kalman";
    case FilterKind::Ekf: return "ekf";
    case FilterKind::Enkf: return "enkf";
  }
  return "unknown";
}

struct FilterSetup {
  FilterKind kind = FilterKind::Bpf;
  int particles = 100;
  NudgeConfig nudge;
  EvidenceTiming timing = EvidenceTiming::PostNudge;
  double pw_gamma = 2e-2;
  double pw_mix = -1.0;  // < 0 means 1/sqrt(N)
  const LinearGaussianSpec* linear_gaussian = nullptr;  // Optimal, NupfPw, Kalman
};

struct FilterOutput {
  std::vector<StateVector> means;
  std::vector<double> log_evidence_increments;
  std::vector<double> pre_nudge_increments;
  std::vector<double> ess;
  std::vector<int> nudge_counts;
  int degenerate_steps = 0;
  double log_evidence = 0.0;
  double pre_nudge_log_evidence = 0.0;

  void record(const StepRecord& r) {
    means.push_back(r.mean);
    log_evidence_increments.push_back(r.log_evidence_increment);
    pre_nudge_increments.push_back(r.pre_nudge_increment);
    ess.push_back(r.ess);
    nudge_counts.push_back(r.nudge_count);
    if (r.degenerate) ++degenerate_steps;
    log_evidence += r.log_evidence_increment;
    pre_nudge_log_evidence += r.pre_nudge_increment;
  }
};

/// Run any filter over an observation sequence with one uniform interface.
inline FilterOutput run_filter(const StateSpaceModel& model, std::span<const Observation> observations,
                               const FilterSetup& setup, const RngStream& rng) {
  FilterOutput out;
  const auto needs_lg = [&](const char* what) -> const LinearGaussianSpec& {
    if (setup.linear_gaussian == nullptr) {
      throw Error(Errc::UnsupportedModel, std::string(what) + " requires a linear-Gaussian model");
    }
    return *setup.linear_gaussian;
  };
  switch (setup.kind) {
    case FilterKind::Kalman: {
      const auto res = kalman_filter(needs_lg("kalman"), observations);
      for (std::size_t t = 0; t < res.means.size(); ++t) {
        StepRecord r;
        r.mean = res.means[t];
        r.log_evidence_increment = r.pre_nudge_increment = res.log_evidence_increments[t];
        out.record(r);
      }
      return out;
    }
    case FilterKind::Ekf: {
      if (setup.linear_gaussian == nullptr && !model.gaussian) {
        throw Error(Errc::UnsupportedModel, "ekf requires a Gaussian approximation");
      }
      GaussianBelief b;
      if (setup.linear_gaussian != nullptr) {
        b = prior_belief(*setup.linear_gaussian);
      } else {
        // Moment-matched prior from the sampler.
        const FilterState s = init_particles(model, 1000, rng);
        b.mean = weighted_mean(s.ensemble);
        const auto d = b.mean.size();
        b.cov = Eigen::MatrixXd::Zero(d, d);
        for (const auto& x : s.ensemble.states) b.cov += (x - b.mean) * (x - b.mean).transpose();
        b.cov /= static_cast<double>(s.ensemble.size() - 1);
      }
      for (const auto& y : observations) out.record(ekf_step(b, model, y));
      return out;
    }
    default: break;
  }

  FilterState state = init_particles(model, static_cast<std::size_t>(setup.particles), rng);
  const double mix = setup.pw_mix >= 0.0 ? setup.pw_mix : 1.0 / std::sqrt(static_cast<double>(setup.particles));
  for (const auto& y : observations) {
    switch (setup.kind) {
      case FilterKind::Bpf: out.record(bpf_step(state, model, y, rng)); break;
      case FilterKind::Nupf: out.record(nupf_step(state, model, y, setup.nudge, rng, setup.timing)); break;
      case FilterKind::NupfPw:
        out.record(nupf_pw_step(state, needs_lg("nupf_pw"), y, setup.pw_gamma, mix, rng));
        break;
      case FilterKind::Optimal: out.record(optimal_pf_step(state, needs_lg("optimal"), y, rng)); break;
      case FilterKind::Apf: out.record(apf_step(state, model, y, rng)); break;
      case FilterKind::Enkf: out.record(enkf_step(state, model, y, rng)); break;
      default: throw Error(Errc::InvalidParam, "unhandled filter kind");
    }
  }
  return out;
}

}  // namespace nupf
