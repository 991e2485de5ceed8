#pragma once

#include <vector>

#include "nupf/core.hpp"
#include "nupf/rng.hpp"

namespace nupf {

struct Trajectory {
  std::vector<StateVector> states;        // x_1..x_T
  std::vector<Observation> observations;  // y_1..y_T
  StateVector initial;                    // x_0
};

/// Ground truth and observations for t = 1..horizon. Prior, transition and
/// observation draws use separate substreams.
inline Trajectory simulate(const StateSpaceModel& model, int horizon, RngStream rng) {
  if (horizon < 1) throw Error(Errc::InvalidParam, "simulate: horizon must be >= 1");
  if (!model.sample_observation) {
    throw Error(Errc::UnsupportedModel, "simulate: model has no observation sampler");
  }
  RngStream prior_rng = rng.split(0);
  RngStream state_rng = rng.split(1);
  RngStream obs_rng = rng.split(2);
  Trajectory out;
  out.initial = model.sample_prior(prior_rng);
  out.states.reserve(static_cast<std::size_t>(horizon));
  out.observations.reserve(static_cast<std::size_t>(horizon));
  StateVector x = out.initial;
  for (int t = 1; t <= horizon; ++t) {
    x = model.sample_transition(x, t, state_rng);
    out.observations.push_back(model.sample_observation(x, t, obs_rng));
    out.states.push_back(x);
  }
  return out;
}

}  // namespace nupf
