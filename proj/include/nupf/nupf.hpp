#pragma once

#include "nupf/core.hpp"
#include "nupf/filters/gaussian.hpp"
#include "nupf/filters/particle.hpp"
#include "nupf/filters/run.hpp"
#include "nupf/harness/config.hpp"
#include "nupf/harness/experiments.hpp"
#include "nupf/harness/metrics.hpp"
#include "nupf/inference.hpp"
#include "nupf/linalg.hpp"
#include "nupf/models/linear_gaussian.hpp"
#include "nupf/models/lorenz.hpp"
#include "nupf/models/stochvol.hpp"
#include "nupf/models/tracking.hpp"
#include "nupf/nudging.hpp"
#include "nupf/rng.hpp"
#include "nupf/simulate.hpp"
#include "nupf/stats.hpp"
