#pragma once

// Experiment orchestration shared by the CLI and the acceptance suite.

#include "embsurg/baselines.hpp"
#include "embsurg/metrics.hpp"
#include "embsurg/optimizer.hpp"
#include "embsurg/repurpose.hpp"
#include "embsurg/sampling.hpp"

namespace embsurg {}
