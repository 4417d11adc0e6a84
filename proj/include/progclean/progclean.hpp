#pragma once

// Core library. config.hpp and service.hpp additionally need the vendored
// json.hpp and httplib.h on the include path.

#include "progclean/baselines.hpp"
#include "progclean/common.hpp"
#include "progclean/dataset.hpp"
#include "progclean/detector.hpp"
#include "progclean/estimator.hpp"
#include "progclean/harness.hpp"
#include "progclean/models.hpp"
#include "progclean/sampler.hpp"
#include "progclean/updater.hpp"
