#pragma once

#include "twostage/analysis.hpp"
#include "twostage/engine.hpp"
#include "twostage/metrics.hpp"
#include "twostage/policies.hpp"
#include "twostage/random.hpp"
#include "twostage/sweep.hpp"
#include "twostage/workload.hpp"
