#pragma once

#include "desira/baselines.hpp"
#include "desira/coordinator.hpp"
#include "desira/domain.hpp"
#include "desira/generative_model.hpp"
#include "desira/graph.hpp"
#include "desira/harness.hpp"
#include "desira/io.hpp"
#include "desira/local_solver.hpp"
#include "desira/matrix.hpp"
#include "desira/risk.hpp"
#include "desira/scenario.hpp"
#include "desira/stats.hpp"
