#pragma once

#include "mcpdet/error.hpp"
#include "mcpdet/core.hpp"
#include "mcpdet/random.hpp"
#include "mcpdet/calibration.hpp"
#include "mcpdet/inference.hpp"
#include "mcpdet/metrics.hpp"
#include "mcpdet/optimizer.hpp"
#include "mcpdet/datasplit.hpp"
#include "mcpdet/simulator.hpp"
#include "mcpdet/io.hpp"
#include "mcpdet/commands.hpp"
