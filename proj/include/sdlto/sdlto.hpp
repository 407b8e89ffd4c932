#pragma once
// Everything at once.

#include "errors.hpp"
#include "grid_fem.hpp"
#include "simp_core.hpp"
#include "presets.hpp"
#include "mma.hpp"
#include "surrogate.hpp"
#include "orchestrator.hpp"
#include "cli_io.hpp"
