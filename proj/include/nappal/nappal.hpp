#pragma once

// Umbrella header for the NAPP-AL solver library.

#include "nappal/bregman.hpp"
#include "nappal/config.hpp"
#include "nappal/diagnostics.hpp"
#include "nappal/linalg.hpp"
#include "nappal/model.hpp"
#include "nappal/problems.hpp"
#include "nappal/prox.hpp"
#include "nappal/regularizer.hpp"
#include "nappal/rng.hpp"
#include "nappal/solver.hpp"
#include "nappal/trace.hpp"
