#ifndef DYNATE_DYNATE_HPP
#define DYNATE_DYNATE_HPP

// Umbrella header: doubly robust estimation of two-stage dynamic average
// treatment effects with cross-fitted lasso nuisances, plus the simulation
// harness used to validate coverage.

#include "dynate/data.hpp"
#include "dynate/errors.hpp"
#include "dynate/estimator.hpp"
#include "dynate/lasso.hpp"
#include "dynate/nuisance.hpp"
#include "dynate/report.hpp"
#include "dynate/rng.hpp"
#include "dynate/simulation.hpp"
#include "dynate/stats.hpp"

#endif  // DYNATE_DYNATE_HPP
