#pragma once

#include <Eigen/Dense>

#include "tve/data.hpp"
#include "tve/eif.hpp"
#include "tve/learners.hpp"

// Straight-line serial versions of the per-unit kernels: one loop, running
// sums, no threading. Used to check and time the production kernels.
namespace tve::reference {

MomentSet moments(const NuisanceFit& fit);

double sigma2_plugin(const NuisanceFit& fit);

// Full variance-parameter influence function, unit by unit.
Eigen::VectorXd eif_sigma2_full(const NuisanceFit& fit, const Dataset& d);

}  // namespace tve::reference
