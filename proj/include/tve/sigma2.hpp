#pragma once

#include <string>
#include <utility>
#include <vector>

#include "tve/data.hpp"
#include "tve/learners.hpp"
#include "tve/target_psi.hpp"

namespace tve {

enum class Termination { Solved, LossIncreased, MaxIter, AlreadySolved };

std::string to_string(Termination t);

// Record of a targeting run. Entry k of the paths describes the state after
// k accepted updates, so both paths have steps + 1 entries.
struct FlowTrace {
  int steps = 0;
  std::vector<double> loss_path;
  std::vector<double> pn_eif_path;
  std::vector<double> threshold_path;
  std::vector<int> direction_path;   // s_k = sign(P_n eif) at state k
  std::vector<double> step_path;     // signed epsilon increment of step k
  Termination termination = Termination::AlreadySolved;
  double epsilon_total = 0.0;
};

struct TargetedVariance {
  double sigma2 = 0.0;
  FlowTrace trace;
  NuisanceFit fit;  // final (**) nuisances
};

struct OneStepOptions {
  double d_eps = 0.001;
  int max_iter = 10000;
  // Upper bound on a step as a fraction of the Newton step |P_n eif| / I,
  // I the curvature of the loss along the path; 0 disables the bound.
  double curvature_fraction = 0.01;
  bool retruncate = true;
};

struct IterativeOptions {
  int max_rounds = 100;
};

// Mean of the squared log-RR influence function at the targeted fit.
double var_ic(const Dataset& d, const PsiTarget& pt);

// Plug-in variance at the untargeted fit.
double var_ss(const NuisanceFit& fit0);

// One-step TMLE along the universal least favorable submodel.
//
// Each micro-step recomputes the moments and clever covariates at the
// current (Qbar, g), then moves
//   logit Qbar(a, W) <- logit Qbar(a, W) - delta * H_a
//   logit g(1 | W)   <- logit g(1 | W)   - delta * H_g
// with delta = -sign(P_n eif) * min(d_eps, curvature bound), the direction in which the empirical
// loss falls (its derivative along the path is P_n eif). A step that fails
// to lower the loss is rolled back and ends the flow.
TargetedVariance var_onestep(const Dataset& d, const NuisanceFit& fit0,
                             const OneStepOptions& opts = {});

// Iterative TMLE: per round, fluctuate Qbar and then g by scalar offset
// logistic regressions on the frozen clever covariates.
TargetedVariance var_iterative(const Dataset& d, const NuisanceFit& fit0,
                               const IterativeOptions& opts = {});

// psi_hat +/- z_{(1+level)/2} sqrt(sigma2 / n).
std::pair<double, double> confidence_interval(double psi_hat, double sigma2,
                                              std::size_t n, double level = 0.95);

}  // namespace tve
