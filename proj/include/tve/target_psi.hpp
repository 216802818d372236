#pragma once

#include <array>

#include "tve/data.hpp"
#include "tve/learners.hpp"

namespace tve {

// Targeted fit for the point estimate psi_hat = log(psi1*) - log(psi0*).
struct PsiTarget {
  NuisanceFit fit_star;               // Qbar updated, g unchanged
  double psi_hat = 0.0;
  std::array<double, 2> epsilon{};    // accumulated over rounds
  double pn_eif_psi = 0.0;            // residual P_n of the log-RR EIF
  double residual_bound = 0.0;        // max(1e-8, sd(eif) / (sqrt(n) log n))
  int rounds = 0;
};

inline constexpr int kMaxPsiRounds = 20;

// Two-covariate logistic fluctuation
//   logit Qbar_eps = logit Qbar + eps1 A / g1 + eps2 (1 - A) / g0
// fit by offset MLE and repeated until the residual bound holds.
PsiTarget tmle_psi(const Dataset& d, const NuisanceFit& fit0);

}  // namespace tve
