#pragma once

#include <Eigen/Dense>

#include "tve/data.hpp"
#include "tve/learners.hpp"

namespace tve {

inline constexpr double kPsiFloor = 1e-6;

// Empirical aggregates through which the variance of the log-RR influence
// function and its clever covariates are written.
struct MomentSet {
  double psi1 = 0;  // mean Qbar(1, W)
  double psi0 = 0;  // mean Qbar(0, W)
  double th1 = 0;   // mean Qbar1 (1 - Qbar1) / g1
  double th2 = 0;   // mean Qbar0 (1 - Qbar0) / g0
  double th3 = 0;   // mean Qbar1^2
  double th4 = 0;   // mean Qbar0^2
  double th5 = 0;   // mean Qbar1 Qbar0
};

// Throws Error{PsiDegenerate} if psi1 or psi0 falls below kPsiFloor.
MomentSet moments(const NuisanceFit& fit);

// Per-unit influence function of log(psi1 / psi0).
Eigen::VectorXd eif_psi(const NuisanceFit& fit, const MomentSet& m,
                        const Dataset& d);

// Plug-in variance of the log-RR influence function, summed unit by unit.
double sigma2_plugin(const NuisanceFit& fit, const MomentSet& m);
double sigma2_plugin(const NuisanceFit& fit);

// The same quantity written through the moments:
// th1/psi1^2 + th2/psi0^2 + th3/psi1^2 + th4/psi0^2 - 2 th5/(psi1 psi0).
double sigma2_from_moments(const MomentSet& m);

struct CleverCovariates {
  Eigen::VectorXd h1;      // Qbar clever covariate evaluated at A = 1
  Eigen::VectorXd h0;      // ... at A = 0
  Eigen::VectorXd h_qbar;  // at the observed A: A h1 + (1 - A) h0
  Eigen::VectorXd h_g;
};

CleverCovariates clever_covariates(const NuisanceFit& fit, const MomentSet& m,
                                   const Dataset& d);

// Influence function of the variance parameter, split by tangent space.
struct EifVectors {
  Eigen::VectorXd d_psi;
  Eigen::VectorXd d_sigma_qw;
  Eigen::VectorXd d_sigma_qbar;
  Eigen::VectorXd d_sigma_g;
  Eigen::VectorXd h_qbar;
  Eigen::VectorXd h_g;

  Eigen::VectorXd full() const { return d_sigma_qw + d_sigma_qbar + d_sigma_g; }
};

// The Q_W part is the plug-in integrand centred at its empirical mean plus
// the psi-derivative terms a (Qbar1 - psi1) + b (Qbar0 - psi0); both pieces
// average to exactly zero over the sample.
EifVectors eif_sigma2(const NuisanceFit& fit, const MomentSet& m,
                      const Dataset& d);
// Same, reusing clever covariates already computed for (fit, m).
EifVectors eif_sigma2(const NuisanceFit& fit, const MomentSet& m,
                      const Dataset& d, const CleverCovariates& h);

// P_n of the Qbar and g components, the quantity targeting drives to zero.
double pn_eif_sigma2(const NuisanceFit& fit, const CleverCovariates& h,
                     const Dataset& d);

// Negative Bernoulli log-likelihood of Y on Qbar(A, W) plus that of A on g,
// averaged over units.
double empirical_loss(const NuisanceFit& fit, const Dataset& d);

// sd(eif) / (sqrt(n) log n): the stopping threshold for P_n eif.
double targeting_threshold(const Eigen::VectorXd& eif);

}  // namespace tve
