#include "tve/target_psi.hpp"

#include <algorithm>
#include <cmath>
#include <span>

#include "tve/eif.hpp"
#include "tve/error.hpp"
#include "tve/stats.hpp"

namespace tve {

namespace {

struct Residual {
  double pn;
  double bound;
};

Residual residual(const Dataset& d, const NuisanceFit& fit, const MomentSet& m) {
  const Eigen::VectorXd e = eif_psi(fit, m, d);
  const std::span<const double> s(e.data(), static_cast<std::size_t>(e.size()));
  return {stats::mean(s), std::max(1e-8, targeting_threshold(e))};
}

}  // namespace

PsiTarget tmle_psi(const Dataset& d, const NuisanceFit& fit0) {
  const std::size_t treated = d.n_treated();
  if (treated == 0 || treated == d.n())
    throw Error(ErrorKind::PositivityDegenerate, "only one treatment arm is present");

  PsiTarget out;
  out.fit_star = fit0;
  NuisanceFit& fit = out.fit_star;
  const Eigen::Index n = fit.g1.size();

  MomentSet m = moments(fit);
  Residual r = residual(d, fit, m);
  Eigen::MatrixXd x(n, 2);
  Eigen::VectorXd offset(n);
  while (std::abs(r.pn) > r.bound && out.rounds < kMaxPsiRounds) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double a = d.a[i];
      x(i, 0) = a / fit.g1[i];
      x(i, 1) = (1.0 - a) / (1.0 - fit.g1[i]);
      offset[i] = logit(fit.qbar(i, a));
    }
    const auto eps = fit_logistic_or_ridge(x, d.y, &offset).coef;
    for (Eigen::Index i = 0; i < n; ++i) {
      fit.qbar1[i] = expit(logit(fit.qbar1[i]) + eps[0] / fit.g1[i]);
      fit.qbar0[i] = expit(logit(fit.qbar0[i]) + eps[1] / (1.0 - fit.g1[i]));
    }
    apply_truncation(fit);
    out.epsilon[0] += eps[0];
    out.epsilon[1] += eps[1];
    ++out.rounds;
    m = moments(fit);
    r = residual(d, fit, m);
  }
  out.psi_hat = std::log(m.psi1) - std::log(m.psi0);
  out.pn_eif_psi = r.pn;
  out.residual_bound = r.bound;
  return out;
}

}  // namespace tve
