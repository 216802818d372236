#include "tve/reference.hpp"

#include "tve/error.hpp"

namespace tve::reference {

MomentSet moments(const NuisanceFit& fit) {
  const Eigen::Index n = fit.g1.size();
  MomentSet m;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double q1 = fit.qbar1[i], q0 = fit.qbar0[i], g1 = fit.g1[i];
    m.psi1 += q1;
    m.psi0 += q0;
    m.th1 += q1 * (1 - q1) / g1;
    m.th2 += q0 * (1 - q0) / (1 - g1);
    m.th3 += q1 * q1;
    m.th4 += q0 * q0;
    m.th5 += q1 * q0;
  }
  const double dn = static_cast<double>(n);
  m.psi1 /= dn; m.psi0 /= dn;
  m.th1 /= dn; m.th2 /= dn; m.th3 /= dn; m.th4 /= dn; m.th5 /= dn;
  if (m.psi1 < kPsiFloor || m.psi0 < kPsiFloor)
    throw Error(ErrorKind::PsiDegenerate, "reference::moments: psi below floor");
  return m;
}

double sigma2_plugin(const NuisanceFit& fit) {
  const MomentSet m = reference::moments(fit);
  double s = 0;
  for (Eigen::Index i = 0; i < fit.g1.size(); ++i) {
    const double q1 = fit.qbar1[i], q0 = fit.qbar0[i], g1 = fit.g1[i];
    const double r = q1 / m.psi1 - q0 / m.psi0;
    s += q1 * (1 - q1) / (m.psi1 * m.psi1 * g1) +
         q0 * (1 - q0) / (m.psi0 * m.psi0 * (1 - g1)) + r * r;
  }
  return s / static_cast<double>(fit.g1.size());
}

Eigen::VectorXd eif_sigma2_full(const NuisanceFit& fit, const Dataset& d) {
  const MomentSet m = reference::moments(fit);
  const double p1 = m.psi1, p0 = m.psi0;
  const double s2 = reference::sigma2_plugin(fit);
  const double c1 = -2.0 / p1 * (m.th1 + m.th3) + 2.0 * m.th5 / p0;
  const double c0 = -2.0 / p0 * (m.th2 + m.th4) + 2.0 * m.th5 / p1;
  const double a = -2.0 * (m.th1 + m.th3) / (p1 * p1 * p1) + 2.0 * m.th5 / (p1 * p1 * p0);
  const double b = -2.0 * (m.th2 + m.th4) / (p0 * p0 * p0) + 2.0 * m.th5 / (p0 * p0 * p1);
  const Eigen::Index n = fit.g1.size();
  Eigen::VectorXd out(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double q1 = fit.qbar1[i], q0 = fit.qbar0[i];
    const double g1 = fit.g1[i], g0 = 1 - g1;
    const double r = q1 / p1 - q0 / p0;
    const double integrand = q1 * (1 - q1) / (p1 * p1 * g1) +
                             q0 * (1 - q0) / (p0 * p0 * g0) + r * r;
    const double dqw = integrand - s2 + a * (q1 - p1) + b * (q0 - p0);
    const double h1 = ((1 - 2 * q1) / g1 + 2 * q1 - 2 * p1 * q0 / p0 + c1) / (p1 * p1 * g1);
    const double h0 = ((1 - 2 * q0) / g0 + 2 * q0 - 2 * p0 * q1 / p1 + c0) / (p0 * p0 * g0);
    const double hg = q0 * (1 - q0) / (p0 * p0 * g0 * g0) - q1 * (1 - q1) / (p1 * p1 * g1 * g1);
    const bool treated = d.a[i] == 1.0;
    const double q = treated ? q1 : q0;
    out[i] = dqw + (treated ? h1 : h0) * (d.y[i] - q) + hg * (d.a[i] - g1);
  }
  return out;
}

}  // namespace tve::reference
