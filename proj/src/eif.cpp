#include "tve/eif.hpp"

#include <cmath>
#include <span>

#include <fmt/format.h>

#include "tve/error.hpp"
#include "tve/stats.hpp"

namespace tve {

namespace {

// Per-unit loops fan out only when the sample is large enough to repay the
// thread start-up; reductions are always pairwise and serial.
constexpr Eigen::Index kParallelMin = 16384;

double mean_of(const Eigen::VectorXd& v) {
  return stats::mean(std::span<const double>(v.data(), static_cast<std::size_t>(v.size())));
}

}  // namespace

MomentSet moments(const NuisanceFit& fit) {
  const Eigen::Index n = fit.g1.size();
  Eigen::VectorXd t1(n), t2(n), t3(n), t4(n), t5(n);
#pragma omp parallel for if (n >= kParallelMin) schedule(static)
  for (Eigen::Index i = 0; i < n; ++i) {
    const double q1 = fit.qbar1[i], q0 = fit.qbar0[i];
    const double g1 = fit.g1[i], g0 = 1.0 - g1;
    t1[i] = q1 * (1.0 - q1) / g1;
    t2[i] = q0 * (1.0 - q0) / g0;
    t3[i] = q1 * q1;
    t4[i] = q0 * q0;
    t5[i] = q1 * q0;
  }
  MomentSet m;
  m.psi1 = mean_of(fit.qbar1);
  m.psi0 = mean_of(fit.qbar0);
  if (!(m.psi1 >= kPsiFloor) || !(m.psi0 >= kPsiFloor))
    throw Error(ErrorKind::PsiDegenerate,
                fmt::format("treatment-specific mean below floor (psi1={}, psi0={})",
                            m.psi1, m.psi0));
  m.th1 = mean_of(t1);
  m.th2 = mean_of(t2);
  m.th3 = mean_of(t3);
  m.th4 = mean_of(t4);
  m.th5 = mean_of(t5);
  return m;
}

Eigen::VectorXd eif_psi(const NuisanceFit& fit, const MomentSet& m,
                        const Dataset& d) {
  const Eigen::Index n = fit.g1.size();
  Eigen::VectorXd out(n);
#pragma omp parallel for if (n >= kParallelMin) schedule(static)
  for (Eigen::Index i = 0; i < n; ++i) {
    const double a = d.a[i];
    const double g1 = fit.g1[i], g0 = 1.0 - g1;
    const double resid = d.y[i] - fit.qbar(i, a);
    const double weight = a / (m.psi1 * g1) - (1.0 - a) / (m.psi0 * g0);
    out[i] = weight * resid + fit.qbar1[i] / m.psi1 - fit.qbar0[i] / m.psi0;
  }
  return out;
}

namespace {

Eigen::VectorXd plugin_integrand(const NuisanceFit& fit, const MomentSet& m) {
  const Eigen::Index n = fit.g1.size();
  Eigen::VectorXd v(n);
  const double inv1 = 1.0 / (m.psi1 * m.psi1);
  const double inv0 = 1.0 / (m.psi0 * m.psi0);
#pragma omp parallel for if (n >= kParallelMin) schedule(static)
  for (Eigen::Index i = 0; i < n; ++i) {
    const double q1 = fit.qbar1[i], q0 = fit.qbar0[i];
    const double g1 = fit.g1[i], g0 = 1.0 - g1;
    const double diff = q1 / m.psi1 - q0 / m.psi0;
    v[i] = inv1 * q1 * (1.0 - q1) / g1 + inv0 * q0 * (1.0 - q0) / g0 + diff * diff;
  }
  return v;
}

}  // namespace

double sigma2_plugin(const NuisanceFit& fit, const MomentSet& m) {
  return mean_of(plugin_integrand(fit, m));
}

double sigma2_plugin(const NuisanceFit& fit) {
  return sigma2_plugin(fit, moments(fit));
}

double sigma2_from_moments(const MomentSet& m) {
  const double p1 = m.psi1, p0 = m.psi0;
  return m.th1 / (p1 * p1) + m.th2 / (p0 * p0) + m.th3 / (p1 * p1) +
         m.th4 / (p0 * p0) - 2.0 * m.th5 / (p1 * p0);
}

CleverCovariates clever_covariates(const NuisanceFit& fit, const MomentSet& m,
                                   const Dataset& d) {
  const Eigen::Index n = fit.g1.size();
  const double p1 = m.psi1, p0 = m.psi0;
  // Sample-level constants inside the brackets of H1 and H0.
  const double c1 = -2.0 / p1 * (m.th1 + m.th3) + 2.0 * m.th5 / p0;
  const double c0 = -2.0 / p0 * (m.th2 + m.th4) + 2.0 * m.th5 / p1;
  CleverCovariates h;
  h.h1.resize(n);
  h.h0.resize(n);
  h.h_qbar.resize(n);
  h.h_g.resize(n);
#pragma omp parallel for if (n >= kParallelMin) schedule(static)
  for (Eigen::Index i = 0; i < n; ++i) {
    const double q1 = fit.qbar1[i], q0 = fit.qbar0[i];
    const double g1 = fit.g1[i], g0 = 1.0 - g1;
    h.h1[i] = 1.0 / (p1 * p1 * g1) *
              ((1.0 - 2.0 * q1) / g1 + 2.0 * q1 - 2.0 * p1 * q0 / p0 + c1);
    h.h0[i] = 1.0 / (p0 * p0 * g0) *
              ((1.0 - 2.0 * q0) / g0 + 2.0 * q0 - 2.0 * p0 * q1 / p1 + c0);
    h.h_qbar[i] = d.a[i] == 1.0 ? h.h1[i] : h.h0[i];
    h.h_g[i] = q0 * (1.0 - q0) / (p0 * p0 * g0 * g0) -
               q1 * (1.0 - q1) / (p1 * p1 * g1 * g1);
  }
  return h;
}

EifVectors eif_sigma2(const NuisanceFit& fit, const MomentSet& m,
                      const Dataset& d) {
  return eif_sigma2(fit, m, d, clever_covariates(fit, m, d));
}

EifVectors eif_sigma2(const NuisanceFit& fit, const MomentSet& m,
                      const Dataset& d, const CleverCovariates& h) {
  const Eigen::Index n = fit.g1.size();
  const Eigen::VectorXd integrand = plugin_integrand(fit, m);
  const double centre = mean_of(integrand);
  const double p1 = m.psi1, p0 = m.psi0;
  const double dpsi1 = -2.0 / (p1 * p1 * p1) * (m.th1 + m.th3) + 2.0 * m.th5 / (p1 * p1 * p0);
  const double dpsi0 = -2.0 / (p0 * p0 * p0) * (m.th2 + m.th4) + 2.0 * m.th5 / (p0 * p0 * p1);

  EifVectors e;
  e.d_psi = eif_psi(fit, m, d);
  e.d_sigma_qw.resize(n);
  e.d_sigma_qbar.resize(n);
  e.d_sigma_g.resize(n);
#pragma omp parallel for if (n >= kParallelMin) schedule(static)
  for (Eigen::Index i = 0; i < n; ++i) {
    const double a = d.a[i];
    e.d_sigma_qw[i] = (integrand[i] - centre) + dpsi1 * (fit.qbar1[i] - p1) +
                      dpsi0 * (fit.qbar0[i] - p0);
    e.d_sigma_qbar[i] = h.h_qbar[i] * (d.y[i] - fit.qbar(i, a));
    e.d_sigma_g[i] = h.h_g[i] * (a - fit.g1[i]);
  }
  e.h_qbar = h.h_qbar;
  e.h_g = h.h_g;
  return e;
}

double pn_eif_sigma2(const NuisanceFit& fit, const CleverCovariates& h,
                     const Dataset& d) {
  const Eigen::Index n = fit.g1.size();
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double a = d.a[i];
    v[i] = h.h_qbar[i] * (d.y[i] - fit.qbar(i, a)) + h.h_g[i] * (a - fit.g1[i]);
  }
  return mean_of(v);
}

double empirical_loss(const NuisanceFit& fit, const Dataset& d) {
  const Eigen::Index n = fit.g1.size();
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double a = d.a[i], y = d.y[i];
    const double q = fit.qbar(i, a);
    const double g = fit.g1[i];
    v[i] = -(y * std::log(q) + (1.0 - y) * std::log1p(-q)) -
           (a * std::log(g) + (1.0 - a) * std::log1p(-g));
  }
  return mean_of(v);
}

double targeting_threshold(const Eigen::VectorXd& eif) {
  const auto n = static_cast<double>(eif.size());
  const double sd = stats::sample_sd(
      std::span<const double>(eif.data(), static_cast<std::size_t>(eif.size())));
  return sd / (std::sqrt(n) * std::log(n));
}

}  // namespace tve
