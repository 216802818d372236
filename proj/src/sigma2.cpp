#include "tve/sigma2.hpp"

#include <cmath>
#include <span>

#include <boost/math/distributions/normal.hpp>

#include "tve/eif.hpp"
#include "tve/error.hpp"
#include "tve/stats.hpp"

namespace tve {

std::string to_string(Termination t) {
  switch (t) {
    case Termination::Solved: return "solved";
    case Termination::LossIncreased: return "loss_increased";
    case Termination::MaxIter: return "max_iter";
    case Termination::AlreadySolved: return "already_solved";
  }
  return "unknown";
}

double var_ic(const Dataset& d, const PsiTarget& pt) {
  const MomentSet m = moments(pt.fit_star);
  const Eigen::VectorXd e = eif_psi(pt.fit_star, m, d);
  return stats::mean_of_squares(
      std::span<const double>(e.data(), static_cast<std::size_t>(e.size())));
}

double var_ss(const NuisanceFit& fit0) { return sigma2_plugin(fit0); }

namespace {

// Everything the flows need about one state of the nuisances.
struct State {
  NuisanceFit fit;
  MomentSet m;
  CleverCovariates h;
  double pn = 0;
  double threshold = 0;
  double loss = 0;
};

State evaluate(NuisanceFit fit, const Dataset& d) {
  State s;
  s.m = moments(fit);
  s.h = clever_covariates(fit, s.m, d);
  const EifVectors e = eif_sigma2(fit, s.m, d, s.h);
  const Eigen::VectorXd targeted = e.d_sigma_qbar + e.d_sigma_g;
  s.pn = stats::mean(std::span<const double>(targeted.data(),
                                             static_cast<std::size_t>(targeted.size())));
  s.threshold = targeting_threshold(e.full());
  s.loss = empirical_loss(fit, d);
  s.fit = std::move(fit);
  return s;
}

void record(FlowTrace& t, const State& s) {
  t.loss_path.push_back(s.loss);
  t.pn_eif_path.push_back(s.pn);
  t.threshold_path.push_back(s.threshold);
  t.direction_path.push_back(s.pn > 0 ? 1 : (s.pn < 0 ? -1 : 0));
}

// Second derivative of the empirical loss along the submodel, holding the
// clever covariates fixed: P_n[H_qbar^2 Qbar (1 - Qbar) + H_g^2 g (1 - g)].
double path_curvature(const State& s, const Dataset& d) {
  const Eigen::Index n = s.fit.g1.size();
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double q = s.fit.qbar(i, d.a[i]);
    const double g = s.fit.g1[i];
    v[i] = s.h.h_qbar[i] * s.h.h_qbar[i] * q * (1.0 - q) +
           s.h.h_g[i] * s.h.h_g[i] * g * (1.0 - g);
  }
  return stats::mean(std::span<const double>(v.data(), static_cast<std::size_t>(n)));
}

bool solved(const State& s) { return std::abs(s.pn) <= s.threshold; }

double sign(double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); }

}  // namespace

TargetedVariance var_onestep(const Dataset& d, const NuisanceFit& fit0,
                             const OneStepOptions& opts) {
  if (!(opts.d_eps > 0) || opts.max_iter < 0)
    throw Error(ErrorKind::Input, "var_onestep: d_eps must be > 0 and max_iter >= 0");
  TargetedVariance out;
  FlowTrace& trace = out.trace;
  State cur = evaluate(fit0, d);
  record(trace, cur);
  if (solved(cur)) {
    trace.termination = Termination::AlreadySolved;
  } else {
    const Eigen::Index n = cur.fit.g1.size();
    while (true) {
      if (trace.steps >= opts.max_iter) {
        trace.termination = Termination::MaxIter;
        break;
      }
      double step = opts.d_eps;
      if (opts.curvature_fraction > 0) {
        const double curv = path_curvature(cur, d);
        if (curv > 0) step = std::min(step, opts.curvature_fraction * std::abs(cur.pn) / curv);
      }
      const double delta = -sign(cur.pn) * step;
      NuisanceFit next = cur.fit;
      for (Eigen::Index i = 0; i < n; ++i) {
        next.qbar1[i] = expit(logit(next.qbar1[i]) - delta * cur.h.h1[i]);
        next.qbar0[i] = expit(logit(next.qbar0[i]) - delta * cur.h.h0[i]);
        next.g1[i] = expit(logit(next.g1[i]) - delta * cur.h.h_g[i]);
      }
      if (opts.retruncate) apply_truncation(next);
      State cand = evaluate(std::move(next), d);
      if (!(cand.loss < cur.loss)) {
        trace.termination = Termination::LossIncreased;
        break;
      }
      cur = std::move(cand);
      ++trace.steps;
      trace.epsilon_total += delta;
      trace.step_path.push_back(delta);
      record(trace, cur);
      if (solved(cur)) {
        trace.termination = Termination::Solved;
        break;
      }
    }
  }
  out.sigma2 = sigma2_plugin(cur.fit, cur.m);
  out.fit = std::move(cur.fit);
  return out;
}

TargetedVariance var_iterative(const Dataset& d, const NuisanceFit& fit0,
                               const IterativeOptions& opts) {
  TargetedVariance out;
  FlowTrace& trace = out.trace;
  State cur = evaluate(fit0, d);
  record(trace, cur);
  if (solved(cur)) {
    trace.termination = Termination::AlreadySolved;
  } else {
    const Eigen::Index n = cur.fit.g1.size();
    int increases = 0;
    trace.termination = Termination::MaxIter;
    Eigen::MatrixXd cov(n, 1);
    Eigen::VectorXd offset(n);
    while (trace.steps < opts.max_rounds) {
      NuisanceFit next = cur.fit;
      // Covariates enter with a minus sign, matching the submodel direction.
      for (Eigen::Index i = 0; i < n; ++i) {
        cov(i, 0) = -cur.h.h_qbar[i];
        offset[i] = logit(next.qbar(i, d.a[i]));
      }
      const double eps_q = fit_logistic_or_ridge(cov, d.y, &offset).coef[0];
      for (Eigen::Index i = 0; i < n; ++i) {
        next.qbar1[i] = expit(logit(next.qbar1[i]) - eps_q * cur.h.h1[i]);
        next.qbar0[i] = expit(logit(next.qbar0[i]) - eps_q * cur.h.h0[i]);
      }
      for (Eigen::Index i = 0; i < n; ++i) {
        cov(i, 0) = -cur.h.h_g[i];
        offset[i] = logit(next.g1[i]);
      }
      const double eps_g = fit_logistic_or_ridge(cov, d.a, &offset).coef[0];
      for (Eigen::Index i = 0; i < n; ++i)
        next.g1[i] = expit(logit(next.g1[i]) - eps_g * cur.h.h_g[i]);
      apply_truncation(next);

      State cand = evaluate(std::move(next), d);
      const bool increased = cand.loss > cur.loss;
      cur = std::move(cand);
      ++trace.steps;
      trace.epsilon_total += eps_q + eps_g;
      trace.step_path.push_back(eps_q);
      record(trace, cur);
      if (solved(cur)) {
        trace.termination = Termination::Solved;
        break;
      }
      if (increased && ++increases >= 2) {
        trace.termination = Termination::LossIncreased;
        break;
      }
    }
  }
  out.sigma2 = sigma2_plugin(cur.fit, cur.m);
  out.fit = std::move(cur.fit);
  return out;
}

std::pair<double, double> confidence_interval(double psi_hat, double sigma2,
                                              std::size_t n, double level) {
  if (!(sigma2 >= 0) || n == 0 || !(level > 0 && level < 1))
    throw Error(ErrorKind::Input, "confidence_interval: need sigma2 >= 0, n >= 1, level in (0,1)");
  const boost::math::normal_distribution<double> normal;
  const double z = boost::math::quantile(normal, 0.5 * (1.0 + level));
  const double half = z * std::sqrt(sigma2 / static_cast<double>(n));
  return {psi_hat - half, psi_hat + half};
}

}  // namespace tve
