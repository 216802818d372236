#include "tve/learners.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "tve/error.hpp"
#include "tve/rng.hpp"

namespace tve {

namespace {

constexpr double kDivergence = 30.0;
constexpr double kPerfectFit = 1e-6;

double neg_loglik(const Eigen::VectorXd& eta, const Eigen::VectorXd& y) {
  // log(1 + exp(eta)) - y * eta, stable for large |eta|
  double s = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    const double e = eta[i];
    const double softplus = e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
    s += softplus - y[i] * e;
  }
  return s;
}

}  // namespace

LogisticFit fit_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                         const Eigen::VectorXd* offset,
                         const LogisticOptions& opts) {
  const Eigen::Index n = x.rows();
  const Eigen::Index k = x.cols();
  if (y.size() != n) throw Error(ErrorKind::Input, "fit_logistic: row mismatch");
  if (offset && offset->size() != n)
    throw Error(ErrorKind::Input, "fit_logistic: offset length mismatch");
  if (!x.allFinite() || (offset && !offset->allFinite()))
    throw Error(ErrorKind::Input, "fit_logistic: non-finite design");

  LogisticFit fit;
  fit.coef = Eigen::VectorXd::Zero(k);
  if (k == 0) {
    fit.converged = true;
    return fit;
  }
  Eigen::VectorXd eta = offset ? *offset : Eigen::VectorXd::Zero(n);
  double objective = neg_loglik(eta, y);
  Eigen::VectorXd p(n), w(n);

  for (int it = 0; it < opts.max_iter; ++it) {
    for (Eigen::Index i = 0; i < n; ++i) {
      p[i] = expit(eta[i]);
      w[i] = p[i] * (1.0 - p[i]);
    }
    const Eigen::VectorXd score = x.transpose() * (y - p) - opts.ridge * fit.coef;
    fit.iterations = it;
    if (score.cwiseAbs().maxCoeff() < opts.tol) {
      fit.converged = true;
      break;
    }
    Eigen::MatrixXd info = x.transpose() * w.asDiagonal() * x;
    info.diagonal().array() += opts.ridge;
    const Eigen::VectorXd step = info.ldlt().solve(score);
    if (!step.allFinite()) break;

    // Step halving on the penalized objective.
    double scale = 1.0;
    Eigen::VectorXd coef_new, eta_new;
    double obj_new = objective;
    for (int half = 0; half < 30; ++half) {
      coef_new = fit.coef + scale * step;
      eta_new = x * coef_new;
      if (offset) eta_new += *offset;
      obj_new = neg_loglik(eta_new, y) + 0.5 * opts.ridge * coef_new.squaredNorm();
      if (obj_new <= objective + 1e-12 * std::abs(objective)) break;
      scale *= 0.5;
    }
    fit.coef = coef_new;
    eta = eta_new;
    objective = obj_new;
    fit.iterations = it + 1;
    if (opts.detect_separation && fit.coef.cwiseAbs().maxCoeff() > kDivergence) break;
  }
  if (!fit.converged) {
    for (Eigen::Index i = 0; i < n; ++i) p[i] = expit(eta[i]);
    const Eigen::VectorXd score = x.transpose() * (y - p) - opts.ridge * fit.coef;
    fit.converged = score.cwiseAbs().maxCoeff() < opts.tol;
  }

  if (opts.detect_separation) {
    if (fit.coef.cwiseAbs().maxCoeff() > kDivergence)
      throw Error(ErrorKind::Separation,
                  "fit_logistic: coefficients diverge (separation)");
    // Complete separation can converge numerically before the coefficients
    // reach the divergence bound: every unit fitted to within 1e-6 of its
    // label while both labels occur.
    const bool both = (y.array() > 0.5).any() && (y.array() < 0.5).any();
    if (both) {
      double worst = 0.0;
      for (Eigen::Index i = 0; i < n; ++i)
        worst = std::max(worst, std::abs(y[i] - expit(eta[i])));
      if (worst < kPerfectFit)
        throw Error(ErrorKind::Separation,
                    "fit_logistic: data are perfectly separated");
    }
  }
  return fit;
}

LogisticFit fit_logistic_or_ridge(const Eigen::MatrixXd& x,
                                  const Eigen::VectorXd& y,
                                  const Eigen::VectorXd* offset,
                                  LogisticOptions opts) {
  try {
    return fit_logistic(x, y, offset, opts);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::Separation) throw;
  }
  opts.ridge = kFallbackRidge;
  opts.detect_separation = false;
  return fit_logistic(x, y, offset, opts);
}

std::string FormulaSpec::label() const {
  std::string base;
  switch (terms) {
    case Terms::InterceptOnly: base = "intercept"; break;
    case Terms::Main: base = "main"; break;
    case Terms::Expanded: base = "expanded"; break;
  }
  if (with_treatment) base = "A+" + base;
  if (!columns.empty()) {
    base += "[";
    for (std::size_t j = 0; j < columns.size(); ++j)
      base += (j ? "," : "") + fmt::format("W{}", columns[j] + 1);
    base += "]";
  }
  return base;
}

Eigen::MatrixXd design_matrix(const FormulaSpec& spec, const Eigen::MatrixXd& w,
                              const Eigen::VectorXd* a) {
  const Eigen::Index n = w.rows();
  std::vector<Eigen::VectorXd> main;
  if (spec.with_treatment) {
    if (!a) throw Error(ErrorKind::Input, "design_matrix: treatment column missing");
    main.push_back(*a);
  }
  const std::size_t n_treat = main.size();
  if (spec.terms != Terms::InterceptOnly) {
    if (spec.columns.empty()) {
      for (Eigen::Index j = 0; j < w.cols(); ++j) main.push_back(w.col(j));
    } else {
      for (auto j : spec.columns) {
        if (static_cast<Eigen::Index>(j) >= w.cols())
          throw Error(ErrorKind::Input, "design_matrix: covariate index out of range");
        main.push_back(w.col(static_cast<Eigen::Index>(j)));
      }
    }
  }
  std::vector<Eigen::VectorXd> cols;
  cols.push_back(Eigen::VectorXd::Ones(n));
  for (const auto& c : main) cols.push_back(c);
  if (spec.terms == Terms::Expanded) {
    for (std::size_t i = 0; i < main.size(); ++i) {
      for (std::size_t j = i; j < main.size(); ++j) {
        if (i == j && i < n_treat) continue;  // A^2 == A
        cols.push_back(main[i].cwiseProduct(main[j]));
      }
    }
  }
  Eigen::MatrixXd x(n, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) x.col(static_cast<Eigen::Index>(j)) = cols[j];
  return x;
}

LearnerSpec LearnerSpec::defaults() {
  LearnerSpec s;
  for (Terms t : {Terms::InterceptOnly, Terms::Main, Terms::Expanded}) {
    s.q_specs.push_back(FormulaSpec{t, true, {}});
    s.g_specs.push_back(FormulaSpec{t, false, {}});
  }
  return s;
}

FormulaSpec LearnerSpec::misspecified_q() {
  return FormulaSpec{Terms::Main, true, {0}};
}

std::vector<FormulaSpec> LearnerSpec::effective_q_specs() const {
  if (misspecify_q) return {misspecified_q()};
  return q_specs;
}

void LearnerSpec::validate(std::size_t n) const {
  if (effective_q_specs().empty() || g_specs.empty())
    throw Error(ErrorKind::Config, "learner needs at least one q and one g spec");
  if (folds < 2 || folds > n)
    throw Error(ErrorKind::Config,
                fmt::format("folds must lie in [2, n]; got {} with n = {}", folds, n));
  const auto& b = bounds;
  if (!(0.0 < b.g_lo && b.g_lo < b.g_hi && b.g_hi < 1.0) ||
      !(0.0 < b.q_lo && b.q_lo < b.q_hi && b.q_hi < 1.0))
    throw Error(ErrorKind::Config, "truncation bounds must satisfy 0 < lo < hi < 1");
}

void apply_truncation(NuisanceFit& fit) {
  const auto& b = fit.bounds;
  std::size_t ng = 0, nq = 0;
  for (Eigen::Index i = 0; i < fit.g1.size(); ++i) {
    fit.g1[i] = std::clamp(fit.g1[i], b.g_lo, b.g_hi);
    ng += (fit.g1[i] == b.g_lo || fit.g1[i] == b.g_hi);
    fit.qbar1[i] = std::clamp(fit.qbar1[i], b.q_lo, b.q_hi);
    fit.qbar0[i] = std::clamp(fit.qbar0[i], b.q_lo, b.q_hi);
    nq += (fit.qbar1[i] == b.q_lo || fit.qbar1[i] == b.q_hi);
    nq += (fit.qbar0[i] == b.q_lo || fit.qbar0[i] == b.q_hi);
  }
  fit.n_g_truncated = ng;
  fit.n_q_truncated = nq;
}

NuisanceFit make_fit(Eigen::VectorXd qbar1, Eigen::VectorXd qbar0,
                     Eigen::VectorXd g1, const TruncationBounds& bounds) {
  if (qbar1.size() != g1.size() || qbar0.size() != g1.size())
    throw Error(ErrorKind::Input, "make_fit: length mismatch");
  NuisanceFit fit;
  fit.qbar1 = std::move(qbar1);
  fit.qbar0 = std::move(qbar0);
  fit.g1 = std::move(g1);
  fit.bounds = bounds;
  apply_truncation(fit);
  return fit;
}

std::vector<std::size_t> fold_assignment(std::size_t n, std::size_t folds,
                                         std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Stream rng(seed, 0x6f6c64ULL);
  // Fisher-Yates with an exact integer draw.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = rng.below(i);
    std::swap(order[i - 1], order[j]);
  }
  std::vector<std::size_t> fold(n);
  for (std::size_t k = 0; k < n; ++k) fold[order[k]] = k % folds;
  return fold;
}

namespace {

struct Problem {
  const Eigen::MatrixXd* w;
  const Eigen::VectorXd* a;  // treatment column for the design, or null
  const Eigen::VectorXd* target;
};

double held_out_risk(const FormulaSpec& spec, const Problem& pr,
                     const std::vector<std::size_t>& fold, std::size_t folds) {
  const Eigen::MatrixXd x = design_matrix(spec, *pr.w, pr.a);
  const Eigen::Index n = x.rows();
  double total = 0.0;
  for (std::size_t v = 0; v < folds; ++v) {
    std::vector<Eigen::Index> train, test;
    for (Eigen::Index i = 0; i < n; ++i)
      (fold[static_cast<std::size_t>(i)] == v ? test : train).push_back(i);
    if (test.empty()) continue;
    const Eigen::MatrixXd xt = x(train, Eigen::all);
    const Eigen::VectorXd yt = (*pr.target)(train);
    LogisticFit f;
    try {
      f = fit_logistic_or_ridge(xt, yt);
    } catch (const Error&) {
      return std::numeric_limits<double>::infinity();
    }
    const Eigen::VectorXd eta = x(test, Eigen::all) * f.coef;
    for (Eigen::Index k = 0; k < eta.size(); ++k) {
      const double p = std::clamp(expit(eta[k]), 1e-15, 1.0 - 1e-15);
      const double yk = (*pr.target)[test[static_cast<std::size_t>(k)]];
      total -= yk * std::log(p) + (1.0 - yk) * std::log1p(-p);
    }
  }
  if (!std::isfinite(total)) return std::numeric_limits<double>::infinity();
  return total / static_cast<double>(n);
}

Selection select(const std::vector<FormulaSpec>& specs, const Problem& pr,
                 const LearnerSpec& ls, std::uint64_t salt) {
  const std::size_t n = static_cast<std::size_t>(pr.w->rows());
  const auto fold = fold_assignment(n, ls.folds, mix64(ls.seed ^ salt));
  Selection sel{0, {}};
  double best = std::numeric_limits<double>::infinity();
  bool any = false;
  for (std::size_t s = 0; s < specs.size(); ++s) {
    const double r = held_out_risk(specs[s], pr, fold, ls.folds);
    sel.scores.push_back({specs[s].label(), r});
    if (std::isfinite(r) && (!any || r < best - 1e-12)) {
      best = r;
      sel.index = s;
      any = true;
    }
  }
  if (!any)
    throw Error(ErrorKind::DegenerateFit, "every candidate specification failed to fit");
  return sel;
}

constexpr std::uint64_t kOutcomeSalt = 0x51ULL;
constexpr std::uint64_t kTreatmentSalt = 0x67ULL;

}  // namespace

Selection select_outcome_model(const Dataset& d, const LearnerSpec& spec) {
  spec.validate(d.n());
  return select(spec.effective_q_specs(), Problem{&d.w, &d.a, &d.y}, spec, kOutcomeSalt);
}

Selection select_treatment_model(const Dataset& d, const LearnerSpec& spec) {
  spec.validate(d.n());
  return select(spec.g_specs, Problem{&d.w, nullptr, &d.a}, spec, kTreatmentSalt);
}

Eigen::VectorXd predict_propensity(const Dataset& d, const LearnerSpec& spec) {
  const auto sel = select_treatment_model(d, spec);
  const auto& g_spec = spec.g_specs[sel.index];
  const Eigen::MatrixXd xg = design_matrix(g_spec, d.w);
  const auto fg = fit_logistic_or_ridge(xg, d.a);
  const Eigen::VectorXd eta = xg * fg.coef;
  return eta.unaryExpr([](double e) { return expit(e); });
}

NuisanceFit fit_nuisances(const Dataset& d, const LearnerSpec& spec) {
  d.validate();
  const std::size_t treated = d.n_treated();
  if (treated == 0 || treated == d.n())
    throw Error(ErrorKind::PositivityDegenerate,
                "only one treatment arm is present");
  spec.validate(d.n());

  const auto q_specs = spec.effective_q_specs();
  const auto q_sel = select(q_specs, Problem{&d.w, &d.a, &d.y}, spec, kOutcomeSalt);
  const auto g_sel = select(spec.g_specs, Problem{&d.w, nullptr, &d.a}, spec, kTreatmentSalt);
  const FormulaSpec& q_spec = q_specs[q_sel.index];
  const FormulaSpec& g_spec = spec.g_specs[g_sel.index];

  const auto fq = fit_logistic_or_ridge(design_matrix(q_spec, d.w, &d.a), d.y);
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(d.a.size());
  const Eigen::VectorXd zeros = Eigen::VectorXd::Zero(d.a.size());
  const Eigen::VectorXd eta1 = design_matrix(q_spec, d.w, &ones) * fq.coef;
  const Eigen::VectorXd eta0 = design_matrix(q_spec, d.w, &zeros) * fq.coef;

  const Eigen::MatrixXd xg = design_matrix(g_spec, d.w);
  const auto fg = fit_logistic_or_ridge(xg, d.a);
  const Eigen::VectorXd etag = xg * fg.coef;

  auto prob = [](double e) { return expit(e); };
  NuisanceFit fit = make_fit(eta1.unaryExpr(prob), eta0.unaryExpr(prob),
                             etag.unaryExpr(prob), spec.bounds);
  fit.q_selected = q_spec.label();
  fit.g_selected = g_spec.label();
  return fit;
}

}  // namespace tve
