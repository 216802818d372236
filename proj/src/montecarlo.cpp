#include "tve/montecarlo.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <span>

#include <boost/math/quadrature/gauss.hpp>
#include <fmt/core.h>
#include <omp.h>

#include "tve/eif.hpp"
#include "tve/error.hpp"
#include "tve/rng.hpp"
#include "tve/stats.hpp"
#include "tve/target_psi.hpp"

namespace tve {

std::string to_string(Estimator e) {
  switch (e) {
    case Estimator::Ic: return "ic";
    case Estimator::Ss: return "ss";
    case Estimator::Iterative: return "it";
    case Estimator::Onestep: return "os";
  }
  return "unknown";
}

Estimator parse_estimator(const std::string& s) {
  for (Estimator e : kAllEstimators)
    if (s == to_string(e)) return e;
  if (s == "iterative") return Estimator::Iterative;
  if (s == "onestep") return Estimator::Onestep;
  throw Error(ErrorKind::Config, fmt::format("unknown estimator '{}'", s));
}

namespace {

struct Rule {
  std::vector<double> x;
  std::vector<double> w;
};

// Gauss-Legendre rule mapped to [0, 1].
const Rule& unit_rule() {
  static const Rule rule = [] {
    using G = boost::math::quadrature::gauss<double, kQuadratureNodes>;
    Rule r;
    const auto& t = G::abscissa();
    const auto& wt = G::weights();
    for (std::size_t k = 0; k < t.size(); ++k) {
      if (t[k] == 0.0) {
        r.x.push_back(0.5);
        r.w.push_back(0.5 * wt[k]);
        continue;
      }
      r.x.push_back(0.5 * (1.0 - t[k]));
      r.w.push_back(0.5 * wt[k]);
      r.x.push_back(0.5 * (1.0 + t[k]));
      r.w.push_back(0.5 * wt[k]);
    }
    return r;
  }();
  return rule;
}

// Integrates f(w1, w2, w3) over the unit cube; f returns several values.
template <std::size_t K, class F>
std::array<double, K> cube_integral(F f) {
  const Rule& r = unit_rule();
  std::array<double, K> total{};
  for (std::size_t i = 0; i < r.x.size(); ++i) {
    std::array<double, K> plane{};
    for (std::size_t j = 0; j < r.x.size(); ++j) {
      std::array<double, K> line{};
      for (std::size_t k = 0; k < r.x.size(); ++k) {
        const std::array<double, K> v = f(r.x[i], r.x[j], r.x[k]);
        for (std::size_t c = 0; c < K; ++c) line[c] += r.w[k] * v[c];
      }
      for (std::size_t c = 0; c < K; ++c) plane[c] += r.w[j] * line[c];
    }
    for (std::size_t c = 0; c < K; ++c) total[c] += r.w[i] * plane[c];
  }
  return total;
}

std::array<double, 2> true_means(const DgdSpec& dgd) {
  return cube_integral<2>([&](double w1, double w2, double w3) {
    return std::array<double, 2>{expit(outcome_logit(dgd, w1, w2, w3, 1.0)),
                                 expit(outcome_logit(dgd, w1, w2, w3, 0.0))};
  });
}

bool is_replication_failure(ErrorKind k) {
  return k == ErrorKind::PositivityDegenerate || k == ErrorKind::PsiDegenerate ||
         k == ErrorKind::DegenerateFit || k == ErrorKind::Separation;
}

std::size_t slot(Estimator e) { return static_cast<std::size_t>(e); }

}  // namespace

double psi_truth(const DgdSpec& dgd) {
  if (dgd.beta_psi == 0.0) return 0.0;
  const auto m = true_means(dgd);
  return std::log(m[0]) - std::log(m[1]);
}

CubeNuisance true_nuisance(const DgdSpec& dgd) {
  return {[dgd](double w1, double w2, double w3) { return expit(treatment_logit(dgd, w1, w2, w3)); },
          [dgd](double w1, double w2, double w3) { return expit(outcome_logit(dgd, w1, w2, w3, 1.0)); },
          [dgd](double w1, double w2, double w3) { return expit(outcome_logit(dgd, w1, w2, w3, 0.0)); }};
}

double sigma2_truth(const CubeNuisance& t) {
  const auto m = cube_integral<2>([&](double w1, double w2, double w3) {
    return std::array<double, 2>{t.qbar1(w1, w2, w3), t.qbar0(w1, w2, w3)};
  });
  const double p1 = m[0], p0 = m[1];
  return cube_integral<1>([&](double w1, double w2, double w3) {
    const double g1 = t.g1(w1, w2, w3);
    const double q1 = t.qbar1(w1, w2, w3);
    const double q0 = t.qbar0(w1, w2, w3);
    const double r = q1 / p1 - q0 / p0;
    return std::array<double, 1>{q1 * (1 - q1) / (p1 * p1 * g1) +
                                 q0 * (1 - q0) / (p0 * p0 * (1 - g1)) + r * r};
  })[0];
}

double sigma2_truth(const DgdSpec& dgd) { return sigma2_truth(true_nuisance(dgd)); }

McVariance mc_variance(const std::vector<double>& psi_hats, std::size_t n) {
  McVariance out;
  const std::size_t r = psi_hats.size();
  if (r < 2) return out;
  const std::span<const double> s(psi_hats);
  const double mu = stats::mean(s);
  out.var_raw = stats::sample_variance(s);
  std::vector<double> c4(r);
  for (std::size_t i = 0; i < r; ++i) {
    const double d = psi_hats[i] - mu;
    c4[i] = d * d * d * d;
  }
  const double m4 = stats::mean(c4);
  const double v = std::max(0.0, m4 - out.var_raw * out.var_raw);
  const double dn = static_cast<double>(n);
  out.scaled = dn * out.var_raw;
  out.scaled_se = dn * std::sqrt(v / static_cast<double>(r));
  return out;
}

void ScenarioConfig::validate() const {
  if (n < 2) throw Error(ErrorKind::Config, "scenario: n must be >= 2");
  if (reps < 1) throw Error(ErrorKind::Config, "scenario: reps must be >= 1");
  if (!(level > 0 && level < 1)) throw Error(ErrorKind::Config, "scenario: level must lie in (0, 1)");
  if (!std::isfinite(dgd.beta_p) || !std::isfinite(dgd.beta_psi))
    throw Error(ErrorKind::Config, "scenario: beta_p and beta_psi must be finite");
  learner.validate(n);
}

bool ScenarioConfig::uses(Estimator e) const {
  for (Estimator x : estimators)
    if (x == e) return true;
  return false;
}

RepResult run_replication(const ScenarioConfig& cfg, double truth, std::size_t rep) {
  RepResult r;
  r.rep = rep;
  r.seed_stream = stream_key(cfg.seed, rep);
  try {
    const SimulatedData sim = simulate(cfg.dgd, cfg.n, cfg.seed, rep);
    const Dataset& d = sim.data;
    LearnerSpec ls = cfg.learner;
    ls.seed = mix64(r.seed_stream ^ cfg.learner.seed);
    const NuisanceFit f0 = fit_nuisances(d, ls);
    r.n_g_trunc = f0.n_g_truncated;
    r.n_q_trunc = f0.n_q_truncated;
    const PsiTarget pt = tmle_psi(d, f0);
    r.psi_hat = pt.psi_hat;
    for (Estimator e : kAllEstimators) {
      if (!cfg.uses(e)) continue;
      double s2 = 0.0;
      switch (e) {
        case Estimator::Ic: s2 = var_ic(d, pt); break;
        case Estimator::Ss: s2 = var_ss(f0); break;
        case Estimator::Iterative: {
          const TargetedVariance tv = var_iterative(d, f0, cfg.iterative);
          s2 = tv.sigma2;
          r.steps_it = tv.trace.steps;
          r.term_it = to_string(tv.trace.termination);
          break;
        }
        case Estimator::Onestep: {
          const TargetedVariance tv = var_onestep(d, f0, cfg.onestep);
          s2 = tv.sigma2;
          r.steps_os = tv.trace.steps;
          r.term_os = to_string(tv.trace.termination);
          break;
        }
      }
      const auto [lo, hi] = confidence_interval(pt.psi_hat, s2, cfg.n, cfg.level);
      const std::size_t k = slot(e);
      r.sigma2[k] = s2;
      r.ci_lo[k] = lo;
      r.ci_hi[k] = hi;
      r.covered[k] = lo <= truth && truth <= hi;
      r.reject[k] = !(lo <= 0.0 && 0.0 <= hi);
    }
  } catch (const Error& e) {
    if (!is_replication_failure(e.kind())) throw;
    RepResult failed;
    failed.rep = r.rep;
    failed.seed_stream = r.seed_stream;
    failed.failed_reason = std::string(to_string(e.kind()));
    return failed;
  }
  return r;
}

std::vector<RepResult> run_replications(const ScenarioConfig& cfg, int jobs) {
  cfg.validate();
  const double truth = psi_truth(cfg.dgd);
  const std::size_t reps = cfg.reps;
  std::vector<RepResult> rows(reps);
  std::vector<std::exception_ptr> errors(reps);
  const int threads = jobs > 0 ? jobs : omp_get_max_threads();
  const auto count = static_cast<long long>(reps);
#pragma omp parallel for schedule(dynamic) num_threads(threads)
  for (long long k = 0; k < count; ++k) {
    const auto i = static_cast<std::size_t>(k);
    try {
      rows[i] = run_replication(cfg, truth, cfg.first_rep + i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return rows;
}

ScenarioResult run_scenario(const ScenarioConfig& cfg, int jobs) {
  return aggregate({cfg.dgd, cfg.n}, run_replications(cfg, jobs));
}

ScenarioResult run_scenario_serial(const ScenarioConfig& cfg) {
  cfg.validate();
  const double truth = psi_truth(cfg.dgd);
  std::vector<RepResult> rows;
  rows.reserve(cfg.reps);
  for (std::size_t i = 0; i < cfg.reps; ++i)
    rows.push_back(run_replication(cfg, truth, cfg.first_rep + i));
  return aggregate({cfg.dgd, cfg.n}, std::move(rows));
}

ScenarioResult aggregate(const ScenarioKey& key, std::vector<RepResult> reps) {
  ScenarioResult out;
  out.key = key;
  out.reps = reps.size();
  // Fixed reduction order whatever order the rows arrive in.
  std::stable_sort(reps.begin(), reps.end(),
                   [](const RepResult& x, const RepResult& y) { return x.rep < y.rep; });
  std::vector<double> psi;
  for (const RepResult& r : reps) {
    if (r.failed())
      ++out.n_failed;
    else
      psi.push_back(r.psi_hat);
  }
  if (psi.empty())
    throw Error(ErrorKind::Scenario,
                fmt::format("all {} replications failed (dgd={}, beta_p={}, beta_psi={}, n={})",
                            reps.size(), to_string(key.dgd.kind), key.dgd.beta_p,
                            key.dgd.beta_psi, key.n));
  out.psi_truth = psi_truth(key.dgd);
  out.sigma2_oracle = sigma2_truth(key.dgd);
  out.sigma2_mc = mc_variance(psi, key.n);

  for (Estimator e : kAllEstimators) {
    const std::size_t k = slot(e);
    std::vector<double> s2, cov, rej, err2;
    for (const RepResult& r : reps) {
      if (r.failed() || !r.sigma2[k]) continue;
      s2.push_back(*r.sigma2[k]);
      cov.push_back(r.covered[k].value_or(false) ? 1.0 : 0.0);
      rej.push_back(r.reject[k].value_or(false) ? 1.0 : 0.0);
      const double diff = *r.sigma2[k] - out.sigma2_oracle;
      err2.push_back(diff * diff);
    }
    if (s2.empty()) continue;
    EstimatorMetrics m;
    m.estimator = e;
    m.used = s2.size();
    m.coverage = stats::mean(cov);
    if (key.dgd.beta_psi == 0.0) m.type1 = stats::mean(rej);
    m.mean_sigma2 = stats::mean(s2);
    m.bias = m.mean_sigma2 - out.sigma2_oracle;
    m.rmse = std::sqrt(stats::mean(err2));
    m.var_sigma2 = stats::sample_variance(s2);
    out.metrics.push_back(m);
  }
  out.per_rep = std::move(reps);
  return out;
}

std::vector<SummaryRow> summarize(const std::vector<ScenarioResult>& results) {
  std::vector<SummaryRow> rows;
  for (const ScenarioResult& r : results) {
    for (const EstimatorMetrics& m : r.metrics) {
      SummaryRow s;
      s.dgd = to_string(r.key.dgd.kind);
      s.beta_p = r.key.dgd.beta_p;
      s.beta_psi = r.key.dgd.beta_psi;
      s.n = r.key.n;
      s.estimator = to_string(m.estimator);
      s.reps = r.reps;
      s.n_failed = r.n_failed;
      s.coverage = m.coverage;
      s.type1 = m.type1;
      s.bias = m.bias;
      s.rmse = m.rmse;
      s.mean_sigma2 = m.mean_sigma2;
      s.var_sigma2 = m.var_sigma2;
      s.psi_truth = r.psi_truth;
      s.sigma2_oracle = r.sigma2_oracle;
      s.sigma2_mc = r.sigma2_mc.scaled;
      s.sigma2_mc_se = r.sigma2_mc.scaled_se;
      s.var_mc_raw = r.sigma2_mc.var_raw;
      rows.push_back(std::move(s));
    }
  }
  return rows;
}

}  // namespace tve
