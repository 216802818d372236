#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "tve/error.hpp"
#include "tve/montecarlo.hpp"

using namespace tve;

namespace {

void check_same(const ScenarioResult& a, const ScenarioResult& b) {
  CHECK(a.psi_truth == b.psi_truth);
  CHECK(a.sigma2_oracle == b.sigma2_oracle);
  CHECK(a.sigma2_mc.scaled == b.sigma2_mc.scaled);
  CHECK(a.sigma2_mc.scaled_se == b.sigma2_mc.scaled_se);
  CHECK(a.n_failed == b.n_failed);
  REQUIRE(a.per_rep.size() == b.per_rep.size());
  for (std::size_t r = 0; r < a.per_rep.size(); ++r) {
    const RepResult &x = a.per_rep[r], &y = b.per_rep[r];
    CHECK(x.rep == y.rep);
    CHECK(x.seed_stream == y.seed_stream);
    CHECK(x.failed_reason == y.failed_reason);
    CHECK(x.psi_hat == y.psi_hat);
    CHECK(x.sigma2 == y.sigma2);
    CHECK(x.ci_lo == y.ci_lo);
    CHECK(x.ci_hi == y.ci_hi);
    CHECK(x.steps_os == y.steps_os);
    CHECK(x.steps_it == y.steps_it);
  }
  REQUIRE(a.metrics.size() == b.metrics.size());
  for (std::size_t k = 0; k < a.metrics.size(); ++k) {
    CHECK(a.metrics[k].coverage == b.metrics[k].coverage);
    CHECK(a.metrics[k].type1 == b.metrics[k].type1);
    CHECK(a.metrics[k].bias == b.metrics[k].bias);
    CHECK(a.metrics[k].rmse == b.metrics[k].rmse);
    CHECK(a.metrics[k].var_sigma2 == b.metrics[k].var_sigma2);
  }
}

RepResult usable(std::size_t rep, double psi, double s2, bool covered, bool reject) {
  RepResult r;
  r.rep = rep;
  r.psi_hat = psi;
  r.sigma2[0] = s2;
  r.covered[0] = covered;
  r.reject[0] = reject;
  return r;
}

ScenarioConfig small(double beta_p, std::size_t n, std::size_t reps) {
  ScenarioConfig cfg;
  cfg.dgd = DgdSpec{DgdKind::Simple, beta_p, 0.0};
  cfg.n = n;
  cfg.reps = reps;
  return cfg;
}

}  // namespace

TEST_SUITE("montecarlo") {

TEST_CASE("estimator names") {
  for (Estimator e : kAllEstimators) CHECK(parse_estimator(to_string(e)) == e);
  CHECK(parse_estimator("onestep") == Estimator::Onestep);
  CHECK(parse_estimator("iterative") == Estimator::Iterative);
  CHECK_THROWS_AS(parse_estimator("tmle"), Error);
}

TEST_CASE("effect truth under the null is zero") {
  CHECK(psi_truth(DgdSpec{DgdKind::Simple, -1.0, 0.0}) == 0.0);
  CHECK(psi_truth(DgdSpec{DgdKind::Complex, 0.5, 0.0}) == 0.0);
}

TEST_CASE("effect truth matches a Monte-Carlo mean") {
  const DgdSpec dgd{DgdKind::Simple, 0.0, 0.5};
  std::mt19937_64 rng(20240607);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  constexpr long m = 10'000'000;
  double s1 = 0, s0 = 0, s11 = 0, s00 = 0, s10 = 0;
  for (long i = 0; i < m; ++i) {
    const double w1 = u(rng), w2 = u(rng), w3 = u(rng);
    const double q1 = expit(outcome_logit(dgd, w1, w2, w3, 1.0));
    const double q0 = expit(outcome_logit(dgd, w1, w2, w3, 0.0));
    s1 += q1;
    s0 += q0;
    s11 += q1 * q1;
    s00 += q0 * q0;
    s10 += q1 * q0;
  }
  const double dm = static_cast<double>(m);
  const double m1 = s1 / dm, m0 = s0 / dm;
  const double v11 = s11 / dm - m1 * m1, v00 = s00 / dm - m0 * m0, v10 = s10 / dm - m1 * m0;
  // Delta method for log m1 - log m0.
  const double var = v11 / (m1 * m1) + v00 / (m0 * m0) - 2 * v10 / (m1 * m0);
  const double se = std::sqrt(var / dm);
  CHECK(std::abs(psi_truth(dgd) - (std::log(m1) - std::log(m0))) <= 3 * se);
}

TEST_CASE("effect truth grows with the effect size") {
  CHECK(psi_truth(DgdSpec{DgdKind::Simple, 0.0, 2.0}) > psi_truth(DgdSpec{DgdKind::Simple, 0.0, 0.5}));
  CHECK(psi_truth(DgdSpec{DgdKind::Simple, 0.0, 0.5}) > 0.0);
}

TEST_CASE("variance truth for constant nuisances is four") {
  const auto half = [](double, double, double) { return 0.5; };
  CHECK(std::abs(sigma2_truth(CubeNuisance{half, half, half}) - 4.0) <= 1e-12);
}

TEST_CASE("positivity stress inflates the variance truth") {
  CHECK(sigma2_truth(DgdSpec{DgdKind::Simple, 0.5, 0.0}) >
        sigma2_truth(DgdSpec{DgdKind::Simple, -2.0, 0.0}));
  CHECK(sigma2_truth(DgdSpec{DgdKind::Complex, 0.5, 0.0}) >
        sigma2_truth(DgdSpec{DgdKind::Complex, -2.0, 0.0}));
}

TEST_CASE("scaled Monte-Carlo variance") {
  const std::vector<double> x{1, 2, 3, 4};
  const McVariance v = mc_variance(x, 10);
  CHECK(v.var_raw == doctest::Approx(5.0 / 3.0));
  CHECK(v.scaled == doctest::Approx(50.0 / 3.0));
  // Central fourth moment 1/4 * (2*2.25^2 + 2*0.25^2) = 2.5625.
  CHECK(v.scaled_se == doctest::Approx(10 * std::sqrt((2.5625 - 25.0 / 9.0 > 0 ? 2.5625 - 25.0 / 9.0 : 0) / 4)));
  CHECK(mc_variance({1.0}, 10).scaled == 0.0);
}

TEST_CASE("config validation") {
  ScenarioConfig cfg = small(0.0, 100, 1);
  CHECK_NOTHROW(cfg.validate());
  cfg.reps = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.reps = 1;
  cfg.level = 1.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("per-replication coverage and rejection follow the intervals") {
  const ScenarioResult r = run_scenario(small(-1.0, 200, 20), 1);
  for (const RepResult& rep : r.per_rep) {
    if (rep.failed()) continue;
    for (std::size_t k = 0; k < kNumEstimators; ++k) {
      REQUIRE(rep.sigma2[k]);
      CHECK(*rep.sigma2[k] > 0);
      CHECK(*rep.covered[k] == (*rep.ci_lo[k] <= r.psi_truth && r.psi_truth <= *rep.ci_hi[k]));
      CHECK(*rep.reject[k] == !(*rep.ci_lo[k] <= 0.0 && 0.0 <= *rep.ci_hi[k]));
    }
  }
}

TEST_CASE("results do not depend on the worker count") {
  const ScenarioConfig cfg = small(0.0, 200, 24);
  const ScenarioResult serial = run_scenario_serial(cfg);
  check_same(serial, run_scenario(cfg, 1));
  check_same(serial, run_scenario(cfg, 4));
  check_same(run_scenario(cfg, 4), run_scenario(cfg, 4));
}

TEST_CASE("failed replications are excluded and counted") {
  std::vector<RepResult> reps;
  reps.push_back(usable(0, 0.1, 4.0, true, false));
  RepResult bad;
  bad.rep = 1;
  bad.failed_reason = "positivity-degenerate";
  reps.push_back(bad);
  reps.push_back(usable(2, -0.1, 6.0, false, true));
  const ScenarioResult r = aggregate(ScenarioKey{DgdSpec{DgdKind::Simple, 0.0, 0.0}, 100}, reps);
  CHECK(r.reps == 3);
  CHECK(r.n_failed == 1);
  REQUIRE(r.metrics.size() == 1);
  CHECK(r.metrics[0].used == r.reps - r.n_failed);
  CHECK(r.metrics[0].coverage == 0.5);
  REQUIRE(r.metrics[0].type1);
  CHECK(*r.metrics[0].type1 == 0.5);
  CHECK(r.metrics[0].mean_sigma2 == 5.0);
  CHECK(r.metrics[0].bias == doctest::Approx(5.0 - r.sigma2_oracle));
  const double e1 = 4.0 - r.sigma2_oracle, e2 = 6.0 - r.sigma2_oracle;
  CHECK(r.metrics[0].rmse == doctest::Approx(std::sqrt((e1 * e1 + e2 * e2) / 2)));
}

TEST_CASE("a scenario where every replication fails is an error") {
  RepResult bad;
  bad.failed_reason = "psi-degenerate";
  try {
    aggregate(ScenarioKey{DgdSpec{}, 100}, {bad, bad});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Scenario);
  }
}

TEST_CASE("aggregation ignores replication order") {
  ScenarioResult r = run_scenario(small(0.0, 150, 16), 1);
  std::vector<RepResult> rev(r.per_rep.rbegin(), r.per_rep.rend());
  const ScenarioResult b = aggregate(r.key, rev);
  for (std::size_t k = 0; k < r.metrics.size(); ++k) {
    CHECK(b.metrics[k].coverage == r.metrics[k].coverage);
    CHECK(b.metrics[k].mean_sigma2 == r.metrics[k].mean_sigma2);
    CHECK(b.metrics[k].rmse == r.metrics[k].rmse);
  }
  CHECK(b.sigma2_mc.scaled == r.sigma2_mc.scaled);
}

TEST_CASE("type-I error is reported only under the null") {
  const ScenarioResult null = run_scenario(small(-2.0, 150, 8), 1);
  for (const auto& m : null.metrics) CHECK(m.type1.has_value());
  ScenarioConfig alt = small(-2.0, 150, 8);
  alt.dgd.beta_psi = 0.5;
  const ScenarioResult eff = run_scenario(alt, 1);
  REQUIRE(!eff.metrics.empty());
  for (const auto& m : eff.metrics) CHECK(!m.type1.has_value());
}

TEST_CASE("summary rows copy the scenario metrics") {
  const ScenarioResult r = run_scenario(small(-1.0, 150, 10), 1);
  const auto rows = summarize({r});
  REQUIRE(rows.size() == r.metrics.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const SummaryRow& s = rows[k];
    const EstimatorMetrics& m = r.metrics[k];
    CHECK(s.dgd == "simple");
    CHECK(s.beta_p == -1.0);
    CHECK(s.n == 150);
    CHECK(s.estimator == to_string(m.estimator));
    CHECK(s.reps == r.reps);
    CHECK(s.n_failed == r.n_failed);
    CHECK(s.coverage == m.coverage);
    CHECK(s.type1 == m.type1);
    CHECK(s.bias == m.bias);
    CHECK(s.rmse == m.rmse);
    CHECK(s.mean_sigma2 == m.mean_sigma2);
    CHECK(s.psi_truth == r.psi_truth);
    CHECK(s.sigma2_oracle == r.sigma2_oracle);
    CHECK(s.sigma2_mc == r.sigma2_mc.scaled);
  }
}

TEST_CASE("an empty estimator subset aggregates to no estimator rows") {
  ScenarioConfig cfg = small(-1.0, 150, 6);
  cfg.estimators.clear();
  const ScenarioResult r = run_scenario(cfg, 1);
  CHECK(r.metrics.empty());
  CHECK(summarize({r}).empty());
  CHECK(r.sigma2_mc.scaled > 0);
}

TEST_CASE("two seeds agree within Monte-Carlo error") {
  ScenarioConfig a = small(-2.0, 200, 200);
  ScenarioConfig b = a;
  b.seed = 2;
  const ScenarioResult ra = run_scenario(a, 0), rb = run_scenario(b, 0);
  REQUIRE(ra.metrics.size() == rb.metrics.size());
  const double reps = static_cast<double>(a.reps);
  for (std::size_t k = 0; k < ra.metrics.size(); ++k) {
    const auto &x = ra.metrics[k], &y = rb.metrics[k];
    const double cov_se = std::sqrt((x.coverage * (1 - x.coverage) + y.coverage * (1 - y.coverage)) / reps);
    CHECK(std::abs(x.coverage - y.coverage) <= 3 * std::max(cov_se, 1.0 / reps));
    const double s2_se = std::sqrt((x.var_sigma2 + y.var_sigma2) / reps);
    CHECK(std::abs(x.mean_sigma2 - y.mean_sigma2) <= 3 * s2_se);
  }
}

TEST_CASE("Monte-Carlo variance approaches the variance truth at the Monte-Carlo rate") {
  // Only the effect estimate is needed, so no variance estimator is run.
  ScenarioConfig cfg = small(-2.0, 1000, 100);
  cfg.estimators.clear();
  const ScenarioResult few = run_scenario(cfg, 0);
  cfg.reps = 400;
  const ScenarioResult many = run_scenario(cfg, 0);
  CHECK(std::abs(few.sigma2_mc.scaled - few.sigma2_oracle) <= 3 * few.sigma2_mc.scaled_se);
  CHECK(std::abs(many.sigma2_mc.scaled - many.sigma2_oracle) <= 3 * many.sigma2_mc.scaled_se);
  // Standard errors shrink like 1 / sqrt(reps).
  const double ratio = many.sigma2_mc.scaled_se / few.sigma2_mc.scaled_se;
  CHECK(ratio > 0.3);
  CHECK(ratio < 0.75);
}

}  // TEST_SUITE
