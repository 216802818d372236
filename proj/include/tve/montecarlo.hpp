#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tve/data.hpp"
#include "tve/learners.hpp"
#include "tve/sigma2.hpp"

namespace tve {

enum class Estimator { Ic, Ss, Iterative, Onestep };
inline constexpr std::size_t kNumEstimators = 4;
inline constexpr std::array<Estimator, kNumEstimators> kAllEstimators{
    Estimator::Ic, Estimator::Ss, Estimator::Iterative, Estimator::Onestep};

// "ic", "ss", "it", "os".
std::string to_string(Estimator e);
Estimator parse_estimator(const std::string& s);

// Truth by tensor Gauss-Legendre quadrature over the unit cube.
inline constexpr int kQuadratureNodes = 64;

// log E[Qbar(1, W)] - log E[Qbar(0, W)] under the true outcome model.
double psi_truth(const DgdSpec& dgd);

// Conditional probabilities as functions on the unit cube.
struct CubeNuisance {
  std::function<double(double, double, double)> g1;
  std::function<double(double, double, double)> qbar1;
  std::function<double(double, double, double)> qbar0;
};
CubeNuisance true_nuisance(const DgdSpec& dgd);

// Plug-in variance of the log-RR influence function at the true nuisances.
double sigma2_truth(const CubeNuisance& truth);
double sigma2_truth(const DgdSpec& dgd);

// n times the sample variance of psi_hat across replications, with a
// standard error from the fourth central moment.
struct McVariance {
  double var_raw = 0.0;     // sample variance of psi_hat
  double scaled = 0.0;      // n * var_raw
  double scaled_se = 0.0;
};
McVariance mc_variance(const std::vector<double>& psi_hats, std::size_t n);

struct ScenarioConfig {
  DgdSpec dgd;
  std::size_t n = 1000;
  std::size_t reps = 500;
  std::uint64_t seed = 1;
  LearnerSpec learner = LearnerSpec::defaults();
  double level = 0.95;
  std::vector<Estimator> estimators{kAllEstimators.begin(), kAllEstimators.end()};
  OneStepOptions onestep;
  IterativeOptions iterative;
  std::size_t first_rep = 0;  // replication indices run from first_rep

  void validate() const;
  bool uses(Estimator e) const;
};

// One replication. Per-estimator slots are empty when the estimator was not
// requested or the replication failed.
struct RepResult {
  std::size_t rep = 0;
  std::uint64_t seed_stream = 0;
  std::string failed_reason;  // empty for usable replications
  double psi_hat = 0.0;
  std::array<std::optional<double>, kNumEstimators> sigma2;
  std::array<std::optional<double>, kNumEstimators> ci_lo;
  std::array<std::optional<double>, kNumEstimators> ci_hi;
  std::array<std::optional<bool>, kNumEstimators> covered;
  std::array<std::optional<bool>, kNumEstimators> reject;
  std::optional<int> steps_os, steps_it;
  std::optional<std::string> term_os, term_it;
  std::size_t n_g_trunc = 0;
  std::size_t n_q_trunc = 0;

  bool failed() const { return !failed_reason.empty(); }
};

struct EstimatorMetrics {
  Estimator estimator = Estimator::Ic;
  std::size_t used = 0;
  double coverage = 0.0;
  std::optional<double> type1;  // only when beta_psi = 0
  double bias = 0.0;            // mean sigma2 minus sigma2_oracle
  double rmse = 0.0;
  double mean_sigma2 = 0.0;
  double var_sigma2 = 0.0;      // dispersion across replications
};

struct ScenarioKey {
  DgdSpec dgd;
  std::size_t n = 0;
};

struct ScenarioResult {
  ScenarioKey key;
  double psi_truth = 0.0;
  double sigma2_oracle = 0.0;   // quadrature, primary oracle
  McVariance sigma2_mc;         // n Var(psi_hat), cross-check
  std::size_t reps = 0;
  std::size_t n_failed = 0;
  std::vector<EstimatorMetrics> metrics;
  std::vector<RepResult> per_rep;
};

// Runs one replication (simulate, fit, target, estimate).
RepResult run_replication(const ScenarioConfig& cfg, double truth, std::size_t rep);

// Replication rows in index order, computed in parallel over `jobs` OpenMP
// threads (0: runtime default). Rows do not depend on the thread count.
std::vector<RepResult> run_replications(const ScenarioConfig& cfg, int jobs = 0);

// Replications in parallel over `jobs` OpenMP threads (0: runtime default).
// The result does not depend on the thread count.
ScenarioResult run_scenario(const ScenarioConfig& cfg, int jobs = 0);

// Plain loop over replications; the reference for run_scenario.
ScenarioResult run_scenario_serial(const ScenarioConfig& cfg);

// Metrics from per-replication rows. An estimator is reported when any
// usable row carries its value. Throws Error{Scenario} when every
// replication failed.
ScenarioResult aggregate(const ScenarioKey& key, std::vector<RepResult> reps);

struct SummaryRow {
  std::string dgd;
  double beta_p = 0.0;
  double beta_psi = 0.0;
  std::size_t n = 0;
  std::string estimator;
  std::size_t reps = 0;
  std::size_t n_failed = 0;
  double coverage = 0.0;
  std::optional<double> type1;
  double bias = 0.0;
  double rmse = 0.0;
  double mean_sigma2 = 0.0;
  double var_sigma2 = 0.0;
  double psi_truth = 0.0;
  double sigma2_oracle = 0.0;
  double sigma2_mc = 0.0;
  double sigma2_mc_se = 0.0;
  double var_mc_raw = 0.0;
};

// Long format: one row per (scenario, estimator), scenarios in input order.
std::vector<SummaryRow> summarize(const std::vector<ScenarioResult>& results);

}  // namespace tve
