#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace tve {

// n observations of (W, A, Y). A and Y are stored as 0.0 / 1.0.
struct Dataset {
  Eigen::MatrixXd w;
  Eigen::VectorXd a;
  Eigen::VectorXd y;
  std::vector<std::string> names;

  std::size_t n() const { return static_cast<std::size_t>(a.size()); }
  std::size_t p() const { return static_cast<std::size_t>(w.cols()); }
  std::size_t n_treated() const;

  // Throws Error{Input} when a field violates the data-model invariants.
  void validate() const;

  Dataset subset(const std::vector<std::size_t>& rows) const;
};

enum class DgdKind { Simple, Complex };

std::string to_string(DgdKind kind);
DgdKind parse_dgd_kind(const std::string& s);

struct DgdSpec {
  DgdKind kind = DgdKind::Simple;
  double beta_p = -2.0;    // positivity knob
  double beta_psi = 0.0;   // effect size on the logit scale
};

// Linear predictors of the simulated distributions, shared by the sampler and
// the quadrature oracles.
double treatment_logit(const DgdSpec& spec, double w1, double w2, double w3);
double outcome_logit(const DgdSpec& spec, double w1, double w2, double w3,
                     double a);

double expit(double x);
double logit(double p);

// The exact conditional probabilities used to draw A and Y.
struct OracleNuisance {
  Eigen::VectorXd g1_true;
  Eigen::VectorXd qbar1_true;
  Eigen::VectorXd qbar0_true;
};

struct SimulatedData {
  Dataset data;
  OracleNuisance truth;
};

// W1..W3 ~ U(0,1); A | W and Y | A, W Bernoulli through the DGD links.
// Deterministic in (spec, n, seed, stream).
SimulatedData simulate(const DgdSpec& spec, std::size_t n, std::uint64_t seed,
                       std::uint64_t stream = 0);

struct CsvColumns {
  std::string treatment;
  std::string outcome;
  std::vector<std::string> covariates;  // empty: every other column
};

struct LoadedCsv {
  Dataset data;
  std::size_t dropped = 0;  // rows removed for a missing selected value
};

LoadedCsv load_csv(const std::filesystem::path& path, const CsvColumns& cols);

// Writes W columns, A, Y and, when given, the oracle columns. Values are
// printed with 17 significant digits so a reload reproduces them exactly.
void write_csv(const std::filesystem::path& path, const Dataset& d,
               const OracleNuisance* truth = nullptr);

}  // namespace tve
