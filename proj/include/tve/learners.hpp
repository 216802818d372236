#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tve/data.hpp"

namespace tve {

// ---------------------------------------------------------------------------
// Logistic regression by iteratively reweighted least squares.

struct LogisticOptions {
  int max_iter = 100;
  double tol = 1e-8;     // on the max absolute score component
  double ridge = 1e-8;   // added to the diagonal of the normal equations
  // When false a diverging fit is returned instead of raising Separation;
  // used by the ridge fallback.
  bool detect_separation = true;
};

struct LogisticFit {
  Eigen::VectorXd coef;
  int iterations = 0;
  bool converged = false;
};

// Maximizes the Bernoulli log-likelihood of y given x * coef + offset.
// Throws Error{Input} on a non-finite design and Error{Separation} when the
// coefficients diverge (sup-norm above 30) or the data are perfectly
// classified.
LogisticFit fit_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                         const Eigen::VectorXd* offset = nullptr,
                         const LogisticOptions& opts = {});

inline constexpr double kFallbackRidge = 1e-2;

// fit_logistic, retried with ridge kFallbackRidge on separation.
LogisticFit fit_logistic_or_ridge(const Eigen::MatrixXd& x,
                                  const Eigen::VectorXd& y,
                                  const Eigen::VectorXd* offset = nullptr,
                                  LogisticOptions opts = {});

// ---------------------------------------------------------------------------
// Candidate formulas and the cross-validated selector.

enum class Terms { InterceptOnly, Main, Expanded };

// One logistic specification. `Expanded` adds every pairwise product and
// square of the main terms (the treatment indicator included, whose square
// is dropped).
struct FormulaSpec {
  Terms terms = Terms::Main;
  bool with_treatment = false;         // outcome models only
  std::vector<std::size_t> columns;    // covariate indices; empty means all

  std::string label() const;
  friend bool operator==(const FormulaSpec&, const FormulaSpec&) = default;
};

// Design matrix of `spec` with an intercept column. `a` supplies the
// treatment column when spec.with_treatment is set.
Eigen::MatrixXd design_matrix(const FormulaSpec& spec, const Eigen::MatrixXd& w,
                              const Eigen::VectorXd* a = nullptr);

struct TruncationBounds {
  double g_lo = 0.025;
  double g_hi = 0.975;
  double q_lo = 0.001;
  double q_hi = 0.999;
};

struct LearnerSpec {
  std::vector<FormulaSpec> q_specs;
  std::vector<FormulaSpec> g_specs;
  std::size_t folds = 10;
  bool misspecify_q = false;
  std::uint64_t seed = 0;  // drives fold assignment
  TruncationBounds bounds;

  // Library used when nothing else is configured: intercept-only, main terms,
  // main terms with pairwise products and squares, for both models.
  static LearnerSpec defaults();
  // The outcome formula used when misspecify_q is set: Y on (A, W1) only.
  static FormulaSpec misspecified_q();

  // q_specs after applying misspecify_q.
  std::vector<FormulaSpec> effective_q_specs() const;
  void validate(std::size_t n) const;
};

// Initial (and later, updated) nuisance estimates for the n units.
struct NuisanceFit {
  Eigen::VectorXd qbar1;   // Qbar(1, W_i)
  Eigen::VectorXd qbar0;   // Qbar(0, W_i)
  Eigen::VectorXd g1;      // g(1 | W_i); g(0 | W_i) is always 1 - g1
  TruncationBounds bounds;
  std::size_t n_g_truncated = 0;
  std::size_t n_q_truncated = 0;
  std::string q_selected;
  std::string g_selected;

  std::size_t n() const { return static_cast<std::size_t>(g1.size()); }
  double qbar(Eigen::Index i, double a) const {
    return a == 1.0 ? qbar1[i] : qbar0[i];
  }
};

// Clamps every prediction into the bounds and recounts the entries that sit
// on a bound. Idempotent.
void apply_truncation(NuisanceFit& fit);

// Nuisance fit from known probabilities (oracle or synthetic), truncated.
NuisanceFit make_fit(Eigen::VectorXd qbar1, Eigen::VectorXd qbar0,
                     Eigen::VectorXd g1, const TruncationBounds& bounds = {});

// Fold of each row: a seeded permutation dealt round-robin into `folds`.
std::vector<std::size_t> fold_assignment(std::size_t n, std::size_t folds,
                                         std::uint64_t seed);

struct CvScore {
  std::string label;
  double risk;  // mean held-out negative log-likelihood; +inf if unfittable
};

struct Selection {
  std::size_t index;
  std::vector<CvScore> scores;
};

// Winner-take-all V-fold selection. Ties within 1e-12 go to the earlier spec.
Selection select_outcome_model(const Dataset& d, const LearnerSpec& spec);
Selection select_treatment_model(const Dataset& d, const LearnerSpec& spec);

// Untruncated g(1 | W) from the CV-selected treatment model refit on d.
Eigen::VectorXd predict_propensity(const Dataset& d, const LearnerSpec& spec);

NuisanceFit fit_nuisances(const Dataset& d, const LearnerSpec& spec);

}  // namespace tve
