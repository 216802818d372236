#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include <Eigen/Dense>

#include "tve/data.hpp"
#include "tve/learners.hpp"

namespace testing {

// Finite distribution of (W, A, Y) with W on a few points. Probabilities are
// multiples of 1/10 so that `population` can realize it exactly with
// integer unit counts.
struct Discrete {
  std::vector<double> pw;   // P(W = k)
  std::vector<double> g1;   // P(A = 1 | W = k)
  std::vector<double> q1;   // P(Y = 1 | A = 1, W = k)
  std::vector<double> q0;   // P(Y = 1 | A = 0, W = k)

  std::size_t k() const { return pw.size(); }

  // Joint cell probabilities p[w][a][y].
  std::vector<std::array<std::array<double, 2>, 2>> joint() const {
    std::vector<std::array<std::array<double, 2>, 2>> p(k());
    for (std::size_t w = 0; w < k(); ++w)
      for (int a = 0; a < 2; ++a)
        for (int y = 0; y < 2; ++y) {
          const double pa = a ? g1[w] : 1 - g1[w];
          const double qa = a ? q1[w] : q0[w];
          p[w][a][y] = pw[w] * pa * (y ? qa : 1 - qa);
        }
    return p;
  }
};

// Cell of each unit in a replicated population.
struct Cell {
  std::size_t w;
  int a;
  int y;
};

struct Population {
  tve::Dataset data;
  tve::NuisanceFit fit;   // the true conditionals, untouched by truncation
  std::vector<Cell> cells;
};

// `scale` copies per unit of probability mass: cell (w, a, y) appears
// round(scale * p) times. W is coded as the single covariate k.
inline Population population(const Discrete& d, int scale = 1000) {
  const auto p = d.joint();
  Population pop;
  for (std::size_t w = 0; w < d.k(); ++w)
    for (int a = 0; a < 2; ++a)
      for (int y = 0; y < 2; ++y) {
        const long c = std::lround(p[w][a][y] * scale);
        for (long r = 0; r < c; ++r) pop.cells.push_back({w, a, y});
      }
  const auto n = static_cast<Eigen::Index>(pop.cells.size());
  pop.data.w.resize(n, 1);
  pop.data.a.resize(n);
  pop.data.y.resize(n);
  pop.data.names = {"W"};
  Eigen::VectorXd q1(n), q0(n), g1(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Cell& c = pop.cells[static_cast<std::size_t>(i)];
    pop.data.w(i, 0) = static_cast<double>(c.w);
    pop.data.a[i] = c.a;
    pop.data.y[i] = c.y;
    q1[i] = d.q1[c.w];
    q0[i] = d.q0[c.w];
    g1[i] = d.g1[c.w];
  }
  pop.fit.qbar1 = q1;
  pop.fit.qbar0 = q0;
  pop.fit.g1 = g1;
  pop.fit.bounds = tve::TruncationBounds{1e-9, 1 - 1e-9, 1e-9, 1 - 1e-9};
  return pop;
}

// Variance of the log-RR influence function as a functional of the joint
// cell probabilities, written directly from its definition.
inline double sigma2_of_joint(const std::vector<std::array<std::array<double, 2>, 2>>& p) {
  const std::size_t k = p.size();
  std::vector<double> pw(k), g1(k), q1(k), q0(k);
  double total = 0;
  for (std::size_t w = 0; w < k; ++w)
    total += p[w][0][0] + p[w][0][1] + p[w][1][0] + p[w][1][1];
  double psi1 = 0, psi0 = 0;
  for (std::size_t w = 0; w < k; ++w) {
    const double m0 = p[w][0][0] + p[w][0][1];
    const double m1 = p[w][1][0] + p[w][1][1];
    pw[w] = (m0 + m1) / total;
    g1[w] = m1 / (m0 + m1);
    q1[w] = p[w][1][1] / m1;
    q0[w] = p[w][0][1] / m0;
    psi1 += pw[w] * q1[w];
    psi0 += pw[w] * q0[w];
  }
  double s = 0;
  for (std::size_t w = 0; w < k; ++w) {
    const double r = q1[w] / psi1 - q0[w] / psi0;
    s += pw[w] * (q1[w] * (1 - q1[w]) / (psi1 * psi1 * g1[w]) +
                  q0[w] * (1 - q0[w]) / (psi0 * psi0 * (1 - g1[w])) + r * r);
  }
  return s;
}

// Pathwise derivative of sigma2_of_joint toward the point mass at `at`,
// by central differences.
inline double gateaux(const Discrete& d, Cell at, double t = 1e-6) {
  auto moved = [&](double s) {
    auto p = d.joint();
    for (auto& byw : p)
      for (auto& bya : byw)
        for (double& v : bya) v *= (1 - s);
    p[at.w][at.a][at.y] += s;
    return sigma2_of_joint(p);
  };
  return (moved(t) - moved(-t)) / (2 * t);
}

// Random nuisance values strictly inside the default truncation box.
inline tve::NuisanceFit random_fit(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> q(0.02, 0.98), g(0.05, 0.95);
  Eigen::VectorXd q1(n), q0(n), g1(n);
  for (std::size_t i = 0; i < n; ++i) {
    q1[static_cast<Eigen::Index>(i)] = q(rng);
    q0[static_cast<Eigen::Index>(i)] = q(rng);
    g1[static_cast<Eigen::Index>(i)] = g(rng);
  }
  return tve::make_fit(q1, q0, g1);
}

inline tve::Dataset random_data(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::bernoulli_distribution coin(0.5);
  std::uniform_real_distribution<double> u(0, 1);
  tve::Dataset d;
  const auto m = static_cast<Eigen::Index>(n);
  d.w.resize(m, 1);
  d.a.resize(m);
  d.y.resize(m);
  d.names = {"W1"};
  for (Eigen::Index i = 0; i < m; ++i) {
    d.w(i, 0) = u(rng);
    d.a[i] = coin(rng);
    d.y[i] = coin(rng);
  }
  return d;
}

// Fit with every value 0.5 on a dataset of n units.
inline tve::NuisanceFit constant_fit(std::size_t n, double g = 0.5) {
  const auto m = static_cast<Eigen::Index>(n);
  return tve::make_fit(Eigen::VectorXd::Constant(m, 0.5), Eigen::VectorXd::Constant(m, 0.5),
                       Eigen::VectorXd::Constant(m, g));
}

// `reps` copies of each (A, Y) cell, in the order (1,1), (1,0), (0,1), (0,0).
inline tve::Dataset balanced_cells(std::size_t reps = 1) {
  tve::Dataset d;
  const auto n = static_cast<Eigen::Index>(4 * reps);
  d.w = Eigen::MatrixXd::Zero(n, 1);
  d.a.resize(n);
  d.y.resize(n);
  d.names = {"W1"};
  const int a[4] = {1, 1, 0, 0}, y[4] = {1, 0, 1, 0};
  for (Eigen::Index i = 0; i < n; ++i) {
    d.a[i] = a[i % 4];
    d.y[i] = y[i % 4];
  }
  return d;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("tve_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
