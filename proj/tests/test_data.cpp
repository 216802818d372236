#include <doctest.h>

#include <cmath>
#include <fstream>

#include "support.hpp"
#include "tve/data.hpp"
#include "tve/error.hpp"
#include "tve/resample.hpp"

using namespace tve;

namespace {

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

ErrorKind kind_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::Input;
}

// Midpoint rule on a 100^3 grid.
double cube_mean(auto&& f) {
  constexpr int k = 100;
  double s = 0;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j)
      for (int l = 0; l < k; ++l) s += f((i + 0.5) / k, (j + 0.5) / k, (l + 0.5) / k);
  return s / (double(k) * k * k);
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("simulation is deterministic in seed and stream") {
  const DgdSpec spec{DgdKind::Complex, 0.0, 0.5};
  const auto a = simulate(spec, 500, 9, 3);
  const auto b = simulate(spec, 500, 9, 3);
  const auto c = simulate(spec, 500, 9, 4);
  CHECK(a.data.w == b.data.w);
  CHECK(a.data.a == b.data.a);
  CHECK(a.data.y == b.data.y);
  CHECK(a.truth.g1_true == b.truth.g1_true);
  CHECK(a.data.w != c.data.w);
  CHECK_NOTHROW(a.data.validate());
}

TEST_CASE("zero observations is an invalid size") {
  CHECK(kind_of([] { simulate(DgdSpec{}, 0, 1); }) == ErrorKind::InvalidSize);
}

TEST_CASE("oracle columns reproduce the links") {
  for (DgdKind kind : {DgdKind::Simple, DgdKind::Complex}) {
    const DgdSpec spec{kind, 0.5, 2.0};
    const auto s = simulate(spec, 1000, 5);
    for (Eigen::Index i = 0; i < 1000; ++i) {
      const double w1 = s.data.w(i, 0), w2 = s.data.w(i, 1), w3 = s.data.w(i, 2);
      // Written out from the model definition.
      double ga = spec.beta_p - (spec.beta_p + 2.5) * w1 + 1.75 * w2 + (spec.beta_p + 3.2) * w3;
      double qa = 0.1 + 0.1 * w1 + 0.1 * w2 + 0.1 * w3;
      if (kind == DgdKind::Complex) {
        ga += -0.75 * w1 * w2 + 0.75 * w2 * w2;
        qa = 0.1 + 0.1 * w1 + 0.1 * w2 + 0.2 * w3 - 0.5 * w1 * w3 + 0.3 * w1 * w1;
      }
      CHECK(std::abs(s.truth.g1_true[i] - 1 / (1 + std::exp(-ga))) <= 1e-12);
      CHECK(std::abs(s.truth.qbar1_true[i] - 1 / (1 + std::exp(-(qa + 2.0)))) <= 1e-12);
      CHECK(std::abs(s.truth.qbar0_true[i] - 1 / (1 + std::exp(-qa))) <= 1e-12);
      CHECK(s.truth.g1_true[i] > 0.0);
      CHECK(s.truth.g1_true[i] < 1.0);
    }
  }
}

TEST_CASE("treated share converges to the integrated propensity") {
  for (double bp : {-2.0, 0.5}) {
    const DgdSpec spec{DgdKind::Simple, bp, 0.0};
    const double eg = cube_mean([&](double a, double b, double c) {
      return expit(treatment_logit(spec, a, b, c));
    });
    const std::size_t n = 200000;
    const auto s = simulate(spec, n, 2024);
    const double share = s.data.a.mean();
    const double se = std::sqrt(eg * (1 - eg) / static_cast<double>(n));
    CAPTURE(bp);
    CHECK(std::abs(share - eg) <= 3 * se);
  }
}

TEST_CASE("csv ingestion") {
  testing::TempDir dir("csv");
  SUBCASE("complete rows") {
    write_file(dir / "a.csv", "W1,A,Y\n0.5,1,0\n0.25,0,1\n1e-3,1,1\n");
    const auto r = load_csv(dir / "a.csv", {"A", "Y", {}});
    CHECK(r.data.n() == 3);
    CHECK(r.dropped == 0);
    CHECK(r.data.w(2, 0) == 1e-3);
    CHECK(r.data.names == std::vector<std::string>{"W1"});
  }
  SUBCASE("missing outcome drops the row") {
    write_file(dir / "b.csv", "W1,W2,A,Y\n0.5,1,1,0\n0.25,2,0,\n0.1,3,1,1\n");
    const auto r = load_csv(dir / "b.csv", {"A", "Y", {"W1", "W2"}});
    CHECK(r.data.n() == 2);
    CHECK(r.dropped == 1);
    CHECK(r.data.w(1, 1) == 3.0);
  }
  SUBCASE("non-binary outcome") {
    write_file(dir / "c.csv", "W1,A,Y\n0.5,1,2\n");
    CHECK(kind_of([&] { load_csv(dir / "c.csv", {"A", "Y", {}}); }) == ErrorKind::Schema);
  }
  SUBCASE("missing column") {
    write_file(dir / "d.csv", "W1,A,Y\n0.5,1,1\n");
    CHECK(kind_of([&] { load_csv(dir / "d.csv", {"A", "Outcome", {}}); }) == ErrorKind::Schema);
  }
  SUBCASE("no usable rows") {
    write_file(dir / "e.csv", "W1,A,Y\nNA,1,1\n");
    CHECK(kind_of([&] { load_csv(dir / "e.csv", {"A", "Y", {}}); }) == ErrorKind::EmptyData);
  }
  SUBCASE("quoted header and unselected columns") {
    write_file(dir / "f.csv", "\"id\",W1,A,Y,note\nx,0.5,1,0,\n");
    const auto r = load_csv(dir / "f.csv", {"A", "Y", {"W1"}});
    CHECK(r.data.n() == 1);
    CHECK(r.dropped == 0);
  }
}

TEST_CASE("csv round trip is exact") {
  testing::TempDir dir("roundtrip");
  const auto s = simulate(DgdSpec{DgdKind::Simple, 0.0, 0.5}, 300, 77);
  write_csv(dir / "sim.csv", s.data, &s.truth);
  const auto r = load_csv(dir / "sim.csv", {"A", "Y", {"W1", "W2", "W3"}});
  CHECK(r.data.w == s.data.w);
  CHECK(r.data.a == s.data.a);
  CHECK(r.data.y == s.data.y);
  const auto t = load_csv(dir / "sim.csv", {"A", "Y", {"g1_true"}});
  CHECK(t.data.w.col(0) == s.truth.g1_true);
}

TEST_CASE("resampling band and acceptance") {
  CHECK(default_trunc_level(500) == doctest::Approx(0.036).epsilon(0.002));
  CHECK(default_trunc_level(500) == doctest::Approx(5 / (std::sqrt(500.0) * std::log(500.0))));

  const LearnerSpec learner = LearnerSpec::defaults();
  const auto mild = simulate(DgdSpec{DgdKind::Simple, -2.0, 0.0}, 3000, 1).data;
  CHECK_THROWS_AS(resample_filtered(mild, 3001, 0.036, 0.01, learner, 1), Error);

  SUBCASE("propensities inside the band are rejected with proportion zero") {
    // Intercept-only propensity on balanced data is 0.5 everywhere.
    Dataset d = testing::balanced_cells(200);
    for (Eigen::Index i = 0; i < d.w.rows(); ++i) d.w(i, 0) = static_cast<double>(i % 7);
    LearnerSpec flat = learner;
    flat.g_specs = {FormulaSpec{Terms::InterceptOnly, false, {}}};
    const auto r = resample_filtered(d, 400, 0.036, 0.01, flat, 5);
    CHECK_FALSE(r.accepted);
    CHECK(r.proportion == 0.0);
    CHECK(r.sample.n() == 400);
  }
  SUBCASE("draws are without replacement and reproducible") {
    const auto r1 = resample_filtered(mild, 500, 0.036, 0.01, learner, 8);
    const auto r2 = resample_filtered(mild, 500, 0.036, 0.01, learner, 8);
    CHECK(r1.rows == r2.rows);
    CHECK(std::adjacent_find(r1.rows.begin(), r1.rows.end()) == r1.rows.end());
    CHECK(r1.proportion == r2.proportion);
  }
  SUBCASE("retrying seeds until acceptance") {
    const auto stressed = simulate(DgdSpec{DgdKind::Simple, 0.0, 0.0}, 5000, 3).data;
    bool found = false;
    for (std::uint64_t seed = 0; seed < 50 && !found; ++seed) {
      const auto r = resample_filtered(stressed, 500, default_trunc_level(500), 0.01, learner, seed);
      if (r.accepted) {
        found = true;
        CHECK(r.proportion > 0.01);
      } else {
        CHECK(r.proportion <= 0.01);
      }
    }
    CHECK(found);
  }
}

}  // TEST_SUITE
