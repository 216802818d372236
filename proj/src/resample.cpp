#include "tve/resample.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/core.h>

#include "tve/error.hpp"
#include "tve/rng.hpp"

namespace tve {

double default_trunc_level(std::size_t m) {
  if (m < 2) throw Error(ErrorKind::InvalidSize, "default_trunc_level: m must be >= 2");
  const double md = static_cast<double>(m);
  return 5.0 / (std::sqrt(md) * std::log(md));
}

ResampleOutcome resample_filtered(const Dataset& source, std::size_t m,
                                  double trunc_level, double min_prop,
                                  const LearnerSpec& learner, std::uint64_t seed) {
  const std::size_t n = source.n();
  if (m == 0 || m > n)
    throw Error(ErrorKind::InvalidSize,
                fmt::format("resample_filtered: m = {} must lie in [1, {}]", m, n));
  if (!(trunc_level > 0 && trunc_level < 0.5))
    throw Error(ErrorKind::Input, "resample_filtered: trunc_level must lie in (0, 0.5)");

  // Partial Fisher-Yates: the first m slots end up a uniform draw.
  Stream rng(seed, 0);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(m);
  std::sort(idx.begin(), idx.end());

  ResampleOutcome out;
  out.sample = source.subset(idx);
  out.rows = std::move(idx);

  const Eigen::VectorXd g1 = predict_propensity(out.sample, learner);
  std::size_t outside = 0;
  for (Eigen::Index i = 0; i < g1.size(); ++i)
    if (g1[i] < trunc_level || g1[i] > 1.0 - trunc_level) ++outside;
  out.proportion = static_cast<double>(outside) / static_cast<double>(m);
  out.accepted = out.proportion > min_prop;
  return out;
}

}  // namespace tve
