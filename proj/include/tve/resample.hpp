#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "tve/data.hpp"
#include "tve/learners.hpp"

namespace tve {

// 5 / (sqrt(m) log m).
double default_trunc_level(std::size_t m);

inline constexpr double kDefaultMinProp = 0.01;

struct ResampleOutcome {
  bool accepted = false;
  double proportion = 0.0;          // share of fitted g1 outside the band
  std::vector<std::size_t> rows;    // source rows, ascending
  Dataset sample;
};

// Draws m rows without replacement, fits g on the draw and keeps it when
// more than min_prop of the fitted g1 fall outside
// [trunc_level, 1 - trunc_level].
ResampleOutcome resample_filtered(const Dataset& source, std::size_t m,
                                  double trunc_level, double min_prop,
                                  const LearnerSpec& learner, std::uint64_t seed);

}  // namespace tve
