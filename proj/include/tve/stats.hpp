#pragma once

#include <cstddef>
#include <span>

namespace tve::stats {

// Pairwise (cascade) summation. The result depends only on the values and
// their order, never on thread count.
double pairwise_sum(std::span<const double> x);

double mean(std::span<const double> x);

// Sample standard deviation with the n-1 denominator; 0 for n < 2.
double sample_sd(std::span<const double> x);

double sample_variance(std::span<const double> x);

double mean_of_squares(std::span<const double> x);

}  // namespace tve::stats
