#include "tve/error.hpp"
#include "tve/rng.hpp"
#include "tve/stats.hpp"

#include <cmath>

namespace tve {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidSize: return "invalid-size";
    case ErrorKind::Input: return "input";
    case ErrorKind::Schema: return "schema";
    case ErrorKind::EmptyData: return "empty-data";
    case ErrorKind::Separation: return "separation";
    case ErrorKind::PositivityDegenerate: return "positivity-degenerate";
    case ErrorKind::DegenerateFit: return "degenerate-fit";
    case ErrorKind::PsiDegenerate: return "psi-degenerate";
    case ErrorKind::Scenario: return "scenario";
    case ErrorKind::Config: return "config";
  }
  return "unknown";
}

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t stream_key(std::uint64_t seed, std::uint64_t stream) {
  return mix64(mix64(seed) ^ mix64(stream * 0xd1b54a32d192ed03ULL + 1));
}

std::uint64_t Stream::below(std::uint64_t bound) {
  // Rejection keeps the draw unbiased.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % bound;
}

namespace stats {

double pairwise_sum(std::span<const double> x) {
  constexpr std::size_t kBlock = 16;
  if (x.size() <= kBlock) {
    double s = 0.0;
    for (double v : x) s += v;
    return s;
  }
  const std::size_t half = x.size() / 2;
  return pairwise_sum(x.first(half)) + pairwise_sum(x.subspan(half));
}

double mean(std::span<const double> x) {
  if (x.empty()) return 0.0;
  return pairwise_sum(x) / static_cast<double>(x.size());
}

double sample_variance(std::span<const double> x) {
  const std::size_t n = x.size();
  if (n < 2) return 0.0;
  const double m = mean(x);
  // Two-pass; the deviations are summed pairwise as well.
  double acc = 0.0;
  constexpr std::size_t kBlock = 4096;
  for (std::size_t start = 0; start < n; start += kBlock) {
    const std::size_t len = std::min(kBlock, n - start);
    double buf[kBlock];
    for (std::size_t i = 0; i < len; ++i) {
      const double d = x[start + i] - m;
      buf[i] = d * d;
    }
    acc += pairwise_sum(std::span<const double>(buf, len));
  }
  return acc / static_cast<double>(n - 1);
}

double sample_sd(std::span<const double> x) {
  return std::sqrt(sample_variance(x));
}

double mean_of_squares(std::span<const double> x) {
  const std::size_t n = x.size();
  if (n == 0) return 0.0;
  double acc = 0.0;
  constexpr std::size_t kBlock = 4096;
  for (std::size_t start = 0; start < n; start += kBlock) {
    const std::size_t len = std::min(kBlock, n - start);
    double buf[kBlock];
    for (std::size_t i = 0; i < len; ++i) buf[i] = x[start + i] * x[start + i];
    acc += pairwise_sum(std::span<const double>(buf, len));
  }
  return acc / static_cast<double>(n);
}

}  // namespace stats
}  // namespace tve
