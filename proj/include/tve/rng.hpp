#pragma once

#include <cstdint>
#include <random>

namespace tve {

// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

// Key of the independent stream used for replication `stream` under a master
// seed. Distinct (seed, stream) pairs give unrelated generator states, so
// replications can run in any order on any number of workers.
std::uint64_t stream_key(std::uint64_t seed, std::uint64_t stream);

class Stream {
 public:
  Stream(std::uint64_t seed, std::uint64_t stream)
      : key_(stream_key(seed, stream)), engine_(key_) {}

  std::uint64_t key() const { return key_; }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Uniform integer on [0, bound).
  std::uint64_t below(std::uint64_t bound);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t key_;
  std::mt19937_64 engine_;
};

}  // namespace tve
