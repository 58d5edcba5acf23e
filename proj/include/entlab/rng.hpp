#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace entlab {

// Reproducible random stream.
//
// Engine: std::mt19937_64, whose output sequence is fixed by the C++ standard
// for a given seed. The distributions layered on top are implemented here
// (not via <random> distributions, whose algorithms are implementation
// defined):
//   uniform01()   = (x >> 11) * 2^-53, a double in [0, 1)
//   below(n)      = rejection sampling: draw x, reject while x < (2^64 - n) % n,
//                   return x % n
//   categorical() = inverse CDF on uniform01() with a running sum; falls back
//                   to the last index with positive mass on round-off
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  double uniform01();
  std::uint64_t below(std::uint64_t n);
  std::size_t categorical(std::span<const double> probs);

 private:
  std::mt19937_64 engine_;
};

// Seed of the index-th independent sub-run (sweep point, batch) of a base seed.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  return base + index;
}

// Secondary stream tied to the same (base, index) pair, e.g. the clip-set draw
// of a sampled step. Kept away from derive_seed() values by a fixed odd offset.
constexpr std::uint64_t derive_aux_seed(std::uint64_t base, std::uint64_t index) {
  return (base + index) ^ 0x9E3779B97F4A7C15ULL;
}

}  // namespace entlab
