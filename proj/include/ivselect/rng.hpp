#pragma once

#include <cstdint>
#include <cmath>
#include <numbers>

namespace ivsel {

// Stream identifiers so independent draws never share a substream.
enum class RngBlock : std::uint64_t {
  Instruments = 1,
  Errors = 2,
  FirstStagePi = 3,
  CvFolds = 4,
  SeedDerivation = 5,
};

// Counter-based stream: the state is derived from (seed, rep, block) by
// chained bijective mixes, and each draw advances a Weyl counter through the
// SplitMix64 finalizer. Output is independent of any other stream and of how
// replications are scheduled across workers.
class SplitStream {
 public:
  SplitStream(std::uint64_t seed, std::uint64_t rep, RngBlock block)
      : state_(mix(seed ^ mix(rep ^ mix(static_cast<std::uint64_t>(block) ^
                                        0xD6E8FEB86659FD93ULL)))) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    return mix(state_);
  }

  // [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + uniform01() * (hi - lo); }

  // Box-Muller on fixed draw counts; the second value of each pair is cached.
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    double u2 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double angle = 2.0 * std::numbers::pi * u2;
    cached_ = r * std::sin(angle);
    has_cached_ = true;
    return r * std::cos(angle);
  }

  // Uniform integer in [0, n) by scaling; n is tiny next to 2^53 here.
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(uniform01() * static_cast<double>(n));
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace ivsel
