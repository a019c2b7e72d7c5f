#pragma once

#include <cstdint>

namespace irtforge {

/// Seedable, splittable pseudo-random generator.
///
/// The core is xoshiro256** (Blackman & Vigna) whose 256-bit state is filled
/// from the seed with SplitMix64. Everything derived from it (uniforms,
/// normals, bounded integers) is implemented here rather than through
/// <random> distributions, whose algorithms are implementation-defined, so a
/// given seed yields the same stream on every platform and standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  /// Uniform on [0, 1) with 53 random bits.
  double uniform();

  /// Uniform on (0, 1).
  double uniform_open();

  /// Standard normal via the Box-Muller transform. The second variate of
  /// each pair is cached, so copies of an Rng replay identical sequences.
  double normal();

  /// Uniform integer in [0, bound) by rejection, bound > 0.
  std::uint64_t below(std::uint64_t bound);

  /// Independent child stream. Consumes one draw from this generator and
  /// seeds the child's SplitMix64 expansion with it.
  Rng split();

 private:
  std::uint64_t state_[4];
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace irtforge
