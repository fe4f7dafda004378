#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace domino {

// Seeded 64-bit generator. All randomness in the project is threaded through
// an explicit Rng so a run is a pure function of (config, seed). Conversions
// to real numbers are done here rather than with <random> distributions, whose
// output differs between standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(mix(seed)) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  // Uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n);
  double normal();
  // Index drawn from unnormalized non-negative weights.
  std::size_t categorical(std::span<const double> weights);

  // Independent child stream; same (seed, stream) always yields the same child.
  Rng split(std::uint64_t stream) const;
  std::uint64_t seed() const { return seed_; }

  static std::uint64_t mix(std::uint64_t x);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace domino
