#pragma once

#include <cstdint>
#include <random>

namespace irf {

// Deterministic random stream. All distribution transforms are implemented
// here rather than with std:: distributions so that a given seed produces
// the same byte-for-byte sequence on every standard library.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();

  // Uniform on [0, 1), 53-bit resolution.
  double uniform();
  // Uniform on [lo, hi).
  double uniform(double lo, double hi);
  // Uniform integer on [lo, hi], inclusive, unbiased.
  int64_t uniform_int(int64_t lo, int64_t hi);
  // Standard normal via the Marsaglia polar method (second value cached).
  double normal();

  // Independent child stream. Derivation depends only on this stream's seed
  // and the key, not on how much of the parent has been consumed.
  Rng derive(uint64_t key) const;
  Rng derive(uint64_t key_a, uint64_t key_b) const;

  uint64_t seed() const { return seed_; }

 private:
  uint64_t seed_;
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

uint64_t splitmix64(uint64_t x);

}  // namespace irf
