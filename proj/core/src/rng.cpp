#include "irf/rng.hpp"

#include <cmath>

namespace irf {

uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

Rng::Rng(uint64_t seed) : seed_(seed), gen_(splitmix64(seed)) {}

uint64_t Rng::next_u64() { return gen_(); }

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

int64_t Rng::uniform_int(int64_t lo, int64_t hi) {
  uint64_t range = static_cast<uint64_t>(hi - lo) + 1;
  if (range == 0) return static_cast<int64_t>(next_u64());  // full u64 span
  uint64_t limit = UINT64_MAX - UINT64_MAX % range;
  uint64_t u;
  do {
    u = next_u64();
  } while (u >= limit);
  return lo + static_cast<int64_t>(u % range);
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  double m = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * m;
  has_spare_ = true;
  return u * m;
}

Rng Rng::derive(uint64_t key) const {
  return Rng(splitmix64(seed_ ^ splitmix64(key + 0x51ED2701A2B8D4E5ULL)));
}

Rng Rng::derive(uint64_t key_a, uint64_t key_b) const {
  return derive(splitmix64(key_a) ^ (key_b * 0xD6E8FEB86659FD93ULL + 1));
}

}  // namespace irf
