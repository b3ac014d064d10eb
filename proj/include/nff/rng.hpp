// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace nff {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Combines a base seed with stream identifiers into an independent seed.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
  return splitmix64(splitmix64(splitmix64(base) ^ (a + 0x632BE59BD9B4E019ull)) ^
                    (b + 0x8CB92BA72F3D8DD7ull));
}

/// Small counter-based stream of uniforms in [0, 1). Used per ray so that
/// sample jitter depends only on (seed, pixel, interval).
class UniformStream {
 public:
  explicit UniformStream(std::uint64_t seed) : state_(seed) {}
  double next() { return static_cast<double>(splitmix64(state_++) >> 11) * 0x1.0p-53; }

 private:
  std::uint64_t state_;
};

/// Standard-normal latent code of dimension `dim` reproducible from `seed`.
inline std::vector<double> latent_code(std::uint64_t seed, int dim) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> z(static_cast<std::size_t>(dim));
  for (auto& v : z) v = normal(gen);
  return z;
}

}  // namespace nff
