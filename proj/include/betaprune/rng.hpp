#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace betaprune {

// splitmix64; used for seed expansion and for deriving per-stream seeds.
inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Combines a base seed with a tag (stream id, epoch index, ...) into a fresh
// seed. Chained so mix_seed(mix_seed(s, a), b) stays well distributed.
inline uint64_t mix_seed(uint64_t base, uint64_t tag) {
  uint64_t s = base;
  uint64_t h = splitmix64(s);
  s = h ^ (tag * 0x9e3779b97f4a7c15ull + 0x165667b19e3779f9ull);
  return splitmix64(s);
}

// Independent per-run RNG streams; seeds never collide across streams.
enum class Stream : uint64_t { init = 1, shuffle = 2, eps = 3 };

// xoshiro256++ with Box-Muller gaussians. Deterministic across platforms.
class Rng {
public:
  explicit Rng(uint64_t seed) {
    uint64_t s = seed;
    for (auto& w : state_) w = splitmix64(s);
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, bound) via rejection.
  uint64_t below(uint64_t bound) {
    const uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      const uint64_t r = next_u64();
      if (r >= threshold) return r % bound;
    }
  }

  // Standard normal, Box-Muller with cached spare.
  double gauss() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.28318530717958647692 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::array<uint64_t, 4> state_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

inline Rng stream_rng(uint64_t run_seed, Stream stream) {
  return Rng(mix_seed(run_seed, static_cast<uint64_t>(stream)));
}

}  // namespace betaprune
