#pragma once
#include <cstdint>

// Deterministic, splittable random streams. Results must be bit-identical across
// runs for a fixed (seed, stream) pair, so no std:: distributions are used anywhere:
// uniforms come straight from the generator words.
namespace wgm {

inline std::uint64_t splitmix64(std::uint64_t& s) {
  s += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = s;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// xoshiro256** seeded via splitmix64
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) {
    std::uint64_t s = seed ^ (0x5851f42d4c957f2dull * (stream + 1));
    for (auto& w : state_) w = splitmix64(s);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // uniform on [0, 1) with 53 random bits
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // uniform on {0, ..., n-1}; n must be >= 1 (bounded rejection keeps it unbiased)
  std::uint32_t uniform_below(std::uint32_t n) {
    const std::uint64_t span = 0x100000000ull;
    const std::uint64_t limit = span - span % n;
    for (;;) {
      std::uint64_t r = next_u64() >> 32;
      if (r < limit) return static_cast<std::uint32_t>(r % n);
    }
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::uint64_t state_[4];
};

}  // namespace wgm
