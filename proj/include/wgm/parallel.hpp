#pragma once

#include <cstdint>

#include "wgm/rng.hpp"

namespace wgm {

// Ensemble work always splits into this many chunks, each with its own
// seeded substream, and partials reduce in chunk order. The split is fixed
// so results never depend on core count or scheduling.
inline constexpr int kEnsembleChunks = 128;

template <class Fn>
void for_each_chunk(long long total, std::uint64_t seed, Fn&& fn) {
  for (int c = 0; c < kEnsembleChunks; ++c) {
    long long b = total * c / kEnsembleChunks;
    long long e = total * (c + 1) / kEnsembleChunks;
    if (e > b) {
      Rng rng(seed, static_cast<std::uint64_t>(c));
      fn(b, e, rng);
    }
  }
}

}  // namespace wgm
