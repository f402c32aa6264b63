#pragma once

#include <cstdint>
#include <random>

namespace seqrec {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to decorrelate derived seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/// Fixed offsets separating the stochastic components of one run.
enum class Stream : std::uint64_t {
  init = 1,
  windows = 2,
  masking = 3,
  dropout = 4,
  negatives = 5,
  shuffle = 6,
};

/// Seed for one component of a run, optionally keyed by an index such as
/// the user (the global seed is xor-ed with the index before mixing).
constexpr std::uint64_t derive_seed(std::uint64_t run_seed, Stream stream,
                                    std::uint64_t index = 0, std::uint64_t epoch = 0) {
  return mix_seed(mix_seed(mix_seed(run_seed + static_cast<std::uint64_t>(stream)) ^ index) + epoch);
}

}  // namespace seqrec
