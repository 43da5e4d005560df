#pragma once

#include <cstdint>
#include <random>

namespace mtdagger {

using Rng = std::mt19937_64;

/// What a random stream is used for. Distinct purposes never share draws.
enum class StreamPurpose : std::uint32_t {
  kInitialDemos = 1,
  kCollection = 2,
  kTraining = 3,
  kEvaluation = 4,
  kSuiteBuild = 5,
  kLearnerInit = 6,
  kExpertValidation = 7,
};

/// Independent substream keyed by (master seed, round, task, purpose).
/// Collection in round k for task i always sees the same draws no matter
/// how many other tasks ran before it.
inline Rng make_stream(std::uint64_t master_seed, std::uint64_t round, std::uint64_t task,
                       StreamPurpose purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(master_seed),
                    static_cast<std::uint32_t>(master_seed >> 32),
                    static_cast<std::uint32_t>(round),
                    static_cast<std::uint32_t>(task),
                    static_cast<std::uint32_t>(purpose),
                    0x6d746461u};
  return Rng(seq);
}

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

}  // namespace mtdagger
