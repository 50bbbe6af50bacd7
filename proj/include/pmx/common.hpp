#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace pmx {

using real = double;

// All randomness in the project flows through explicitly seeded engines.
// Never use std::random_device: runs must be reproducible from the config seed.
using Rng = std::mt19937_64;

// splitmix64 finalizer, used to derive independent stream seeds from a master
// seed so that e.g. the batch sampler and the mask sampler never share state.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  return Rng(mix_seed(seed, stream));
}

// Fixed stream tags for the independent random streams of a run.
namespace rng_stream {
constexpr std::uint64_t kInit = 1;      // parameter initialization
constexpr std::uint64_t kSampler = 2;   // PK batch sampling
constexpr std::uint64_t kAugment = 3;   // augmentation decisions
constexpr std::uint64_t kMix = 4;       // patch-mix masks
constexpr std::uint64_t kEval = 5;      // gallery sampling
constexpr std::uint64_t kSynth = 6;     // synthetic data generation
}  // namespace rng_stream

}  // namespace pmx
