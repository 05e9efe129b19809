#pragma once

#include <cstdint>
#include <random>

namespace kacflow {

using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x);

// Seed of replica stream `stream` under master seed `master`:
// splitmix64(master + golden * (stream + 1)).
std::uint64_t stream_seed(std::uint64_t master, std::uint64_t stream);

inline Rng make_stream(std::uint64_t master, std::uint64_t stream) {
  return Rng(stream_seed(master, stream));
}

inline double uniform01(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline double standard_normal(Rng& rng) {
  return std::normal_distribution<double>(0.0, 1.0)(rng);
}

}  // namespace kacflow
