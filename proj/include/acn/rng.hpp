#pragma once

#include <cstdint>
#include <random>

namespace acn {

using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x);

// Independent stream seed for (base, stream) pairs, e.g. one per run index.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

// Normal(mean, stddev) resampled until within two standard deviations.
double truncated_normal(Rng& rng, double mean, double stddev);

}  // namespace acn
