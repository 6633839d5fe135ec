#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "lrod/tensor.hpp"

namespace lrod {

/// Seed-splitting scheme: every random stream is keyed by the run seed, a
/// purpose tag, and up to two integer coordinates (epoch, sample index, ...).
/// The key is hashed with FNV-1a and finalized with SplitMix64.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose, std::uint64_t a = 0, std::uint64_t b = 0);

std::uint64_t splitmix64(std::uint64_t x);

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    double normal() { return normal_(engine_); }
    double rademacher() { return (engine_() >> 63) ? 1.0 : -1.0; }

    Tensor normal_tensor(const Shape& shape, double stddev = 1.0);
    Tensor rademacher_tensor(const Shape& shape);

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace lrod
