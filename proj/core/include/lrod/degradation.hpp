#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "lrod/tape.hpp"

namespace lrod {

enum class DegradationMode { haze, dark };

std::string to_string(DegradationMode m);
DegradationMode parse_degradation_mode(std::string_view s);

struct HazeParams {
    double beta = 1.0;
    std::array<double, 3> airlight{1.0, 1.0, 1.0};
};

struct DarkParams {
    double gamma = 1.0;
};

inline constexpr double kBetaMin = 0.5, kBetaMax = 1.5;
inline constexpr double kAirlightMin = 0.7, kAirlightMax = 1.0;
inline constexpr double kGammaMin = 1.5, kGammaMax = 5.0;

/// I = J t + A (1 - t), t = exp(-beta d), clamped to [0, 1].
/// `clean` is (H, W, 3), `depth` is (H, W). beta = 0 is allowed and exact.
Tensor apply_haze(const Tensor& clean, const Tensor& depth, const HazeParams& p);
/// Differentiable variant on an NCHW batch with depth (N, 1, H, W) and beta
/// of shape {1}; gradients flow to both `clean` and `beta`. No clamp: for
/// inputs in [0, 1] the output is a convex combination and already in range.
ad::Var apply_haze(const ad::Var& clean, const Tensor& depth, const ad::Var& beta,
                   const std::array<double, 3>& airlight);

/// clean^gamma elementwise. Negative inputs are rejected.
Tensor apply_gamma(const Tensor& clean, const DarkParams& p);
ad::Var apply_gamma(const ad::Var& clean, double gamma);

struct Degradation {
    DegradationMode mode = DegradationMode::haze;
    HazeParams haze;
    DarkParams dark;

    /// Applies to an (H, W, 3) image; depth is only read for haze.
    Tensor apply(const Tensor& clean, const Tensor& depth) const;
    /// {"mode", "beta"|"gamma", "airlight"} manifest record.
    nlohmann::json to_json() const;
};

/// Parameters drawn uniformly from the training ranges.
Degradation sample_degradation(std::uint64_t seed, DegradationMode mode);

/// Online corruption for training: a pure function of (run seed, epoch,
/// sample index), so any run can be replayed exactly.
Degradation online_degradation(std::uint64_t seed, std::size_t epoch, std::size_t index, DegradationMode mode);

}  // namespace lrod
