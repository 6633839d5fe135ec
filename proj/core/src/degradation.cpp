#include "lrod/degradation.hpp"

#include <algorithm>
#include <cmath>

#include "lrod/error.hpp"
#include "lrod/ops.hpp"
#include "lrod/rng.hpp"

namespace lrod {

std::string to_string(DegradationMode m) { return m == DegradationMode::haze ? "haze" : "dark"; }

DegradationMode parse_degradation_mode(std::string_view s) {
    if (s == "haze") return DegradationMode::haze;
    if (s == "dark") return DegradationMode::dark;
    throw ParameterError("unknown degradation mode: " + std::string(s));
}

namespace {

void check_haze(const Shape& clean, const Shape& depth, double beta) {
    if (clean.size() != 3 || clean[2] != 3)
        throw ShapeError("apply_haze expects an (H, W, 3) image, got " + to_string(clean));
    if (depth.size() != 2 || depth[0] != clean[0] || depth[1] != clean[1])
        throw ShapeError("apply_haze: depth " + to_string(depth) + " not aligned with image " + to_string(clean));
    if (!(beta >= 0.0) || !std::isfinite(beta)) throw ParameterError("apply_haze: beta must be >= 0");
}

}  // namespace

Tensor apply_haze(const Tensor& clean, const Tensor& depth, const HazeParams& p) {
    check_haze(clean.shape(), depth.shape(), p.beta);
    Tensor out(clean.shape());
    const std::size_t pixels = depth.size();
    for (std::size_t i = 0; i < pixels; ++i) {
        const double t = std::exp(-p.beta * depth[i]);
        for (std::size_t c = 0; c < 3; ++c) {
            const double v = clean[i * 3 + c] * t + p.airlight[c] * (1.0 - t);
            out[i * 3 + c] = std::clamp(v, 0.0, 1.0);
        }
    }
    return out;
}

ad::Var apply_haze(const ad::Var& clean, const Tensor& depth, const ad::Var& beta,
                   const std::array<double, 3>& airlight) {
    const Shape& s = clean.shape();
    if (s.size() != 4 || s[1] != 3) throw ShapeError("apply_haze expects an (N, 3, H, W) batch, got " + to_string(s));
    if (depth.shape() != Shape{s[0], 1, s[2], s[3]})
        throw ShapeError("apply_haze: depth " + to_string(depth.shape()) + " not aligned with batch " + to_string(s));
    if (beta.value().size() != 1) throw ShapeError("apply_haze: beta must hold one value, got " + to_string(beta.shape()));
    if (!(beta.value()[0] >= 0.0)) throw ParameterError("apply_haze: beta must be >= 0");
    ad::Tape& tape = clean.tape();
    const ad::Var t = ops::exp(ops::neg(ops::mul(ops::reshape(beta, {1}), tape.constant(depth))));
    const ad::Var a = tape.constant(Tensor({3, 1, 1}, std::vector<double>(airlight.begin(), airlight.end())));
    // J t + A (1 - t) = A + (J - A) t
    return ops::add(ops::mul(ops::sub(clean, a), t), a);
}

Tensor apply_gamma(const Tensor& clean, const DarkParams& p) {
    if (!(p.gamma > 0.0)) throw ParameterError("apply_gamma: gamma must be positive");
    Tensor out(clean.shape());
    for (std::size_t i = 0; i < clean.size(); ++i) {
        if (clean[i] < 0.0) throw ParameterError("apply_gamma: negative input " + std::to_string(clean[i]));
        out[i] = std::pow(clean[i], p.gamma);
    }
    return out;
}

ad::Var apply_gamma(const ad::Var& clean, double gamma) {
    if (!(gamma > 0.0)) throw ParameterError("apply_gamma: gamma must be positive");
    for (double v : clean.value().data())
        if (v < 0.0) throw ParameterError("apply_gamma: negative input " + std::to_string(v));
    return ops::pow(clean, gamma);
}

Tensor Degradation::apply(const Tensor& clean, const Tensor& depth) const {
    return mode == DegradationMode::haze ? apply_haze(clean, depth, haze) : apply_gamma(clean, dark);
}

nlohmann::json Degradation::to_json() const {
    if (mode == DegradationMode::haze) return {{"mode", "haze"}, {"beta", haze.beta}, {"airlight", haze.airlight}};
    return {{"mode", "dark"}, {"gamma", dark.gamma}};
}

Degradation sample_degradation(std::uint64_t seed, DegradationMode mode) {
    Rng rng(derive_seed(seed, "degradation"));
    Degradation d;
    d.mode = mode;
    if (mode == DegradationMode::haze) {
        d.haze.beta = rng.uniform(kBetaMin, kBetaMax);
        d.haze.airlight.fill(rng.uniform(kAirlightMin, kAirlightMax));
    } else {
        d.dark.gamma = rng.uniform(kGammaMin, kGammaMax);
    }
    return d;
}

Degradation online_degradation(std::uint64_t seed, std::size_t epoch, std::size_t index, DegradationMode mode) {
    return sample_degradation(derive_seed(seed, "online-degradation", epoch, index), mode);
}

}  // namespace lrod
