#include <cmath>

#include "doctest.h"
#include "lrod/degradation.hpp"
#include "lrod/error.hpp"
#include "lrod/gradcheck.hpp"
#include "lrod/ops.hpp"
#include "lrod/rng.hpp"

using namespace lrod;
using ad::Tape;
using ad::Var;

namespace {

Tensor random_image(std::uint64_t seed, std::size_t h, std::size_t w) {
    Rng r(seed);
    Tensor t({h, w, 3});
    for (auto& v : t.storage()) v = r.uniform();
    return t;
}

Tensor random_depth(std::uint64_t seed, std::size_t h, std::size_t w) {
    Rng r(seed);
    Tensor t({h, w});
    for (auto& v : t.storage()) v = r.uniform();
    return t;
}

// Scalar loop straight from the scattering equation.
double haze_pixel(double j, double d, double beta, double a) {
    const double t = std::exp(-beta * d);
    const double v = j * t + a * (1.0 - t);
    return v < 0 ? 0 : (v > 1 ? 1 : v);
}

}  // namespace

TEST_CASE("haze with zero scattering is the identity") {
    const Tensor img = random_image(1, 16, 16), depth = random_depth(2, 16, 16);
    const Tensor out = apply_haze(img, depth, {0.0, {0.8, 0.9, 1.0}});
    CHECK(out == img);
}

TEST_CASE("haze at unit depth and beta ln2 mixes halfway") {
    Tensor img({2, 2, 3}, 0.5);
    Tensor depth({2, 2}, 1.0);
    const Tensor out = apply_haze(img, depth, {std::log(2.0), {1.0, 1.0, 1.0}});
    for (double v : out.data()) CHECK(std::abs(v - 0.75) <= 1e-15);
}

TEST_CASE("haze matches per-pixel loop") {
    const Tensor img = random_image(3, 24, 32), depth = random_depth(4, 24, 32);
    const HazeParams p{1.0, {0.75, 0.8, 0.95}};
    const Tensor out = apply_haze(img, depth, p);
    double worst = 0;
    for (std::size_t y = 0; y < 24; ++y)
        for (std::size_t x = 0; x < 32; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                worst = std::max(worst, std::abs(out.at({y, x, c}) -
                                                 haze_pixel(img.at({y, x, c}), depth.at({y, x}), p.beta, p.airlight[c])));
    CHECK(worst <= 1e-12);
}

TEST_CASE("dense haze approaches the airlight") {
    const Tensor img = random_image(5, 8, 8);
    Tensor depth = random_depth(6, 8, 8);
    for (auto& d : depth.storage()) d = 0.5 + 0.5 * d;
    const HazeParams p{50.0, {0.7, 0.85, 1.0}};
    const Tensor out = apply_haze(img, depth, p);
    for (std::size_t i = 0; i < depth.size(); ++i)
        for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(out[i * 3 + c] - p.airlight[c]) < 1e-3);
}

TEST_CASE("haze is 1-Lipschitz in the clean image under the sup norm") {
    const Tensor depth = random_depth(7, 12, 12);
    Rng r(8);
    for (int trial = 0; trial < 50; ++trial) {
        const Tensor a = random_image(100 + trial, 12, 12);
        Tensor b = a;
        double sup_in = 0;
        for (auto& v : b.storage()) {
            const double nv = std::clamp(v + r.uniform(-1e-3, 1e-3), 0.0, 1.0);
            sup_in = std::max(sup_in, std::abs(nv - v));
            v = nv;
        }
        const HazeParams p{r.uniform(kBetaMin, kBetaMax), {0.9, 0.9, 0.9}};
        const Tensor ha = apply_haze(a, depth, p), hb = apply_haze(b, depth, p);
        CHECK(max_abs_diff(ha, hb) <= sup_in * (1 + 1e-12));
    }
}

TEST_CASE("haze rejects bad inputs") {
    const Tensor img = random_image(1, 8, 8);
    CHECK_THROWS_AS(apply_haze(img, random_depth(1, 8, 4), {}), ShapeError);
    CHECK_THROWS_AS(apply_haze(img, random_depth(1, 8, 8), {-0.1, {1, 1, 1}}), ParameterError);
}

TEST_CASE("gamma examples") {
    const Tensor img = random_image(9, 8, 8);
    CHECK(apply_gamma(img, {1.0}) == img);
    CHECK(apply_gamma(Tensor({1}, 0.25), {2.0})[0] == 0.0625);
    const Tensor dark = apply_gamma(Tensor({4, 4, 3}, 0.5), {5.0});
    for (double v : dark.data()) CHECK(v == 0.03125);
    CHECK_THROWS_AS(apply_gamma(Tensor({1}, -0.1), {2.0}), ParameterError);
}

TEST_CASE("gamma is monotone non-increasing in the exponent") {
    const Tensor img = random_image(10, 8, 8);
    Tensor prev = apply_gamma(img, {kGammaMin});
    for (double g = kGammaMin + 0.25; g <= kGammaMax; g += 0.25) {
        const Tensor cur = apply_gamma(img, {g});
        for (std::size_t i = 0; i < cur.size(); ++i) CHECK(cur[i] <= prev[i]);
        prev = cur;
    }
}

TEST_CASE("degradation sampling") {
    const auto a = sample_degradation(42, DegradationMode::haze), b = sample_degradation(42, DegradationMode::haze);
    CHECK(a.haze.beta == b.haze.beta);
    CHECK(a.haze.airlight == b.haze.airlight);

    double bmin = 1e9, bmax = -1e9, gsum = 0, amin = 1e9, amax = -1e9;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        const auto h = sample_degradation(1000 + i, DegradationMode::haze);
        bmin = std::min(bmin, h.haze.beta);
        bmax = std::max(bmax, h.haze.beta);
        amin = std::min(amin, h.haze.airlight[0]);
        amax = std::max(amax, h.haze.airlight[0]);
        gsum += sample_degradation(1000 + i, DegradationMode::dark).dark.gamma;
    }
    CHECK(bmin >= 0.5);
    CHECK(bmax <= 1.5);
    CHECK(amin >= 0.7);
    CHECK(amax <= 1.0);
    const double expected_mean = 0.5 * (1.5 + 5.0);
    CHECK(std::abs(gsum / n - expected_mean) / expected_mean < 0.03);
}

TEST_CASE("online degradation is keyed by epoch and index") {
    const auto a = online_degradation(7, 2, 11, DegradationMode::haze);
    CHECK(a.haze.beta == online_degradation(7, 2, 11, DegradationMode::haze).haze.beta);
    CHECK(a.haze.beta != online_degradation(7, 3, 11, DegradationMode::haze).haze.beta);
    CHECK(a.haze.beta != online_degradation(7, 2, 12, DegradationMode::haze).haze.beta);
}

TEST_CASE("differentiable haze agrees with the tensor form and passes gradient checks") {
    const Tensor img = random_image(11, 8, 8), depth = random_depth(12, 8, 8);
    const std::array<double, 3> air{0.8, 0.9, 0.95};
    // NCHW copies
    Tensor x({1, 3, 8, 8}), d({1, 1, 8, 8});
    for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t xx = 0; xx < 8; ++xx) {
            d.at({0, 0, y, xx}) = depth.at({y, xx});
            for (std::size_t c = 0; c < 3; ++c) x.at({0, c, y, xx}) = img.at({y, xx, c});
        }
    Tape t;
    const Var out = apply_haze(t.constant(x), d, t.constant(Tensor({1}, 1.2)), air);
    const Tensor ref = apply_haze(img, depth, {1.2, air});
    for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t xx = 0; xx < 8; ++xx)
            for (std::size_t c = 0; c < 3; ++c)
                CHECK(std::abs(out.value().at({0, c, y, xx}) - ref.at({y, xx, c})) <= 1e-15);

    const Tensor w = Rng(13).normal_tensor({1, 3, 8, 8});
    auto wrt_clean = [&](Tape& tp, const Var& v) {
        return ops::sum(ops::mul_const(apply_haze(v, d, tp.constant(Tensor({1}, 1.2)), air), w));
    };
    CHECK(ad::grad_check(wrt_clean, x).max_rel_error < 1e-6);
    auto wrt_beta = [&](Tape& tp, const Var& b) { return ops::sum(ops::mul_const(apply_haze(tp.constant(x), d, b, air), w)); };
    CHECK(ad::grad_check(wrt_beta, Tensor({1}, 0.9)).max_rel_error < 1e-6);
    auto gamma_fn = [&](Tape&, const Var& v) { return ops::sum(ops::mul_const(apply_gamma(v, 2.5), w)); };
    Tensor xp = x;
    for (auto& v : xp.storage()) v = 0.05 + 0.9 * v;
    CHECK(ad::grad_check(gamma_fn, xp).max_rel_error < 1e-6);
}
