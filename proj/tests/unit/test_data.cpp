#include <filesystem>
#include <map>

#include "doctest.h"
#include "lrod/data.hpp"
#include "lrod/util.hpp"

using namespace lrod;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("lrod_test_data_" + name);
    fs::remove_all(p);
    return p;
}

}  // namespace

TEST_CASE("scene generation is deterministic") {
    const SceneConfig cfg;
    const Scene a = gen_scene(123, cfg), b = gen_scene(123, cfg);
    CHECK(a.image == b.image);
    CHECK(a.depth == b.depth);
    CHECK(a.annotations == b.annotations);
    CHECK_FALSE(gen_scene(124, cfg).image == a.image);
}

TEST_CASE("single-object box tightly bounds the non-background mask") {
    SceneConfig cfg;
    cfg.min_objects = cfg.max_objects = 1;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const Scene s = gen_scene(seed, cfg);
        REQUIRE(s.annotations.size() == 1);
        const Tensor bg = render_background(seed, cfg);
        std::size_t x0 = cfg.width, y0 = cfg.height, x1 = 0, y1 = 0;
        for (std::size_t y = 0; y < cfg.height; ++y)
            for (std::size_t x = 0; x < cfg.width; ++x) {
                bool differs = false;
                for (std::size_t c = 0; c < 3; ++c) differs |= s.image.at({y, x, c}) != bg.at({y, x, c});
                if (!differs) continue;
                x0 = std::min(x0, x);
                y0 = std::min(y0, y);
                x1 = std::max(x1, x + 1);
                y1 = std::max(y1, y + 1);
            }
        const Box mask_box{double(x0), double(y0), double(x1), double(y1)};
        CHECK(iou(mask_box, s.annotations[0].box) == 1.0);
    }
}

TEST_CASE("scene invariants over many seeds") {
    const SceneConfig cfg;
    std::map<int, int> hist;
    std::size_t objects = 0;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        const Scene s = gen_scene(seed, cfg);
        CHECK(s.annotations.size() >= 1);
        CHECK(s.annotations.size() <= 4);
        for (const auto& a : s.annotations) {
            ++hist[a.class_id];
            ++objects;
            CHECK(a.box.x0 >= 0);
            CHECK(a.box.y0 >= 0);
            CHECK(a.box.x1 <= double(cfg.width));
            CHECK(a.box.y1 <= double(cfg.height));
            CHECK(a.box.x0 < a.box.x1);
            CHECK(a.box.y0 < a.box.y1);
        }
        bool in_range = true;
        for (double v : s.image.data()) in_range &= v >= 0 && v <= 1;
        for (double v : s.depth.data()) in_range &= v >= 0 && v <= 1;
        CHECK(in_range);
    }
    const double expected = double(objects) / 3.0;
    for (int c = 0; c < 3; ++c) CHECK(std::abs(hist[c] - expected) / expected <= 0.10);
}

TEST_CASE("annotations match re-rendered masks and nearer layers win overlaps") {
    const SceneConfig cfg;
    const std::size_t H = cfg.height, W = cfg.width;
    int overlapping_pixels = 0;
    for (std::uint64_t seed = 0; seed < 300; ++seed) {
        const Scene s = gen_scene(seed, cfg);
        REQUIRE(s.shapes.size() == s.annotations.size());
        std::vector<std::vector<bool>> masks;
        for (std::size_t k = 0; k < s.shapes.size(); ++k) {
            const ShapeSpec& sp = s.shapes[k];
            masks.push_back(shape_mask(sp.kind, sp.cx, sp.cy, sp.r, H, W));
            std::size_t x0 = W, y0 = H, x1 = 0, y1 = 0, n = 0;
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t x = 0; x < W; ++x)
                    if (masks[k][y * W + x]) {
                        ++n;
                        x0 = std::min(x0, x);
                        y0 = std::min(y0, y);
                        x1 = std::max(x1, x + 1);
                        y1 = std::max(y1, y + 1);
                    }
            CHECK(n >= 16);
            CHECK(iou(Box{double(x0), double(y0), double(x1), double(y1)}, s.annotations[k].box) == 1.0);
            CHECK(static_cast<int>(sp.kind) == s.annotations[k].class_id);
        }
        bool consistent = true;
        for (std::size_t i = 0; i < masks.size(); ++i)
            for (std::size_t j = i + 1; j < masks.size(); ++j)
                for (std::size_t px = 0; px < H * W; ++px)
                    if (masks[i][px] && masks[j][px]) {
                        ++overlapping_pixels;
                        consistent &= s.shapes[j].depth < s.shapes[i].depth;
                        consistent &= s.depth[px] <= s.shapes[j].depth;
                    }
        CHECK(consistent);
    }
    CHECK(overlapping_pixels > 0);
}

TEST_CASE("oversized configurations are rejected") {
    SceneConfig cfg;
    cfg.height = 60;
    CHECK_THROWS_AS(gen_scene(1, cfg), ParameterError);
    cfg.height = 256;
    CHECK_THROWS_AS(gen_scene(1, cfg), ParameterError);
}

TEST_CASE("split seeds are disjoint") {
    for (std::size_t i = 0; i < 2000; ++i) {
        CHECK((scene_seed(7, Split::train, i) >> 63) == 0);
        CHECK((scene_seed(7, Split::val, i) >> 63) == 1);
    }
}

TEST_CASE("build_split writes a reproducible manifest") {
    const fs::path a = scratch_dir("a"), b = scratch_dir("b");
    SplitSpec spec;
    spec.seed = 3;
    spec.split = Split::val;
    spec.n = 100;
    spec.degradation = DegradationMode::haze;
    const fs::path ma = build_split(spec, a), mb = build_split(spec, b);
    CHECK(sha256_file(ma) == sha256_file(mb));
    CHECK(sha256_file(a / "degradation.jsonl") == sha256_file(b / "degradation.jsonl"));

    std::size_t pngs = 0;
    for (const auto& e : fs::directory_iterator(a / "images"))
        if (e.path().extension() == ".png" && e.path().stem().string().find("_degraded") == std::string::npos) ++pngs;
    CHECK(pngs == 100);

    const auto recs = load_split(ma);
    REQUIRE(recs.size() == 100);
    const Scene s0 = gen_scene(scene_seed(3, Split::val, 0), spec.scene);
    CHECK(recs[0].image == s0.image);
    CHECK(recs[0].annotations == s0.annotations);
    REQUIRE(recs[0].degraded.has_value());
    REQUIRE(recs[0].degradation.has_value());
    CHECK(*recs[0].degraded == recs[0].degradation->apply(s0.image, s0.depth));

    const Tensor png = read_png(a / "images" / "val-000000.png");
    CHECK(max_abs_diff(png, s0.image) <= 0.5 / 255.0 + 1e-12);
    fs::remove_all(a);
    fs::remove_all(b);
}
