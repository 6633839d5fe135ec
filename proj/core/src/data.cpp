#include "lrod/data.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "lrod/rng.hpp"
#include "lrod/tensor_io.hpp"
#include "lrod/util.hpp"

namespace lrod {

namespace fs = std::filesystem;

void SceneConfig::validate() const {
    auto ok_extent = [](std::size_t v) { return v >= 32 && v <= 128 && v % 8 == 0; };
    if (!ok_extent(height) || !ok_extent(width))
        throw ParameterError("scene extents must be multiples of 8 in [32, 128], got " + std::to_string(height) + "x" +
                             std::to_string(width));
    if (num_classes < 1 || num_classes > 3) throw ParameterError("num_classes must be in [1, 3]");
    if (min_objects < 1 || min_objects > max_objects) throw ParameterError("object count range is empty");
}

nlohmann::json SceneConfig::to_json() const {
    return {{"height", height},
            {"width", width},
            {"num_classes", num_classes},
            {"min_objects", min_objects},
            {"max_objects", max_objects}};
}

SceneConfig SceneConfig::from_json(const nlohmann::json& j) {
    SceneConfig c;
    c.height = j.value("height", c.height);
    c.width = j.value("width", c.width);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.min_objects = j.value("min_objects", c.min_objects);
    c.max_objects = j.value("max_objects", c.max_objects);
    c.validate();
    return c;
}

Tensor render_background(std::uint64_t seed, const SceneConfig& cfg) {
    constexpr std::size_t kGrid = 4;
    Rng rng(derive_seed(seed, "background"));
    double knots[kGrid][kGrid][3];
    for (auto& row : knots)
        for (auto& cell : row)
            for (double& v : cell) v = rng.uniform(0.2, 0.8);
    const std::size_t H = cfg.height, W = cfg.width;
    Tensor img({H, W, 3});
    for (std::size_t y = 0; y < H; ++y) {
        const double gy = (static_cast<double>(y) + 0.5) / static_cast<double>(H) * (kGrid - 1);
        const auto y0 = std::min<std::size_t>(static_cast<std::size_t>(gy), kGrid - 2);
        const double fy = gy - static_cast<double>(y0);
        for (std::size_t x = 0; x < W; ++x) {
            const double gx = (static_cast<double>(x) + 0.5) / static_cast<double>(W) * (kGrid - 1);
            const auto x0 = std::min<std::size_t>(static_cast<std::size_t>(gx), kGrid - 2);
            const double fx = gx - static_cast<double>(x0);
            for (std::size_t c = 0; c < 3; ++c) {
                const double top = knots[y0][x0][c] * (1 - fx) + knots[y0][x0 + 1][c] * fx;
                const double bot = knots[y0 + 1][x0][c] * (1 - fx) + knots[y0 + 1][x0 + 1][c] * fx;
                img[(y * W + x) * 3 + c] = top * (1 - fy) + bot * fy;
            }
        }
    }
    return img;
}

std::vector<bool> shape_mask(ShapeKind kind, double cx, double cy, double r, std::size_t height, std::size_t width) {
    std::vector<bool> m(height * width, false);
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x) {
            const double dx = static_cast<double>(x) + 0.5 - cx;
            const double dy = static_cast<double>(y) + 0.5 - cy;
            bool in = false;
            switch (kind) {
                case ShapeKind::circle: in = dx * dx + dy * dy <= r * r; break;
                case ShapeKind::square: in = std::abs(dx) <= r && std::abs(dy) <= r; break;
                case ShapeKind::triangle:
                    // apex at (0, -r), base from (-r, r) to (r, r)
                    in = dy <= r && std::abs(dx) <= 0.5 * (dy + r);
                    break;
            }
            m[y * width + x] = in;
        }
    return m;
}

namespace {

struct Placed {
    std::vector<bool> mask;
    Box box;
    int class_id;
    ShapeSpec spec;
};

std::optional<Box> mask_bounds(const std::vector<bool>& m, std::size_t H, std::size_t W, std::size_t& count) {
    std::size_t x0 = W, y0 = H, x1 = 0, y1 = 0;
    count = 0;
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
            if (m[y * W + x]) {
                ++count;
                x0 = std::min(x0, x);
                y0 = std::min(y0, y);
                x1 = std::max(x1, x + 1);
                y1 = std::max(y1, y + 1);
            }
    if (count == 0) return std::nullopt;
    return Box{double(x0), double(y0), double(x1), double(y1)};
}

}  // namespace

Scene gen_scene(std::uint64_t seed, const SceneConfig& cfg) {
    cfg.validate();
    const std::size_t H = cfg.height, W = cfg.width;
    constexpr std::size_t kMinPixels = 16;
    constexpr int kAttempts = 100;
    Rng rng(derive_seed(seed, "objects"));
    const std::size_t count = cfg.min_objects + rng.below(cfg.max_objects - cfg.min_objects + 1);
    const double side = static_cast<double>(std::min(H, W));

    std::vector<Placed> placed;
    for (std::size_t k = 0; k < count; ++k) {
        bool done = false;
        for (int attempt = 0; attempt < kAttempts && !done; ++attempt) {
            const int cls = static_cast<int>(rng.below(cfg.num_classes));
            const double r = rng.uniform(0.08, 0.2) * side;
            const double cx = rng.uniform(r, static_cast<double>(W) - r);
            const double cy = rng.uniform(r, static_cast<double>(H) - r);
            const auto kind = static_cast<ShapeKind>(cls);
            Placed p{shape_mask(kind, cx, cy, r, H, W), {}, cls, {kind, cx, cy, r, 0.0}};
            std::size_t n = 0;
            auto b = mask_bounds(p.mask, H, W, n);
            if (!b || n < kMinPixels) continue;
            p.box = *b;
            // Keep every object mostly visible: bounded overlap with earlier boxes
            // and enough uncovered pixels left on each earlier object.
            bool ok = true;
            for (const auto& q : placed)
                if (iou(q.box, p.box) > 0.3) ok = false;
            for (std::size_t i = 0; ok && i < placed.size(); ++i) {
                std::size_t visible = 0;
                for (std::size_t px = 0; px < H * W; ++px) {
                    if (!placed[i].mask[px]) continue;
                    bool covered = p.mask[px];
                    for (std::size_t j = i + 1; j < placed.size() && !covered; ++j) covered = placed[j].mask[px];
                    visible += covered ? 0 : 1;
                }
                if (visible < kMinPixels) ok = false;
            }
            if (!ok) continue;
            placed.push_back(std::move(p));
            done = true;
        }
        if (!done)
            throw GenerationError("scene placement unsatisfiable after " + std::to_string(kAttempts) +
                                  " attempts (seed " + std::to_string(seed) + ")");
    }

    Scene s;
    s.image = render_background(seed, cfg);
    s.depth = Tensor({H, W});
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
            s.depth[y * W + x] = 1.0 - 0.2 * static_cast<double>(y) / static_cast<double>(H - 1);
    // Later objects sit in front: layer depths strictly decrease.
    std::vector<double> depths(placed.size());
    for (double& d : depths) d = rng.uniform(0.1, 0.7);
    std::sort(depths.begin(), depths.end(), std::greater<>());
    for (std::size_t k = 1; k < depths.size(); ++k)
        if (depths[k] >= depths[k - 1]) depths[k] = std::nextafter(depths[k - 1], 0.0);

    for (std::size_t k = 0; k < placed.size(); ++k) {
        const Placed& p = placed[k];
        double mean_bg = 0;
        std::size_t n = 0;
        for (std::size_t px = 0; px < H * W; ++px)
            if (p.mask[px]) {
                mean_bg += (s.image[px * 3] + s.image[px * 3 + 1] + s.image[px * 3 + 2]) / 3.0;
                ++n;
            }
        mean_bg /= static_cast<double>(n);
        std::array<double, 3> color{};
        for (int attempt = 0; attempt < kAttempts; ++attempt) {
            for (double& c : color) c = rng.uniform(0.0, 1.0);
            if (std::abs((color[0] + color[1] + color[2]) / 3.0 - mean_bg) >= 0.2) break;
        }
        for (std::size_t px = 0; px < H * W; ++px)
            if (p.mask[px]) {
                for (std::size_t c = 0; c < 3; ++c) s.image[px * 3 + c] = color[c];
                s.depth[px] = depths[k];
            }
        s.annotations.push_back({p.class_id, p.box});
        s.shapes.push_back(p.spec);
        s.shapes.back().depth = depths[k];
    }
    return s;
}

std::string to_string(Split s) { return s == Split::train ? "train" : "val"; }

std::uint64_t scene_seed(std::uint64_t seed, Split split, std::size_t index) {
    const std::uint64_t body = derive_seed(seed, "scene", index) >> 1;
    return split == Split::val ? (body | (std::uint64_t{1} << 63)) : body;
}

namespace {

nlohmann::json boxes_json(const std::vector<BoxLabel>& labels) {
    auto arr = nlohmann::json::array();
    for (const auto& l : labels) arr.push_back({l.class_id, l.box.x0, l.box.y0, l.box.x1, l.box.y1});
    return arr;
}

}  // namespace

namespace {

std::string record_id(Split split, std::size_t i) {
    char idbuf[32];
    std::snprintf(idbuf, sizeof idbuf, "%s-%06zu", to_string(split).c_str(), i);
    return idbuf;
}

Degradation offline_degradation(std::uint64_t scene_seed_value, DegradationMode mode) {
    return sample_degradation(derive_seed(scene_seed_value, "offline"), mode);
}

}  // namespace

std::vector<SceneRecord> generate_split(const SplitSpec& spec) {
    if (spec.n < 1) throw ParameterError("generate_split: n must be >= 1");
    spec.scene.validate();
    std::vector<SceneRecord> out(spec.n);
    parallel_for(spec.n, [&](std::size_t i) {
        const std::uint64_t sseed = scene_seed(spec.seed, spec.split, i);
        Scene s = gen_scene(sseed, spec.scene);
        SceneRecord& r = out[i];
        r.id = record_id(spec.split, i);
        if (spec.degradation) {
            r.degradation = offline_degradation(sseed, *spec.degradation);
            r.degraded = r.degradation->apply(s.image, s.depth);
        }
        r.image = std::move(s.image);
        r.depth = std::move(s.depth);
        r.annotations = std::move(s.annotations);
    });
    return out;
}

fs::path build_split(const SplitSpec& spec, const fs::path& dir) {
    if (spec.n < 1) throw ParameterError("build_split: n must be >= 1");
    spec.scene.validate();
    std::error_code ec;
    fs::create_directories(dir / "images", ec);
    if (ec) throw IoError(dir.string() + ": " + ec.message());

    std::vector<std::string> lines(spec.n), degr_lines(spec.n);
    parallel_for(spec.n, [&](std::size_t i) {
        const std::string id = record_id(spec.split, i);
        const std::uint64_t sseed = scene_seed(spec.seed, spec.split, i);
        const Scene s = gen_scene(sseed, spec.scene);
        const std::string stem = "images/" + id;
        write_png(dir / (stem + ".png"), s.image);
        write_tns(dir / (stem + ".tns"), s.image);
        write_tns(dir / (stem + "_depth.tns"), s.depth);
        nlohmann::json rec = {{"id", id},
                              {"seed", sseed},
                              {"image-path", stem + ".tns"},
                              {"png-path", stem + ".png"},
                              {"depth-path", stem + "_depth.tns"},
                              {"boxes", boxes_json(s.annotations)}};
        if (spec.degradation) {
            const Degradation d = offline_degradation(sseed, *spec.degradation);
            const Tensor img = d.apply(s.image, s.depth);
            write_png(dir / (stem + "_degraded.png"), img);
            write_tns(dir / (stem + "_degraded.tns"), img);
            rec["degraded-path"] = stem + "_degraded.tns";
            auto dj = d.to_json();
            dj["id"] = id;
            dj["order"] = "last";
            degr_lines[i] = dj.dump();
        }
        lines[i] = rec.dump();
    });

    auto join = [](const std::vector<std::string>& ls) {
        std::string out;
        for (const auto& l : ls) out += l + "\n";
        return out;
    };
    const fs::path manifest = dir / "manifest.jsonl";
    write_file(manifest, join(lines));
    if (spec.degradation) write_file(dir / "degradation.jsonl", join(degr_lines));
    nlohmann::json meta = {{"seed", spec.seed},
                           {"split", to_string(spec.split)},
                           {"n", spec.n},
                           {"scene", spec.scene.to_json()},
                           {"degradation", spec.degradation ? to_string(*spec.degradation) : "none"}};
    write_file(dir / "split.json", meta.dump(2) + "\n");
    return manifest;
}

std::vector<SceneRecord> load_split(const fs::path& manifest) {
    std::ifstream in(manifest);
    if (!in) throw IoError(manifest.string() + ": cannot open manifest");
    const fs::path base = manifest.parent_path();
    std::vector<nlohmann::json> recs;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) recs.push_back(nlohmann::json::parse(line));

    std::vector<std::optional<Degradation>> degr(recs.size());
    if (fs::exists(base / "degradation.jsonl")) {
        std::ifstream din(base / "degradation.jsonl");
        std::size_t i = 0;
        while (std::getline(din, line) && i < recs.size()) {
            if (line.empty()) continue;
            const auto j = nlohmann::json::parse(line);
            Degradation d;
            d.mode = parse_degradation_mode(j.at("mode").get<std::string>());
            if (d.mode == DegradationMode::haze) {
                d.haze.beta = j.at("beta");
                d.haze.airlight = j.at("airlight");
            } else {
                d.dark.gamma = j.at("gamma");
            }
            degr[i++] = d;
        }
    }

    std::vector<SceneRecord> out(recs.size());
    parallel_for(recs.size(), [&](std::size_t i) {
        const auto& j = recs[i];
        SceneRecord r;
        try {
            r.id = j.at("id");
            r.image = read_tns(base / j.at("image-path").get<std::string>());
            r.depth = read_tns(base / j.at("depth-path").get<std::string>());
            for (const auto& b : j.at("boxes"))
                r.annotations.push_back({b.at(0).get<int>(), {b.at(1), b.at(2), b.at(3), b.at(4)}});
            if (j.contains("degraded-path")) r.degraded = read_tns(base / j.at("degraded-path").get<std::string>());
        } catch (const nlohmann::json::exception& e) {
            throw IoError(manifest.string() + ": malformed record " + std::to_string(i) + ": " + e.what());
        }
        r.degradation = degr[i];
        out[i] = std::move(r);
    });
    return out;
}

void write_png(const fs::path& path, const Tensor& image) {
    if (image.rank() != 3 || image.dim(2) != 3) throw ShapeError("write_png expects (H, W, 3), got " + to_string(image.shape()));
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.dim(1));
    img.height = static_cast<png_uint_32>(image.dim(0));
    img.format = PNG_FORMAT_RGB;
    std::vector<unsigned char> px(image.size());
    for (std::size_t i = 0; i < px.size(); ++i)
        px[i] = static_cast<unsigned char>(std::lround(std::clamp(image[i], 0.0, 1.0) * 255.0));
    if (!png_image_write_to_file(&img, path.c_str(), 0, px.data(), 0, nullptr))
        throw IoError(path.string() + ": " + img.message);
}

Tensor read_png(const fs::path& path) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str())) throw IoError(path.string() + ": " + img.message);
    img.format = PNG_FORMAT_RGB;
    std::vector<unsigned char> px(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, px.data(), 0, nullptr)) throw IoError(path.string() + ": " + img.message);
    Tensor t({img.height, img.width, 3});
    for (std::size_t i = 0; i < px.size(); ++i) t[i] = px[i] / 255.0;
    return t;
}

}  // namespace lrod
