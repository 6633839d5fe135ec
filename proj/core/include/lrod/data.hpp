#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lrod/boxes.hpp"
#include "lrod/degradation.hpp"
#include "lrod/error.hpp"
#include "lrod/tensor.hpp"

namespace lrod {

class GenerationError : public Error {
public:
    using Error::Error;
};

/// Shape drawn for each class id.
enum class ShapeKind { circle = 0, square = 1, triangle = 2 };

struct SceneConfig {
    std::size_t height = 64;
    std::size_t width = 64;
    std::size_t num_classes = 3;
    std::size_t min_objects = 1;
    std::size_t max_objects = 4;

    void validate() const;
    nlohmann::json to_json() const;
    static SceneConfig from_json(const nlohmann::json& j);
};

/// Geometry of one drawn object, kept so tests can re-render its mask.
struct ShapeSpec {
    ShapeKind kind = ShapeKind::circle;
    double cx = 0, cy = 0, r = 0;
    double depth = 0;
};

struct Scene {
    Tensor image;  // (H, W, 3) in [0, 1]
    Tensor depth;  // (H, W) in [0, 1], far = 1
    std::vector<BoxLabel> annotations;
    std::vector<ShapeSpec> shapes;  // parallel to annotations, in draw order
};

/// Low-frequency background only (what gen_scene draws objects over).
Tensor render_background(std::uint64_t seed, const SceneConfig& cfg);
Scene gen_scene(std::uint64_t seed, const SceneConfig& cfg);

/// Pixel mask of one shape centered at (cx, cy) with half-extent r; a pixel
/// belongs to the shape when its center does.
std::vector<bool> shape_mask(ShapeKind kind, double cx, double cy, double r, std::size_t height, std::size_t width);

enum class Split { train, val };
std::string to_string(Split s);

/// Scene seed for index i of a split. The top bit encodes the split, so the
/// train and val seed ranges are disjoint by construction.
std::uint64_t scene_seed(std::uint64_t seed, Split split, std::size_t index);

struct SplitSpec {
    std::uint64_t seed = 0;
    Split split = Split::train;
    std::size_t n = 0;
    SceneConfig scene;
    /// Val splits also carry an offline degraded copy of every image.
    std::optional<DegradationMode> degradation;
};

/// Writes scenes (PNG + .tns image, .tns depth), `manifest.jsonl`, and for
/// degraded splits `degradation.jsonl`, into `dir`. Returns the manifest path.
std::filesystem::path build_split(const SplitSpec& spec, const std::filesystem::path& dir);

struct SceneRecord {
    std::string id;
    Tensor image;
    Tensor depth;
    std::vector<BoxLabel> annotations;
    std::optional<Tensor> degraded;
    std::optional<Degradation> degradation;
};

/// The records build_split would write, kept in memory.
std::vector<SceneRecord> generate_split(const SplitSpec& spec);

/// Loads every record listed in a manifest; paths are relative to it.
std::vector<SceneRecord> load_split(const std::filesystem::path& manifest);

/// 8-bit RGB PNG from an (H, W, 3) tensor in [0, 1].
void write_png(const std::filesystem::path& path, const Tensor& image);
Tensor read_png(const std::filesystem::path& path);

}  // namespace lrod
