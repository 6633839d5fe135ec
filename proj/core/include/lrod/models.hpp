#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lrod/boxes.hpp"
#include "lrod/params.hpp"

namespace lrod {

/// Spatial stride of the detection grid relative to the input image.
inline constexpr std::size_t kGridStride = 8;

struct ModelConfig {
    /// Backbone widths; stages 1-3 halve resolution, stage 4 keeps it.
    std::array<std::size_t, 4> stage_channels{8, 16, 32, 32};
    std::size_t input_channels = 3;
    std::size_t num_classes = 3;
    std::size_t head_channels = 32;
    /// Widths of the restoration fusion convs at /4 and /2.
    std::array<std::size_t, 2> restore_channels{8, 8};
    double leaky_slope = 0.1;

    std::size_t detection_channels() const { return 1 + num_classes + 4; }
    void validate() const;

    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

enum class ModelMode { baseline, cascade_restorer, cascade_detector, lrod };

std::string to_string(ModelMode m);
ModelMode parse_model_mode(std::string_view s);

/// Parameter layouts. Name prefixes: "backbone." (theta_b), "det." (theta_d),
/// "res." (theta_r).
ParamLayout detector_layout(const ModelConfig& cfg);
ParamLayout restorer_layout(const ModelConfig& cfg);
ParamLayout lrod_layout(const ModelConfig& cfg);
ParamLayout layout_for(ModelMode mode, const ModelConfig& cfg);

/// He-normal weights, zero biases (objectness bias starts at -3). Each
/// segment draws from its own stream keyed by (seed, name), so shared
/// segments initialize identically across layouts.
ModelParams init_params(const ParamLayout& layout, std::uint64_t seed, const ModelConfig& cfg = {});

struct Features {
    ad::Var f1, f2, f3, f4;  // f4 is empty for three-stage (restorer) backbones
};

Features backbone_forward(const BoundParams& p, const ad::Var& x, const ModelConfig& cfg);
/// Raw head output, shape (N, 1+C+4, H/8, W/8): objectness logit, class
/// logits, then dx, dy (pre-sigmoid) and log-width, log-height in cell units.
ad::Var detect_forward(const BoundParams& p, const ad::Var& f4, const ModelConfig& cfg);
/// Restored image (N, 3, H, W) in (0, 1).
ad::Var restore_forward(const BoundParams& p, const Features& f, const ModelConfig& cfg);

ad::Var detector_forward(const BoundParams& p, const ad::Var& x, const ModelConfig& cfg);
ad::Var restorer_forward(const BoundParams& p, const ad::Var& x, const ModelConfig& cfg);
/// Detector applied to the standalone restorer's output.
ad::Var cascade_forward(const BoundParams& restorer, const BoundParams& detector, const ad::Var& x,
                        const ModelConfig& cfg);

/// Box for a grid cell given decoded offsets: dx, dy in [0,1] place the
/// center inside the cell; log_w, log_h scale a one-cell anchor. Clamped to
/// the image.
Box decode_cell(double dx, double dy, double log_w, double log_h, std::size_t gx, std::size_t gy,
                double image_w, double image_h);

/// Decodes one sample of head output (shape (1+C+4, G, G)) into scored
/// detections with score = sigmoid(objectness) * max class probability.
std::vector<Detection> decode_detections(const Tensor& head, const ModelConfig& cfg, double image_w, double image_h,
                                         double score_threshold);

/// NCHW batch from HWC images.
Tensor to_nchw(const std::vector<const Tensor*>& images_hwc);

struct Checkpoint {
    ModelMode mode = ModelMode::baseline;
    ModelConfig config;
    ModelParams params;
};

/// `.tns` file whose header carries {"mode", "model", "layout"} next to the
/// flat parameter vector.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace lrod
