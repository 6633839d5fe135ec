#include "lrod/models.hpp"

#include <algorithm>
#include <cmath>

#include "lrod/error.hpp"
#include "lrod/ops.hpp"
#include "lrod/rng.hpp"
#include "lrod/tensor_io.hpp"

namespace lrod {

using ad::Var;
namespace o = ops;

double iou(const Box& a, const Box& b) {
    const double ix = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
    const double iy = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
    if (ix <= 0 || iy <= 0) return 0.0;
    const double inter = ix * iy;
    const double uni = a.area() + b.area() - inter;
    return uni > 0 ? inter / uni : 0.0;
}

void ModelConfig::validate() const {
    for (auto c : stage_channels)
        if (c == 0) throw ParameterError("stage channels must be positive");
    if (input_channels == 0 || num_classes == 0 || head_channels == 0 || restore_channels[0] == 0 ||
        restore_channels[1] == 0)
        throw ParameterError("model widths must be positive");
}

nlohmann::json ModelConfig::to_json() const {
    return {{"stage_channels", stage_channels}, {"input_channels", input_channels}, {"num_classes", num_classes},
            {"head_channels", head_channels},   {"restore_channels", restore_channels}, {"leaky_slope", leaky_slope}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.stage_channels = j.value("stage_channels", c.stage_channels);
    c.input_channels = j.value("input_channels", c.input_channels);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.head_channels = j.value("head_channels", c.head_channels);
    c.restore_channels = j.value("restore_channels", c.restore_channels);
    c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
    c.validate();
    return c;
}

std::string to_string(ModelMode m) {
    switch (m) {
        case ModelMode::baseline: return "baseline";
        case ModelMode::cascade_restorer: return "cascade-restorer";
        case ModelMode::cascade_detector: return "cascade-detector";
        case ModelMode::lrod: return "lrod";
    }
    return "?";
}

ModelMode parse_model_mode(std::string_view s) {
    if (s == "baseline") return ModelMode::baseline;
    if (s == "cascade-restorer") return ModelMode::cascade_restorer;
    if (s == "cascade-detector") return ModelMode::cascade_detector;
    if (s == "lrod") return ModelMode::lrod;
    throw ParameterError("unknown model mode: " + std::string(s));
}

namespace {

void add_conv(ParamLayout& l, const std::string& name, std::size_t out, std::size_t in, std::size_t k) {
    l.add(name + ".weight", {out, in, k, k});
    l.add(name + ".bias", {out});
}

void add_backbone(ParamLayout& l, const ModelConfig& cfg, std::size_t stages) {
    std::size_t in = cfg.input_channels;
    for (std::size_t s = 0; s < stages; ++s) {
        add_conv(l, "backbone.stage" + std::to_string(s + 1), cfg.stage_channels[s], in, 3);
        in = cfg.stage_channels[s];
    }
}

void add_detection_head(ParamLayout& l, const ModelConfig& cfg) {
    add_conv(l, "det.conv", cfg.head_channels, cfg.stage_channels[3], 3);
    add_conv(l, "det.out", cfg.detection_channels(), cfg.head_channels, 1);
}

void add_restoration_head(ParamLayout& l, const ModelConfig& cfg) {
    const auto& sc = cfg.stage_channels;
    const auto& rc = cfg.restore_channels;
    add_conv(l, "res.fuse2", rc[0], sc[2] + sc[1], 3);
    add_conv(l, "res.fuse1", rc[1], rc[0] + sc[0], 3);
    add_conv(l, "res.out", 3, rc[1], 3);
}

Var conv_bias(const BoundParams& p, const std::string& name, const Var& x, std::size_t stride, std::size_t pad) {
    const Var& b = p[name + ".bias"];
    const Var y = o::conv2d(x, p[name + ".weight"], stride, pad);
    return o::add(y, o::reshape(b, {b.value().size(), 1, 1}));
}

void require_spatial(const Var& a, std::size_t h, std::size_t w, const char* what) {
    const Shape& s = a.shape();
    if (s.size() != 4 || s[2] != h || s[3] != w)
        throw ShapeError(std::string(what) + ": expected spatial extent " + std::to_string(h) + "x" +
                         std::to_string(w) + ", got " + to_string(s));
}

}  // namespace

ParamLayout detector_layout(const ModelConfig& cfg) {
    ParamLayout l;
    add_backbone(l, cfg, 4);
    add_detection_head(l, cfg);
    return l;
}

ParamLayout restorer_layout(const ModelConfig& cfg) {
    ParamLayout l;
    add_backbone(l, cfg, 3);
    add_restoration_head(l, cfg);
    return l;
}

ParamLayout lrod_layout(const ModelConfig& cfg) {
    ParamLayout l;
    add_backbone(l, cfg, 4);
    add_detection_head(l, cfg);
    add_restoration_head(l, cfg);
    return l;
}

ParamLayout layout_for(ModelMode mode, const ModelConfig& cfg) {
    switch (mode) {
        case ModelMode::baseline:
        case ModelMode::cascade_detector: return detector_layout(cfg);
        case ModelMode::cascade_restorer: return restorer_layout(cfg);
        case ModelMode::lrod: return lrod_layout(cfg);
    }
    throw ParameterError("bad mode");
}

ModelParams init_params(const ParamLayout& layout, std::uint64_t seed, const ModelConfig& cfg) {
    ModelParams p{layout, Tensor({layout.total()})};
    const double gain = std::sqrt(2.0 / (1.0 + cfg.leaky_slope * cfg.leaky_slope));
    for (const auto& e : layout.entries()) {
        if (e.shape.size() == 1) {
            Tensor b(e.shape, 0.0);
            if (e.name == "det.out.bias") b[0] = -3.0;
            p.set_segment(e.name, b);
            continue;
        }
        const std::size_t fan_in = e.size() / e.shape[0];
        Rng rng(derive_seed(seed, "init:" + e.name));
        p.set_segment(e.name, rng.normal_tensor(e.shape, gain / std::sqrt(static_cast<double>(fan_in))));
    }
    return p;
}

Features backbone_forward(const BoundParams& p, const Var& x, const ModelConfig& cfg) {
    const Shape& s = x.shape();
    if (s.size() != 4 || s[1] != cfg.input_channels)
        throw ShapeError("backbone expects (N, " + std::to_string(cfg.input_channels) + ", H, W), got " + to_string(s));
    if (s[2] % kGridStride || s[3] % kGridStride)
        throw ShapeError("backbone input spatial extent must be divisible by 8, got " + to_string(s));
    const double slope = cfg.leaky_slope;
    Features f;
    f.f1 = o::leaky_relu(conv_bias(p, "backbone.stage1", x, 2, 1), slope);
    f.f2 = o::leaky_relu(conv_bias(p, "backbone.stage2", f.f1, 2, 1), slope);
    f.f3 = o::leaky_relu(conv_bias(p, "backbone.stage3", f.f2, 2, 1), slope);
    if (p.contains("backbone.stage4.weight"))
        f.f4 = o::leaky_relu(conv_bias(p, "backbone.stage4", f.f3, 1, 1), slope);
    return f;
}

Var detect_forward(const BoundParams& p, const Var& f4, const ModelConfig& cfg) {
    if (f4.shape().size() != 4 || f4.shape()[1] != cfg.stage_channels[3])
        throw ShapeError("detection head expects " + std::to_string(cfg.stage_channels[3]) + " channels, got " +
                         to_string(f4.shape()));
    const Var h = o::leaky_relu(conv_bias(p, "det.conv", f4, 1, 1), cfg.leaky_slope);
    return conv_bias(p, "det.out", h, 1, 0);
}

Var restore_forward(const BoundParams& p, const Features& f, const ModelConfig& cfg) {
    const Shape& s3 = f.f3.shape();
    require_spatial(f.f2, 2 * s3[2], 2 * s3[3], "restore F2");
    require_spatial(f.f1, 4 * s3[2], 4 * s3[3], "restore F1");
    const double slope = cfg.leaky_slope;
    const Var p2[] = {o::upsample2x(f.f3), f.f2};
    const Var h2 = o::leaky_relu(conv_bias(p, "res.fuse2", o::concat(p2, 1), 1, 1), slope);
    const Var p1[] = {o::upsample2x(h2), f.f1};
    const Var h1 = o::leaky_relu(conv_bias(p, "res.fuse1", o::concat(p1, 1), 1, 1), slope);
    return o::sigmoid(conv_bias(p, "res.out", o::upsample2x(h1), 1, 1));
}

Var detector_forward(const BoundParams& p, const Var& x, const ModelConfig& cfg) {
    return detect_forward(p, backbone_forward(p, x, cfg).f4, cfg);
}

Var restorer_forward(const BoundParams& p, const Var& x, const ModelConfig& cfg) {
    return restore_forward(p, backbone_forward(p, x, cfg), cfg);
}

Var cascade_forward(const BoundParams& restorer, const BoundParams& detector, const Var& x, const ModelConfig& cfg) {
    return detector_forward(detector, restorer_forward(restorer, x, cfg), cfg);
}

Box decode_cell(double dx, double dy, double log_w, double log_h, std::size_t gx, std::size_t gy, double image_w,
                double image_h) {
    const double s = static_cast<double>(kGridStride);
    const double cx = (static_cast<double>(gx) + dx) * s;
    const double cy = (static_cast<double>(gy) + dy) * s;
    const double w = s * std::exp(std::clamp(log_w, -10.0, 10.0));
    const double h = s * std::exp(std::clamp(log_h, -10.0, 10.0));
    return {std::clamp(cx - 0.5 * w, 0.0, image_w), std::clamp(cy - 0.5 * h, 0.0, image_h),
            std::clamp(cx + 0.5 * w, 0.0, image_w), std::clamp(cy + 0.5 * h, 0.0, image_h)};
}

namespace {
double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }
}  // namespace

std::vector<Detection> decode_detections(const Tensor& head, const ModelConfig& cfg, double image_w, double image_h,
                                         double score_threshold) {
    const std::size_t D = cfg.detection_channels(), C = cfg.num_classes;
    if (head.rank() != 3 || head.dim(0) != D)
        throw ShapeError("decode_detections expects (" + std::to_string(D) + ", G, G), got " + to_string(head.shape()));
    const std::size_t gh = head.dim(1), gw = head.dim(2), plane = gh * gw;
    std::vector<Detection> out;
    for (std::size_t gy = 0; gy < gh; ++gy)
        for (std::size_t gx = 0; gx < gw; ++gx) {
            const std::size_t cell = gy * gw + gx;
            auto ch = [&](std::size_t c) { return head[c * plane + cell]; };
            double m = ch(1);
            int best = 0;
            for (std::size_t k = 1; k < C; ++k)
                if (ch(1 + k) > m) {
                    m = ch(1 + k);
                    best = static_cast<int>(k);
                }
            double z = 0;
            for (std::size_t k = 0; k < C; ++k) z += std::exp(ch(1 + k) - m);
            const double score = sigmoid(ch(0)) / z;
            if (score < score_threshold) continue;
            out.push_back({best, score,
                           decode_cell(sigmoid(ch(C + 1)), sigmoid(ch(C + 2)), ch(C + 3), ch(C + 4), gx, gy, image_w,
                                       image_h)});
        }
    return out;
}

Tensor to_nchw(const std::vector<const Tensor*>& images) {
    if (images.empty()) throw ShapeError("to_nchw: empty batch");
    const Shape& s = images.front()->shape();
    if (s.size() != 3) throw ShapeError("to_nchw expects HWC images, got " + to_string(s));
    const std::size_t H = s[0], W = s[1], C = s[2];
    Tensor out({images.size(), C, H, W});
    for (std::size_t n = 0; n < images.size(); ++n) {
        require_same_shape(images[n]->shape(), s, "to_nchw");
        const auto& img = *images[n];
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x)
                for (std::size_t c = 0; c < C; ++c) out[((n * C + c) * H + y) * W + x] = img[(y * W + x) * C + c];
    }
    return out;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    if (!(ck.params.layout == layout_for(ck.mode, ck.config)))
        throw ParameterError("checkpoint layout does not match mode " + to_string(ck.mode));
    write_tns(path, ck.params.values,
              {{"mode", to_string(ck.mode)}, {"model", ck.config.to_json()}, {"layout", ck.params.layout.to_json()}});
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    auto f = read_tns_with_header(path);
    Checkpoint ck;
    try {
        ck.mode = parse_model_mode(f.header.at("mode").get<std::string>());
        ck.config = ModelConfig::from_json(f.header.at("model"));
        ck.params.layout = ParamLayout::from_json(f.header.at("layout"));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path.string() + ": malformed checkpoint header: " + e.what());
    }
    if (f.tensor.shape() != Shape{ck.params.layout.total()})
        throw IoError(path.string() + ": parameter vector length does not match layout");
    if (!(ck.params.layout == layout_for(ck.mode, ck.config)))
        throw IoError(path.string() + ": layout does not match mode " + to_string(ck.mode));
    ck.params.values = std::move(f.tensor);
    return ck;
}

}  // namespace lrod
