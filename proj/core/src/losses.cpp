#include "lrod/losses.hpp"

#include <cmath>

#include "lrod/ops.hpp"
#include "lrod/rng.hpp"

namespace lrod {

using ad::Var;
namespace o = ops;

void LossWeights::validate() const {
    if (!(lambda >= 0) || !(lambda_p >= 0)) throw ParameterError("loss weights must be non-negative");
    if (!(charbonnier_eps > 0)) throw ParameterError("charbonnier eps must be positive");
}

nlohmann::json LossWeights::to_json() const {
    return {{"lambda", lambda}, {"lambda_p", lambda_p}, {"charbonnier_eps", charbonnier_eps}};
}

LossWeights LossWeights::from_json(const nlohmann::json& j) {
    LossWeights w;
    w.lambda = j.value("lambda", w.lambda);
    w.lambda_p = j.value("lambda_p", w.lambda_p);
    w.charbonnier_eps = j.value("charbonnier_eps", w.charbonnier_eps);
    w.validate();
    return w;
}

DetectionTargets assign_targets(const std::vector<std::vector<BoxLabel>>& labels, std::size_t image_h,
                                std::size_t image_w, const ModelConfig& cfg) {
    if (image_h % kGridStride || image_w % kGridStride)
        throw ShapeError("image extent must be divisible by the grid stride");
    const std::size_t N = labels.size(), C = cfg.num_classes;
    const std::size_t gh = image_h / kGridStride, gw = image_w / kGridStride, plane = gh * gw;
    const double s = static_cast<double>(kGridStride);
    DetectionTargets t{Tensor({N, 1, gh, gw}), Tensor({N, C, gh, gw}), Tensor({N, 4, gh, gw}), Tensor({N, 4, gh, gw}), 0};
    for (std::size_t n = 0; n < N; ++n)
        for (const auto& l : labels[n]) {
            const Box& b = l.box;
            if (!(b.x0 >= 0 && b.y0 >= 0 && b.x1 <= double(image_w) && b.y1 <= double(image_h) && b.x0 < b.x1 &&
                  b.y0 < b.y1))
                throw AssignmentError("target box (" + std::to_string(b.x0) + ", " + std::to_string(b.y0) + ", " +
                                      std::to_string(b.x1) + ", " + std::to_string(b.y1) + ") lies outside the " +
                                      std::to_string(image_w) + "x" + std::to_string(image_h) + " image");
            if (l.class_id < 0 || static_cast<std::size_t>(l.class_id) >= C)
                throw AssignmentError("class id " + std::to_string(l.class_id) + " out of range");
            const double cx = b.center_x() / s, cy = b.center_y() / s;
            const auto gx = std::min(static_cast<std::size_t>(cx), gw - 1);
            const auto gy = std::min(static_cast<std::size_t>(cy), gh - 1);
            const std::size_t cell = gy * gw + gx;
            if (t.objectness[n * plane + cell] != 0.0) continue;
            t.objectness[n * plane + cell] = 1.0;
            t.class_onehot[(n * C + static_cast<std::size_t>(l.class_id)) * plane + cell] = 1.0;
            const double vals[4] = {cx - double(gx), cy - double(gy), std::log(b.width() / s), std::log(b.height() / s)};
            for (std::size_t k = 0; k < 4; ++k) {
                t.box_mask[(n * 4 + k) * plane + cell] = 1.0;
                t.box[(n * 4 + k) * plane + cell] = vals[k];
            }
            ++t.positives;
        }
    return t;
}

DetectionLossParts detection_loss_parts(const Var& pred, const DetectionTargets& t) {
    const Shape& s = pred.shape();
    const std::size_t C = t.class_onehot.dim(1);
    if (s.size() != 4 || s[1] != 1 + C + 4 || s[0] != t.objectness.dim(0) || s[2] != t.objectness.dim(2) ||
        s[3] != t.objectness.dim(3))
        throw ShapeError("detection_loss: prediction " + to_string(s) + " does not match targets " +
                         to_string(t.objectness.shape()));
    ad::Tape& tape = pred.tape();
    const Var z = o::slice(pred, 1, 0, 1);
    DetectionLossParts p;
    p.objectness = o::mean(o::sub(o::softplus(z), o::mul_const(z, t.objectness)));
    if (t.positives == 0) {
        p.classification = tape.constant(Tensor::scalar(0.0));
        p.box = tape.constant(Tensor::scalar(0.0));
        p.total = p.objectness;
        return p;
    }
    const double inv_pos = 1.0 / static_cast<double>(t.positives);
    const Var logp = o::log_softmax(o::slice(pred, 1, 1, C), 1);
    p.classification = o::scale(o::sum(o::mul_const(logp, t.class_onehot)), -inv_pos);
    const Var raw = o::slice(pred, 1, 1 + C, 4);
    const Var centers = o::sigmoid(o::slice(raw, 1, 0, 2));
    const Var parts[] = {centers, o::slice(raw, 1, 2, 2)};
    const Var decoded = o::concat(parts, 1);
    const Var err = o::smooth_l1(o::sub(decoded, tape.constant(t.box)));
    p.box = o::scale(o::sum(o::mul_const(err, t.box_mask)), 0.25 * inv_pos);
    p.total = o::add(o::add(p.objectness, p.classification), p.box);
    return p;
}

Var detection_loss(const Var& pred, const DetectionTargets& targets) {
    return detection_loss_parts(pred, targets).total;
}

Var charbonnier_loss(const Var& restored, const Var& clean, double eps) {
    if (!(eps > 0)) throw ParameterError("charbonnier eps must be positive");
    require_same_shape(restored.shape(), clean.shape(), "charbonnier_loss");
    const Var q = o::square(o::sub(restored, clean));
    const Var excess = o::div(q, o::add_scalar(o::sqrt(o::add_scalar(q, eps * eps)), eps));
    return o::add_scalar(o::mean(excess), eps);
}

Var param_grad_norm_penalty(const Var& output, std::span<const Var> params, std::size_t probes, std::uint64_t seed) {
    if (probes < 1) throw ParameterError("penalty needs at least one probe");
    if (params.empty()) throw ParameterError("penalty needs parameters");
    ad::Tape& tape = output.tape();
    Rng rng(derive_seed(seed, "hutchinson"));
    Var acc;
    for (std::size_t i = 0; i < probes; ++i) {
        const Var v = tape.constant(rng.rademacher_tensor(output.shape()));
        const auto g = ad::vjp_graph(output, params, v);
        for (const Var& gi : g) {
            const Var sq = o::sum(o::square(gi));
            acc = acc.valid() ? o::add(acc, sq) : sq;
        }
    }
    return o::sqrt(o::scale(acc, 1.0 / static_cast<double>(probes)));
}

Var loss_grad_norm_penalty(const Var& loss, std::span<const Var> params) {
    if (loss.value().size() != 1) throw ShapeError("loss_grad_norm_penalty expects a scalar loss");
    ad::Tape& tape = loss.tape();
    const auto g = ad::vjp_graph(loss, params, tape.constant(Tensor(loss.shape(), 1.0)));
    Var acc;
    for (const Var& gi : g) {
        const Var sq = o::sum(o::square(gi));
        acc = acc.valid() ? o::add(acc, sq) : sq;
    }
    return o::sqrt(acc);
}

TotalLossParts total_loss(const Var& det, const Var& res, const Var& penalty, const LossWeights& w) {
    w.validate();
    TotalLossParts p{det, res, penalty, det};
    if (w.lambda != 0.0) {
        if (!res.valid()) throw ParameterError("restoration weight is set but no restoration loss was given");
        p.total = o::add(p.total, o::scale(res, w.lambda));
    }
    if (w.lambda_p != 0.0) {
        if (!penalty.valid()) throw ParameterError("penalty weight is set but no penalty was given");
        p.total = o::add(p.total, o::scale(penalty, w.lambda_p));
    }
    return p;
}

}  // namespace lrod
