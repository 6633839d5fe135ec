#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "lrod/error.hpp"
#include "lrod/training.hpp"
#include "lrod/util.hpp"

namespace lrod {

using ad::Tape;

std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold) {
    std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
    std::vector<Detection> kept;
    for (const auto& d : dets) {
        const bool suppressed =
            std::any_of(kept.begin(), kept.end(), [&](const Detection& k) { return iou(k.box, d.box) > iou_threshold; });
        if (!suppressed) kept.push_back(d);
    }
    return kept;
}

nlohmann::json EvalResult::to_json() const {
    nlohmann::json per = nlohmann::json::array();
    for (double ap : per_class_ap) per.push_back(std::isnan(ap) ? nlohmann::json(nullptr) : nlohmann::json(ap));
    return {{"mAP", map},
            {"per_class", per},
            {"images", images},
            {"thresholds", {{"score", score_threshold}, {"nms_iou", nms_iou}, {"match_iou", match_iou}}}};
}

EvalResult evaluate_detections(const std::vector<std::vector<Detection>>& predictions,
                               const std::vector<std::vector<BoxLabel>>& ground_truth, std::size_t num_classes,
                               double match_iou) {
    if (ground_truth.empty()) throw ParameterError("evaluation needs at least one image");
    if (predictions.size() != ground_truth.size())
        throw ParameterError("evaluation: " + std::to_string(predictions.size()) + " prediction lists for " +
                             std::to_string(ground_truth.size()) + " images");
    EvalResult r;
    r.images = ground_truth.size();
    r.match_iou = match_iou;
    double sum = 0;
    std::size_t counted = 0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        const int cls = static_cast<int>(c);
        std::size_t npos = 0;
        std::vector<std::vector<bool>> claimed(ground_truth.size());
        for (std::size_t i = 0; i < ground_truth.size(); ++i) {
            claimed[i].assign(ground_truth[i].size(), false);
            for (const auto& g : ground_truth[i]) npos += g.class_id == cls;
        }
        if (npos == 0) {
            r.per_class_ap.push_back(std::numeric_limits<double>::quiet_NaN());
            continue;
        }
        struct Ref {
            double score;
            std::size_t image;
            const Box* box;
        };
        std::vector<Ref> preds;
        for (std::size_t i = 0; i < predictions.size(); ++i)
            for (const auto& d : predictions[i])
                if (d.class_id == cls) preds.push_back({d.score, i, &d.box});
        std::stable_sort(preds.begin(), preds.end(), [](const Ref& a, const Ref& b) { return a.score > b.score; });

        std::vector<double> recall, precision;
        std::size_t tp = 0, fp = 0;
        for (const auto& p : preds) {
            double best = -1;
            std::size_t best_j = 0;
            const auto& gts = ground_truth[p.image];
            for (std::size_t j = 0; j < gts.size(); ++j) {
                if (gts[j].class_id != cls) continue;
                const double o = iou(*p.box, gts[j].box);
                if (o > best) {
                    best = o;
                    best_j = j;
                }
            }
            if (best >= match_iou && !claimed[p.image][best_j]) {
                claimed[p.image][best_j] = true;
                ++tp;
            } else {
                ++fp;
            }
            recall.push_back(static_cast<double>(tp) / static_cast<double>(npos));
            precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
        }
        // All-point interpolation: area under the monotone precision envelope.
        std::vector<double> mrec{0.0}, mpre{0.0};
        mrec.insert(mrec.end(), recall.begin(), recall.end());
        mpre.insert(mpre.end(), precision.begin(), precision.end());
        mrec.push_back(1.0);
        mpre.push_back(0.0);
        for (std::size_t i = mpre.size() - 1; i > 0; --i) mpre[i - 1] = std::max(mpre[i - 1], mpre[i]);
        double ap = 0;
        for (std::size_t i = 1; i < mrec.size(); ++i) ap += (mrec[i] - mrec[i - 1]) * mpre[i];
        r.per_class_ap.push_back(ap);
        sum += ap;
        ++counted;
    }
    if (counted == 0) throw ParameterError("evaluation: no ground-truth objects");
    r.map = sum / static_cast<double>(counted);
    return r;
}

Tensor eval_input(const SceneRecord& r) {
    const Tensor& img = r.degraded ? *r.degraded : r.image;
    return to_nchw({&img});
}

EvalResult eval_map50(const Checkpoint& model, const std::optional<Checkpoint>& restorer,
                      const std::vector<SceneRecord>& val, double score_threshold, double nms_iou) {
    if (val.empty()) throw ParameterError("eval_map50: empty validation set");
    const ModelConfig& cfg = model.config;
    std::vector<std::vector<Detection>> preds(val.size());
    std::vector<std::vector<BoxLabel>> gts(val.size());
    parallel_for(val.size(), [&](std::size_t i) {
        Tape t;
        ad::Tape::NoGrad ng(t);
        const auto frozen = [](std::string_view) { return false; };
        ad::Var x = t.constant(eval_input(val[i]));
        if (restorer) x = restorer_forward(bind(t, restorer->params, frozen), x, restorer->config);
        const Tensor head = detector_forward(bind(t, model.params, frozen), x, cfg).value();
        const Tensor one = head.reshaped({head.dim(1), head.dim(2), head.dim(3)});
        const double h = static_cast<double>(val[i].image.dim(0)), w = static_cast<double>(val[i].image.dim(1));
        preds[i] = nms(decode_detections(one, cfg, w, h, score_threshold), nms_iou);
        gts[i] = val[i].annotations;
    });
    EvalResult r = evaluate_detections(preds, gts, cfg.num_classes, 0.5);
    r.score_threshold = score_threshold;
    r.nms_iou = nms_iou;
    return r;
}

}  // namespace lrod
