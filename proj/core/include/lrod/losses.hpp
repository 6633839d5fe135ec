#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "lrod/boxes.hpp"
#include "lrod/error.hpp"
#include "lrod/models.hpp"

namespace lrod {

class AssignmentError : public Error {
public:
    using Error::Error;
};

struct LossWeights {
    double lambda = 10.0;     // restoration weight
    double lambda_p = 0.01;   // parameter-gradient penalty weight
    double charbonnier_eps = 1e-3;

    void validate() const;
    nlohmann::json to_json() const;
    static LossWeights from_json(const nlohmann::json& j);
};

/// Dense per-cell targets for one batch, built from box labels. Each object
/// is assigned to the grid cell containing its center; when two centers fall
/// in one cell the first label keeps it.
struct DetectionTargets {
    Tensor objectness;  // (N, 1, G, G) in {0, 1}
    Tensor class_onehot;  // (N, C, G, G)
    Tensor box_mask;  // (N, 4, G, G), 1 on positive cells
    Tensor box;  // (N, 4, G, G): center offsets in [0,1], log(w/8), log(h/8)
    std::size_t positives = 0;
};

DetectionTargets assign_targets(const std::vector<std::vector<BoxLabel>>& labels, std::size_t image_h,
                                std::size_t image_w, const ModelConfig& cfg);

struct DetectionLossParts {
    ad::Var objectness, classification, box, total;
};

/// Objectness BCE-with-logits averaged over every cell, plus class cross
/// entropy and smooth-L1 box regression averaged over positive cells.
DetectionLossParts detection_loss_parts(const ad::Var& pred, const DetectionTargets& targets);
ad::Var detection_loss(const ad::Var& pred, const DetectionTargets& targets);

/// mean(sqrt(diff^2 + eps^2)), evaluated as eps + mean(diff^2 / (sqrt(diff^2 + eps^2) + eps))
/// so identical inputs give exactly eps.
ad::Var charbonnier_loss(const ad::Var& restored, const ad::Var& clean, double eps);

/// Hutchinson estimate of the Frobenius norm of d(output)/d(params):
/// sqrt((1/k) sum_i ||grad_params <output, v_i>||^2) with Rademacher v_i
/// drawn from `seed`. Differentiable in the parameters.
ad::Var param_grad_norm_penalty(const ad::Var& output, std::span<const ad::Var> params, std::size_t probes,
                                std::uint64_t seed);

/// Alternative penalty: ||grad_params L|| for a scalar loss L.
ad::Var loss_grad_norm_penalty(const ad::Var& loss, std::span<const ad::Var> params);

struct TotalLossParts {
    ad::Var det, res, penalty, total;
};

/// L_det + lambda L_res + lambda_p penalty. Terms whose weight is zero are
/// not added at all, so zero weights reproduce L_det bit for bit. Empty
/// `res` or `penalty` Vars count as absent.
TotalLossParts total_loss(const ad::Var& det, const ad::Var& res, const ad::Var& penalty, const LossWeights& w);

}  // namespace lrod
