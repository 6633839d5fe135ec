#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "lrod/data.hpp"
#include "lrod/lipschitz.hpp"
#include "lrod/losses.hpp"

namespace lrod {

enum class TrainMode { baseline, cascade, lrod, ablation_res_only, ablation_pen_only };

std::string to_string(TrainMode m);
TrainMode parse_train_mode(std::string_view s);

struct TrainConfig {
    TrainMode mode = TrainMode::lrod;
    std::uint64_t seed = 0;
    std::size_t epochs = 30;
    /// Epochs of restorer pre-training in cascade mode.
    std::size_t restorer_epochs = 30;
    std::size_t batch_size = 16;
    double learning_rate = 0.05;
    double weight_decay = 5e-4;
    LossWeights weights;
    DegradationMode degradation = DegradationMode::haze;
    std::size_t audit_every = 50;
    std::size_t penalty_probes = 4;
    /// "param-jacobian": Frobenius norm of d f / d theta (Hutchinson).
    /// "loss-gradient": |d L_det / d theta| on the same sample.
    std::string penalty = "param-jacobian";
    /// Divide the param-jacobian penalty by sqrt(number of output entries),
    /// i.e. penalize the RMS per-output gradient norm.
    bool penalty_per_output = true;
    /// Stop after this many optimizer steps per phase (0: no limit).
    std::size_t max_steps = 0;
    ModelConfig model;

    /// Weights after the mode's overrides (ablations zero one term; baseline
    /// and cascade use neither).
    LossWeights effective_weights() const;
    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

/// The param-jacobian penalty term as training applies it at `step`:
/// Hutchinson probes keyed by (seed, "hutchinson", step), scaled per output
/// entry when cfg.penalty_per_output is set.
ad::Var detection_penalty(const ad::Var& output, std::span<const ad::Var> params, const TrainConfig& cfg,
                          std::size_t step);

/// theta - lr (grad + weight_decay theta). Throws NumericError on a
/// non-finite gradient entry.
Tensor sgd_step(const Tensor& theta, const Tensor& grad, double lr, double weight_decay);

struct StepLog {
    std::size_t step = 0;
    std::size_t epoch = 0;
    /// 0 for the main phase; cascade pre-training logs phase 1 before it.
    int phase = 0;
    double l_det = 0, l_res = 0, penalty = 0, total = 0;  // NaN when the term is absent
    double lambda = 0, lambda_p = 0;
};

struct TrainTrace {
    TrainConfig config;
    std::vector<StepLog> steps;
    /// Full parameter vectors of the main model at every audit step and at the end.
    std::vector<std::pair<std::size_t, Tensor>> checkpoints;
    Checkpoint model;                     // detector (baseline/cascade) or shared-backbone model
    std::optional<Checkpoint> restorer;   // cascade only
    std::vector<AuditRecord> audit;       // shared-backbone modes only
    bool aborted = false;
    std::string abort_reason;

    std::string loss_csv() const;
    /// config.json, loss.csv, status.json, model.tns (+ restorer.tns),
    /// checkpoints/step_NNNNNNNN.tns, audit/step_NNNNNNNN.tns.
    void write(const std::filesystem::path& dir) const;
};

/// Trains on clean scenes with online degradation keyed by (seed, epoch,
/// index). Divergence (loss above 1e6 or non-finite) stops training and
/// returns the trace so far with `aborted` set.
TrainTrace train(const TrainConfig& cfg, const std::vector<SceneRecord>& dataset);

std::vector<AuditRecord> read_audit_records(const std::filesystem::path& dir);
std::vector<std::pair<std::size_t, Tensor>> read_checkpoints(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Evaluation

/// Greedy class-agnostic suppression in descending score order.
std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold);

struct EvalResult {
    double map = 0;
    std::vector<double> per_class_ap;  // NaN for classes without ground truth
    std::size_t images = 0;
    double score_threshold = 0.05, nms_iou = 0.5, match_iou = 0.5;

    nlohmann::json to_json() const;
};

/// VOC-style AP: predictions of a class sorted by score, each matched to the
/// highest-IoU ground truth in its image (true positive if that overlap is at
/// least `match_iou` and the box is still unclaimed), all-point interpolated
/// precision-recall area, averaged over classes with ground truth.
EvalResult evaluate_detections(const std::vector<std::vector<Detection>>& predictions,
                               const std::vector<std::vector<BoxLabel>>& ground_truth, std::size_t num_classes,
                               double match_iou = 0.5);

/// Runs the model (after the restorer, when given) on each record's degraded
/// image, or the clean image when none is stored.
EvalResult eval_map50(const Checkpoint& model, const std::optional<Checkpoint>& restorer,
                      const std::vector<SceneRecord>& val, double score_threshold = 0.05, double nms_iou = 0.5);

/// Input images (1, 3, H, W) that the evaluator feeds the model.
Tensor eval_input(const SceneRecord& r);

}  // namespace lrod
