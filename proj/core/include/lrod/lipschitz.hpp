#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lrod/models.hpp"

namespace lrod {

// ---------------------------------------------------------------------------
// Spectral norms by power iteration

struct PowerOptions {
    std::size_t max_iters = 100;
    double tol = 1e-6;  // relative change of sigma between iterations
    std::uint64_t seed = 0;
    /// Warm start; drawn from `seed` when empty.
    std::optional<Tensor> initial;
};

struct SpectralEstimate {
    double sigma = 0;
    std::size_t iters = 0;
    bool converged = false;
    Tensor u, v;  // left and right singular vector estimates
    std::vector<double> history;  // sigma after each iteration
};

using LinearMap = std::function<Tensor(const Tensor&)>;

/// Top singular value of a linear operator given its forward and adjoint
/// actions: v <- J^T u / |J^T u|, u <- J v / |J v|, sigma = u^T J v.
SpectralEstimate power_iteration(const LinearMap& apply, const LinearMap& apply_adjoint, const Shape& input_shape,
                                 const PowerOptions& opt);

/// A differentiable map of one input built on a caller-provided tape.
using ModelFn = std::function<ad::Var(ad::Tape&, const ad::Var&)>;

/// Input-to-output maps of the trained models, parameters held constant.
/// Each binds a fresh copy of the parameters on the caller's tape.
ModelFn detector_fn(const ModelParams& params, const ModelConfig& cfg);
ModelFn restorer_fn(const ModelParams& params, const ModelConfig& cfg);
ModelFn cascade_fn(const ModelParams& restorer, const ModelParams& detector, const ModelConfig& cfg);
/// Restoration output of a shared-backbone model.
ModelFn lrod_restoration_fn(const ModelParams& params, const ModelConfig& cfg);

/// Spectral norm of df/dx at x (x is one sample, with or without a batch
/// axis of extent 1), alternating JVPs and VJPs.
SpectralEstimate input_spectral_norm(const ModelFn& f, const Tensor& x, const PowerOptions& opt = {});

// ---------------------------------------------------------------------------
// Dataset statistics

struct SampleNorm {
    std::string id;
    double sigma = 0;
    std::size_t iters = 0;
    bool converged = false;
};

struct LipschitzReport {
    std::vector<SampleNorm> per_sample;
    double sup = 0;
    double q1 = 0, median = 0, q3 = 0;
    double min = 0, max = 0;

    std::string to_csv() const;
    nlohmann::json summary_json() const;
};

/// Quantile of an ascending sequence by linear interpolation between order
/// statistics (position p (n - 1)).
double quantile_sorted(const std::vector<double>& sorted, double p);

LipschitzReport summarize(std::vector<SampleNorm> norms);

struct Sample {
    std::string id;
    Tensor x;
};

/// Per-sample sigma on independent tapes (in parallel), then quartiles. Each
/// sample's start vector is keyed by (opt.seed, sample id), so results do not
/// depend on sample order.
LipschitzReport dataset_sweep(const ModelFn& f, const std::vector<Sample>& samples, const PowerOptions& opt = {});

/// Norm of d f(haze(clean, beta)) / d beta: the sensitivity to haze density
/// as a scalar. `clean` is (1, 3, H, W), `depth` (1, 1, H, W).
double beta_jacobian_norm(const ModelFn& f, const Tensor& clean, const Tensor& depth, double beta,
                          const std::array<double, 3>& airlight);

// ---------------------------------------------------------------------------
// Feature shift

/// Returns the feature maps to compare, each (N, C, h, w).
using FeatureFn = std::function<std::vector<Tensor>(const Tensor& x)>;

/// Fraction of channels, pooled over all returned maps, for which
/// mean|F_c(x + dx) - F_c(x)| > threshold * mean|F_c(x)|.
double feature_shift_fraction(const FeatureFn& features, const Tensor& x, const Tensor& x_shifted, double threshold);

// ---------------------------------------------------------------------------
// Lipschitz-evolution audit

/// Gradient quantities captured at one optimizer step, restricted to the
/// backbone parameters theta_b.
struct AuditRecord {
    std::size_t step = 0;
    double lr = 0;
    double lambda = 0;
    Tensor theta;       // theta_b at step t
    std::optional<Tensor> theta_next;  // theta_b at t + 1; empty is a gap
    Tensor g_det;       // grad of L_det
    Tensor g_res;       // grad of L_res (unweighted)
    Tensor g_step;      // full update direction: (theta - theta_next) / lr
};

/// Backbone map with its parameters bound from a flat theta_b Var.
using BackboneFn = std::function<ad::Var(ad::Tape&, const ad::Var& theta_b, const ad::Var& x)>;

/// x -> F4 for the four-stage backbone laid out by `backbone_layout` (the
/// "backbone." subset of a model layout).
BackboneFn make_backbone_fn(const ParamLayout& backbone_layout, const ModelConfig& cfg);

struct Remark1Row {
    std::size_t step = 0;
    double lip = 0, lip_next = 0;
    std::size_t xstar = 0;
    double gamma = 0;       // <grad Lip, g_res>
    double xi = 0;          // -<grad Lip, g_step - lambda g_res>
    double xi_det = 0;      // <grad Lip, g_det>, sign as written in the bound's statement
    double dlipdt = 0;      // (lip_next - lip) / lr
    double residual = 0;    // dlipdt - (-lambda gamma + xi)
    double lr = 0, lambda = 0;
    double g_res_norm = 0, g_det_norm = 0;
    bool a1 = false;        // |g_res| < |g_det|
    bool a2 = false;        // gamma > 0
    bool gap = false;       // no next checkpoint: terms after lip are not reported
    bool converged = false;
};

struct Remark1Trace {
    std::vector<Remark1Row> rows;
    std::string to_csv() const;
};

struct LipProxy {
    double sigma = 0;
    std::size_t argmax = 0;
    std::vector<SpectralEstimate> per_probe;
};

/// max over probes of the backbone Jacobian spectral norm at theta_b.
/// `warm` (same length as probes) seeds each power iteration.
LipProxy backbone_lip_proxy(const BackboneFn& f, const Tensor& theta_b, const std::vector<Tensor>& probes,
                            const PowerOptions& opt, const std::vector<SpectralEstimate>* warm = nullptr);

/// d sigma / d theta_b with the converged singular vectors held fixed:
/// gradient of <J^T u, v>.
Tensor lip_gradient(const BackboneFn& f, const Tensor& theta_b, const Tensor& x, const Tensor& u, const Tensor& v);

Remark1Trace remark1_audit(const std::vector<AuditRecord>& records, const BackboneFn& f,
                           const std::vector<Tensor>& probes, const PowerOptions& opt);

/// Closed-form oracle: f(x) = theta^2 x, L_det = (theta - 2)^2 / 2,
/// L_res = (theta - 0.5)^2 / 2, lambda = 1, theta_0 = 1, plain gradient steps
/// of size mu for round(horizon / mu) steps. The residual equals mu g^2.
std::vector<AuditRecord> remark1_toy_records(double mu, double horizon = 1.0);
BackboneFn remark1_toy_backbone();

struct Remark1Calibration {
    std::vector<double> mus;
    std::vector<double> max_residual;
    double slope = 0;  // least-squares slope of log max residual vs log mu
    double c = 0;      // 2 * max over runs of max(residual / mu)
};
Remark1Calibration calibrate_remark1(const std::vector<double>& mus = {1e-2, 1e-3, 1e-4});

}  // namespace lrod
