#include "lrod/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "lrod/error.hpp"
#include "lrod/ops.hpp"
#include "lrod/rng.hpp"
#include "lrod/tensor_io.hpp"
#include "lrod/util.hpp"

namespace lrod {

namespace fs = std::filesystem;
using ad::Tape;
using ad::Var;

namespace {

constexpr double kDivergence = 1e6;
constexpr double kAbsent = std::numeric_limits<double>::quiet_NaN();

struct Aborted : Error {
    using Error::Error;
};

struct Batch {
    Tensor degraded, clean;  // NCHW
    std::vector<std::vector<BoxLabel>> labels;
};

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t n) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(seed, "shuffle", epoch));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    return order;
}

Batch make_batch(const std::vector<SceneRecord>& data, const std::vector<std::size_t>& idx, const TrainConfig& cfg,
                 std::size_t epoch) {
    std::vector<Tensor> degraded(idx.size());
    parallel_for(idx.size(), [&](std::size_t k) {
        const SceneRecord& r = data[idx[k]];
        degraded[k] = online_degradation(cfg.seed, epoch, idx[k], cfg.degradation).apply(r.image, r.depth);
    });
    std::vector<const Tensor*> dp, cp;
    Batch b;
    for (std::size_t k = 0; k < idx.size(); ++k) {
        dp.push_back(&degraded[k]);
        cp.push_back(&data[idx[k]].image);
        b.labels.push_back(data[idx[k]].annotations);
    }
    b.degraded = to_nchw(dp);
    b.clean = to_nchw(cp);
    return b;
}

Tensor sample_of(const Tensor& batch, std::size_t i) {
    const std::size_t per = batch.size() / batch.dim(0);
    Tensor out({1, batch.dim(1), batch.dim(2), batch.dim(3)});
    std::copy_n(batch.data().begin() + static_cast<long>(i * per), per, out.data().begin());
    return out;
}

bool starts_with(std::string_view s, std::string_view p) { return s.substr(0, p.size()) == p; }

double value_or_absent(const Var& v) { return v.valid() ? v.value().item() : kAbsent; }

/// Gradient over all segments; segments not in `vars` get zeros.
Tensor full_gradient(const Var& out, const BoundParams& b, const std::vector<bool>& trainable) {
    std::vector<Var> wrt;
    for (std::size_t i = 0; i < b.vars().size(); ++i)
        if (trainable[i]) wrt.push_back(b.vars()[i]);
    const auto g = ad::gradient(out, wrt);
    std::vector<Tensor> segs;
    std::size_t k = 0;
    for (std::size_t i = 0; i < b.vars().size(); ++i)
        segs.push_back(trainable[i] ? g[k++] : Tensor(b.layout().entries()[i].shape));
    return flatten(b.layout(), segs);
}

std::string diagnose(const std::vector<std::pair<const char*, Var>>& terms, const BoundParams& b,
                     const std::vector<bool>& trainable) {
    std::string bad;
    for (const auto& [name, v] : terms) {
        if (!v.valid()) continue;
        bool finite = std::isfinite(v.value().item());
        if (finite) {
            try {
                finite = full_gradient(v, b, trainable).all_finite();
            } catch (const StructuralError&) {
            }
        }
        if (!finite) bad += std::string(bad.empty() ? "" : ", ") + name;
    }
    return bad.empty() ? "unattributed" : bad;
}

void check_loss(const TotalLossParts& parts, std::size_t step) {
    const double v = parts.total.value().item();
    if (std::isfinite(v) && v <= kDivergence) return;
    char buf[256];
    std::snprintf(buf, sizeof buf, "diverged at step %zu: total %g (L_det %g, L_res %g, penalty %g)", step, v,
                  value_or_absent(parts.det), value_or_absent(parts.res), value_or_absent(parts.penalty));
    throw Aborted(buf);
}

class Loop {
public:
    Loop(const TrainConfig& cfg, const std::vector<SceneRecord>& data, TrainTrace& trace)
        : cfg_(cfg), data_(data), trace_(trace) {}

    template <class StepFn>
    void run(int phase, std::size_t epochs, StepFn&& fn) {
        std::size_t phase_steps = 0;
        for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
            const auto order = epoch_order(cfg_.seed, epoch, data_.size());
            for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
                if (cfg_.max_steps && phase_steps >= cfg_.max_steps) return;
                const std::size_t end = std::min(order.size(), start + cfg_.batch_size);
                const std::vector<std::size_t> idx(order.begin() + static_cast<long>(start),
                                                   order.begin() + static_cast<long>(end));
                const Batch batch = make_batch(data_, idx, cfg_, epoch);
                StepLog log;
                log.step = step_;
                log.epoch = epoch;
                log.phase = phase;
                fn(batch, phase_steps, log);
                trace_.steps.push_back(log);
                ++step_;
                ++phase_steps;
            }
        }
    }

    std::size_t step() const { return step_; }

private:
    const TrainConfig& cfg_;
    const std::vector<SceneRecord>& data_;
    TrainTrace& trace_;
    std::size_t step_ = 0;
};

void train_joint(const TrainConfig& cfg, const std::vector<SceneRecord>& data, TrainTrace& tr) {
    const ModelConfig& m = cfg.model;
    const LossWeights w = cfg.effective_weights();
    const bool shared = cfg.mode != TrainMode::baseline;
    const bool use_res = shared && w.lambda > 0, use_pen = w.lambda_p > 0;
    tr.model.mode = shared ? ModelMode::lrod : ModelMode::baseline;
    tr.model.config = m;
    ModelParams& params = tr.model.params;
    params = init_params(shared ? lrod_layout(m) : detector_layout(m), cfg.seed, m);
    const auto& entries = params.layout.entries();
    std::vector<bool> trainable, penalized, backbone;
    for (const auto& e : entries) {
        const bool res = starts_with(e.name, "res.");
        trainable.push_back(!res || use_res);
        penalized.push_back(!res);
        backbone.push_back(starts_with(e.name, "backbone."));
    }
    const ParamLayout backbone_layout = params.layout.subset("backbone.");
    const std::size_t H = data.front().image.dim(0), W = data.front().image.dim(1);

    Loop loop(cfg, data, tr);
    loop.run(0, cfg.epochs, [&](const Batch& batch, std::size_t local, StepLog& log) {
        const std::size_t step = loop.step();
        const bool audit_now = local % cfg.audit_every == 0;
        if (audit_now) tr.checkpoints.emplace_back(step, params.values);
        Tape t;
        const BoundParams b = bind(t, params, [&](std::string_view name) { return !starts_with(name, "res.") || use_res; });
        const Var x = t.constant(batch.degraded);
        const Features f = backbone_forward(b, x, m);
        const Var det = detection_loss(detect_forward(b, f.f4, m), assign_targets(batch.labels, H, W, m));
        Var res, pen;
        if (use_res || (shared && audit_now))
            res = charbonnier_loss(restore_forward(b, f, m), t.constant(batch.clean), w.charbonnier_eps);
        if (use_pen) {
            std::vector<Var> pv;
            for (std::size_t i = 0; i < entries.size(); ++i)
                if (penalized[i]) pv.push_back(b.vars()[i]);
            const std::size_t k = step % batch.degraded.dim(0);
            const Var xi = t.constant(sample_of(batch.degraded, k));
            if (cfg.penalty == "loss-gradient")
                pen = loss_grad_norm_penalty(
                    detection_loss(detector_forward(b, xi, m), assign_targets({batch.labels[k]}, H, W, m)), pv);
            else
                pen = detection_penalty(detector_forward(b, xi, m), pv, cfg, step);
        }
        const TotalLossParts parts = total_loss(det, res, pen, w);
        log.l_det = det.value().item();
        log.l_res = use_res ? res.value().item() : kAbsent;
        log.penalty = use_pen ? pen.value().item() : kAbsent;
        log.total = parts.total.value().item();
        log.lambda = w.lambda;
        log.lambda_p = w.lambda_p;
        check_loss(parts, step);

        const Tensor grad = full_gradient(parts.total, b, trainable);
        if (!grad.all_finite())
            throw Aborted("non-finite gradient at step " + std::to_string(step) + " from " +
                          diagnose({{"L_det", det}, {"L_res", use_res ? res : Var{}}, {"penalty", pen}}, b, trainable));

        AuditRecord rec;
        if (shared && audit_now) {
            std::vector<Var> bv;
            for (std::size_t i = 0; i < entries.size(); ++i)
                if (backbone[i]) bv.push_back(b.vars()[i]);
            rec.step = step;
            rec.lr = cfg.learning_rate;
            rec.lambda = w.lambda;
            rec.theta = params.gather_prefix("backbone.");
            rec.g_det = flatten(backbone_layout, ad::gradient_allow_unused(det, bv));
            rec.g_res = flatten(backbone_layout, ad::gradient_allow_unused(res, bv));
        }
        params.values = sgd_step(params.values, grad, cfg.learning_rate, cfg.weight_decay);
        if (shared && audit_now) {
            rec.theta_next = params.gather_prefix("backbone.");
            rec.g_step = scaled(axpy(-1.0, *rec.theta_next, rec.theta), 1.0 / cfg.learning_rate);
            tr.audit.push_back(std::move(rec));
        }
    });
    tr.checkpoints.emplace_back(loop.step(), params.values);
}

void train_cascade(const TrainConfig& cfg, const std::vector<SceneRecord>& data, TrainTrace& tr) {
    const ModelConfig& m = cfg.model;
    const double eps = cfg.weights.charbonnier_eps;
    const std::size_t H = data.front().image.dim(0), W = data.front().image.dim(1);
    Loop loop(cfg, data, tr);

    Checkpoint rest{ModelMode::cascade_restorer, m, init_params(restorer_layout(m), cfg.seed, m)};
    loop.run(1, cfg.restorer_epochs, [&](const Batch& batch, std::size_t, StepLog& log) {
        Tape t;
        const BoundParams b = bind(t, rest.params);
        const Var res = charbonnier_loss(restorer_forward(b, t.constant(batch.degraded), m), t.constant(batch.clean), eps);
        log.l_det = log.penalty = kAbsent;
        log.l_res = log.total = res.value().item();
        log.lambda = 1.0;
        log.lambda_p = 0.0;
        check_loss({Var{}, res, Var{}, res}, loop.step());
        const auto g = ad::gradient(res, b.vars());
        const Tensor grad = flatten(rest.params.layout, g);
        if (!grad.all_finite()) throw Aborted("non-finite gradient at step " + std::to_string(loop.step()) + " from L_res");
        rest.params.values = sgd_step(rest.params.values, grad, cfg.learning_rate, cfg.weight_decay);
    });
    tr.restorer = rest;

    tr.model = {ModelMode::cascade_detector, m, init_params(detector_layout(m), cfg.seed, m)};
    ModelParams& params = tr.model.params;
    loop.run(0, cfg.epochs, [&](const Batch& batch, std::size_t local, StepLog& log) {
        const std::size_t step = loop.step();
        if (local % cfg.audit_every == 0) tr.checkpoints.emplace_back(step, params.values);
        Tape t;
        Tensor restored;
        {
            Tape rt;
            ad::Tape::NoGrad ng(rt);
            restored = restorer_forward(bind(rt, rest.params, [](std::string_view) { return false; }),
                                        rt.constant(batch.degraded), m)
                           .value();
        }
        const BoundParams b = bind(t, params);
        const Var det = detection_loss(detector_forward(b, t.constant(restored), m), assign_targets(batch.labels, H, W, m));
        log.l_det = log.total = det.value().item();
        log.l_res = log.penalty = kAbsent;
        log.lambda = log.lambda_p = 0.0;
        check_loss({det, Var{}, Var{}, det}, step);
        const Tensor grad = flatten(params.layout, ad::gradient(det, b.vars()));
        if (!grad.all_finite()) throw Aborted("non-finite gradient at step " + std::to_string(step) + " from L_det");
        params.values = sgd_step(params.values, grad, cfg.learning_rate, cfg.weight_decay);
    });
    tr.checkpoints.emplace_back(loop.step(), params.values);
}

std::string fmt(double v) {
    if (std::isnan(v)) return "";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string step_file(std::size_t step) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "step_%08zu.tns", step);
    return buf;
}

std::vector<fs::path> sorted_files(const fs::path& dir) {
    std::vector<fs::path> files;
    if (!fs::is_directory(dir)) throw IoError("missing directory " + dir.string());
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".tns") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    return files;
}

}  // namespace

std::string to_string(TrainMode m) {
    switch (m) {
        case TrainMode::baseline: return "baseline";
        case TrainMode::cascade: return "cascade";
        case TrainMode::lrod: return "lrod";
        case TrainMode::ablation_res_only: return "ablation-res-only";
        case TrainMode::ablation_pen_only: return "ablation-pen-only";
    }
    return "?";
}

TrainMode parse_train_mode(std::string_view s) {
    for (auto m : {TrainMode::baseline, TrainMode::cascade, TrainMode::lrod, TrainMode::ablation_res_only,
                   TrainMode::ablation_pen_only})
        if (to_string(m) == s) return m;
    throw ParameterError("unknown training mode '" + std::string(s) + "'");
}

LossWeights TrainConfig::effective_weights() const {
    LossWeights w = weights;
    switch (mode) {
        case TrainMode::baseline:
        case TrainMode::cascade: w.lambda = w.lambda_p = 0.0; break;
        case TrainMode::ablation_res_only: w.lambda_p = 0.0; break;
        case TrainMode::ablation_pen_only: w.lambda = 0.0; break;
        case TrainMode::lrod: break;
    }
    return w;
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0) || !std::isfinite(learning_rate)) throw ParameterError("learning_rate must be positive");
    if (!(weight_decay >= 0)) throw ParameterError("weight_decay must be non-negative");
    if (audit_every < 1) throw ParameterError("audit_every must be at least 1");
    if (batch_size < 1) throw ParameterError("batch_size must be at least 1");
    if (penalty_probes < 1) throw ParameterError("penalty_probes must be at least 1");
    if (penalty != "param-jacobian" && penalty != "loss-gradient")
        throw ParameterError("penalty must be param-jacobian or loss-gradient, got '" + penalty + "'");
    weights.validate();
    model.validate();
}

nlohmann::json TrainConfig::to_json() const {
    return {{"mode", to_string(mode)},
            {"seed", seed},
            {"epochs", epochs},
            {"restorer_epochs", restorer_epochs},
            {"batch_size", batch_size},
            {"learning_rate", learning_rate},
            {"weight_decay", weight_decay},
            {"weights", weights.to_json()},
            {"degradation", to_string(degradation)},
            {"audit_every", audit_every},
            {"penalty_probes", penalty_probes},
            {"penalty", penalty},
            {"penalty_per_output", penalty_per_output},
            {"max_steps", max_steps},
            {"model", model.to_json()}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    try {
        if (j.contains("mode")) c.mode = parse_train_mode(j.at("mode").get<std::string>());
        c.seed = j.value("seed", c.seed);
        c.epochs = j.value("epochs", c.epochs);
        c.restorer_epochs = j.value("restorer_epochs", c.restorer_epochs);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        if (j.contains("weights")) c.weights = LossWeights::from_json(j.at("weights"));
        if (j.contains("degradation")) c.degradation = parse_degradation_mode(j.at("degradation").get<std::string>());
        c.audit_every = j.value("audit_every", c.audit_every);
        c.penalty_probes = j.value("penalty_probes", c.penalty_probes);
        c.penalty = j.value("penalty", c.penalty);
        c.penalty_per_output = j.value("penalty_per_output", c.penalty_per_output);
        c.max_steps = j.value("max_steps", c.max_steps);
        if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
    } catch (const nlohmann::json::exception& e) {
        throw ParameterError(std::string("bad training config: ") + e.what());
    }
    c.validate();
    return c;
}

ad::Var detection_penalty(const ad::Var& output, std::span<const ad::Var> params, const TrainConfig& cfg,
                          std::size_t step) {
    const ad::Var pen =
        param_grad_norm_penalty(output, params, cfg.penalty_probes, derive_seed(cfg.seed, "hutchinson", step));
    if (!cfg.penalty_per_output) return pen;
    return ops::scale(pen, 1.0 / std::sqrt(static_cast<double>(output.value().size())));
}

Tensor sgd_step(const Tensor& theta, const Tensor& grad, double lr, double weight_decay) {
    require_same_shape(theta.shape(), grad.shape(), "sgd_step");
    Tensor out(theta.shape());
    for (std::size_t i = 0; i < theta.size(); ++i) {
        if (!std::isfinite(grad[i])) throw NumericError("sgd_step: non-finite gradient at index " + std::to_string(i));
        out[i] = theta[i] - lr * (grad[i] + weight_decay * theta[i]);
    }
    return out;
}

TrainTrace train(const TrainConfig& cfg, const std::vector<SceneRecord>& dataset) {
    cfg.validate();
    if (dataset.empty()) throw ParameterError("train: empty dataset");
    TrainTrace tr;
    tr.config = cfg;
    try {
        if (cfg.mode == TrainMode::cascade)
            train_cascade(cfg, dataset, tr);
        else
            train_joint(cfg, dataset, tr);
    } catch (const Aborted& e) {
        tr.aborted = true;
        tr.abort_reason = e.what();
    }
    return tr;
}

std::string TrainTrace::loss_csv() const {
    std::string s = "step,epoch,phase,l_det,l_res,penalty,total,lambda,lambda_p\n";
    for (const auto& l : steps)
        s += std::to_string(l.step) + ',' + std::to_string(l.epoch) + ',' + std::to_string(l.phase) + ',' +
             fmt(l.l_det) + ',' + fmt(l.l_res) + ',' + fmt(l.penalty) + ',' + fmt(l.total) + ',' + fmt(l.lambda) +
             ',' + fmt(l.lambda_p) + '\n';
    return s;
}

void TrainTrace::write(const fs::path& dir) const {
    fs::create_directories(dir / "checkpoints");
    write_file(dir / "config.json", config.to_json().dump(2) + "\n");
    write_file(dir / "loss.csv", loss_csv());
    const nlohmann::json status{{"aborted", aborted}, {"reason", abort_reason}, {"steps", steps.size()}};
    write_file(dir / "status.json", status.dump(2) + "\n");
    save_checkpoint(dir / "model.tns", model);
    if (restorer) save_checkpoint(dir / "restorer.tns", *restorer);
    for (const auto& [step, values] : checkpoints)
        write_tns(dir / "checkpoints" / step_file(step), values, {{"step", step}});
    if (!audit.empty()) {
        fs::create_directories(dir / "audit");
        for (const auto& r : audit) {
            const std::size_t n = r.theta.size();
            Tensor rows({5, n});
            const Tensor* parts[] = {&r.theta, r.theta_next ? &*r.theta_next : &r.theta, &r.g_det, &r.g_res, &r.g_step};
            for (std::size_t k = 0; k < 5; ++k) std::copy_n(parts[k]->data().begin(), n, rows.data().begin() + long(k * n));
            write_tns(dir / "audit" / step_file(r.step), rows,
                      {{"step", r.step}, {"lr", r.lr}, {"lambda", r.lambda}, {"gap", !r.theta_next.has_value()}});
        }
    }
}

std::vector<AuditRecord> read_audit_records(const fs::path& dir) {
    std::vector<AuditRecord> out;
    for (const auto& p : sorted_files(dir)) {
        const TnsFile f = read_tns_with_header(p);
        if (f.tensor.rank() != 2 || f.tensor.dim(0) != 5) throw IoError("malformed audit record " + p.string());
        const std::size_t n = f.tensor.dim(1);
        auto row = [&](std::size_t k) {
            return Tensor({n}, std::vector<double>(f.tensor.data().begin() + long(k * n),
                                                   f.tensor.data().begin() + long((k + 1) * n)));
        };
        AuditRecord r;
        r.step = f.header.at("step").get<std::size_t>();
        r.lr = f.header.at("lr").get<double>();
        r.lambda = f.header.at("lambda").get<double>();
        r.theta = row(0);
        if (!f.header.value("gap", false)) r.theta_next = row(1);
        r.g_det = row(2);
        r.g_res = row(3);
        r.g_step = row(4);
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<std::pair<std::size_t, Tensor>> read_checkpoints(const fs::path& dir) {
    std::vector<std::pair<std::size_t, Tensor>> out;
    for (const auto& p : sorted_files(dir)) {
        TnsFile f = read_tns_with_header(p);
        out.emplace_back(f.header.at("step").get<std::size_t>(), std::move(f.tensor));
    }
    return out;
}

}  // namespace lrod
