#include "lrod_cli/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "lrod/landscape.hpp"
#include "lrod/lipschitz.hpp"
#include "lrod/rng.hpp"
#include "lrod/tensor_io.hpp"
#include "lrod/training.hpp"
#include "lrod/util.hpp"

namespace lrod::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

class UsageError : public Error {
public:
    using Error::Error;
};

std::string hex(std::uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void print_chain(std::ostream& err, const std::exception& e, int depth = 0) {
    err << (depth == 0 ? "error: " : "  caused by: ") << e.what() << '\n';
    try {
        std::rethrow_if_nested(e);
    } catch (const std::exception& inner) {
        print_chain(err, inner, depth + 1);
    } catch (...) {
        err << "  caused by: unknown exception\n";
    }
}

/// Every verb leaves one of these next to its outputs. No timestamps, so
/// repeated runs give identical bytes.
void write_manifest(const fs::path& dir, const std::string& verb, const std::vector<std::string>& args,
                    const json& config, const json& seeds, const std::vector<fs::path>& inputs) {
    json in = json::object();
    for (const auto& p : inputs) in[p.generic_string()] = sha256_file(p);
    const json m{{"verb", verb},
                 {"args", args},
                 {"config", config},
                 {"config_hash", sha256_hex(config.dump())},
                 {"seeds", seeds},
                 {"git_describe", std::string(build_describe())},
                 {"inputs", in}};
    fs::create_directories(dir);
    write_file(dir / "manifest.json", m.dump(2) + "\n");
}

json read_json(const fs::path& p) {
    try {
        return json::parse(read_file(p));
    } catch (const json::exception& e) {
        throw IoError(p.string() + ": " + e.what());
    }
}

std::vector<SceneRecord> load_limited(const fs::path& manifest, std::size_t limit) {
    std::vector<SceneRecord> r = load_split(manifest);
    if (limit && r.size() > limit) r.resize(limit);
    if (r.empty()) throw ParameterError(manifest.string() + ": no records");
    return r;
}

struct LoadedModel {
    Checkpoint model;
    std::optional<Checkpoint> restorer;  // sibling restorer.tns of a cascade detector
    fs::path dir;
    TrainConfig train;  // from the run's config.json when present
};

LoadedModel load_model(const fs::path& checkpoint) {
    LoadedModel m;
    m.model = load_checkpoint(checkpoint);
    m.dir = checkpoint.parent_path();
    if (m.model.mode == ModelMode::cascade_detector && fs::exists(m.dir / "restorer.tns"))
        m.restorer = load_checkpoint(m.dir / "restorer.tns");
    if (fs::exists(m.dir / "config.json")) m.train = TrainConfig::from_json(read_json(m.dir / "config.json"));
    return m;
}

// ---------------------------------------------------------------------------
// gen-data

struct GenArgs {
    std::uint64_t seed = 0;
    std::size_t n = 2000, val_n = 500;
    std::string out, degradation = "haze";
    SceneConfig scene;
};

int run_gen_data(const GenArgs& a, const std::vector<std::string>& args, std::ostream& out) {
    const fs::path dir = a.out;
    SplitSpec train{a.seed, Split::train, a.n, a.scene, std::nullopt};
    SplitSpec val{a.seed, Split::val, a.val_n, a.scene, parse_degradation_mode(a.degradation)};
    const fs::path tm = build_split(train, dir / "train");
    const fs::path vm = build_split(val, dir / "val");
    const json config{{"scene", a.scene.to_json()}, {"n", a.n}, {"val_n", a.val_n}, {"degradation", a.degradation}};
    write_manifest(dir, "gen-data", args, config, {{"seed", a.seed}}, {tm, vm});
    out << "train manifest " << sha256_file(tm) << '\n' << "val manifest   " << sha256_file(vm) << '\n';
    return kOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
    std::string config, data, out, mode, degradation;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> epochs, max_steps;
};

int run_train(const TrainArgs& a, const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    json cj = a.config.empty() ? json::object() : read_json(a.config);
    std::string data = a.data;
    if (data.empty() && cj.contains("data")) data = cj.at("data").get<std::string>();
    if (data.empty()) throw UsageError("train: --data is required (or a \"data\" key in the config)");
    cj.erase("data");
    if (!a.mode.empty()) cj["mode"] = a.mode;
    if (!a.degradation.empty()) cj["degradation"] = a.degradation;
    if (a.seed) cj["seed"] = *a.seed;
    if (a.epochs) cj["epochs"] = *a.epochs;
    if (a.max_steps) cj["max_steps"] = *a.max_steps;
    const TrainConfig cfg = TrainConfig::from_json(cj);

    const fs::path tm = fs::path(data) / "train" / "manifest.jsonl";
    const fs::path vm = fs::path(data) / "val" / "manifest.jsonl";
    const auto records = load_split(tm);
    const TrainTrace trace = train(cfg, records);
    const fs::path dir = a.out;
    trace.write(dir);
    std::vector<fs::path> inputs{tm};
    if (!trace.aborted && fs::exists(vm)) {
        inputs.push_back(vm);
        const EvalResult r = eval_map50(trace.model, trace.restorer, load_split(vm));
        write_file(dir / "eval.json", r.to_json().dump(2) + "\n");
        out << "mAP@50 " << r.map << '\n';
    }
    write_manifest(dir, "train", args, cfg.to_json(), {{"seed", cfg.seed}}, inputs);
    out << "model " << sha256_file(dir / "model.tns") << '\n';
    if (trace.aborted) {
        err << "error: training aborted: " << trace.abort_reason << " (trace written to " << dir.string() << ")\n";
        return kRuntimeError;
    }
    return kOk;
}

// ---------------------------------------------------------------------------
// analyze

struct AnalyzeArgs {
    std::string checkpoint, probe_set, out, target = "auto";
    std::uint64_t seed = 0;
    std::size_t max_samples = 0, max_iters = 100, audit_probes = 64;
    double tol = 1e-6, audit_tol = 1e-10, shift = 0.1, shift_threshold = 0.1;
    bool audit = false, feature_shift = false;
};

ModelFn analysis_target(const LoadedModel& m, std::string& target) {
    const Checkpoint& c = m.model;
    if (target == "auto") target = c.mode == ModelMode::cascade_restorer ? "restorer" : "detector";
    if (target == "detector") {
        if (c.mode == ModelMode::cascade_restorer) throw ParameterError("analyze: restorer checkpoint has no detector");
        return detector_fn(c.params, c.config);
    }
    if (target == "restorer") {
        if (c.mode == ModelMode::cascade_restorer) return restorer_fn(c.params, c.config);
        if (c.mode == ModelMode::lrod) return lrod_restoration_fn(c.params, c.config);
        if (m.restorer) return restorer_fn(m.restorer->params, m.restorer->config);
        throw ParameterError("analyze: checkpoint has no restoration path");
    }
    if (target == "cascade") {
        if (!m.restorer) throw ParameterError("analyze: cascade target needs restorer.tns next to the checkpoint");
        return cascade_fn(m.restorer->params, c.params, c.config);
    }
    throw UsageError("analyze: unknown --target '" + target + "'");
}

FeatureFn backbone_features(const LoadedModel& m) {
    return [&m](const Tensor& x) {
        ad::Tape t;
        ad::Tape::NoGrad ng(t);
        const auto frozen = [](std::string_view) { return false; };
        ad::Var in = t.constant(x);
        if (m.restorer) in = restorer_forward(bind(t, m.restorer->params, frozen), in, m.restorer->config);
        const Features f = backbone_forward(bind(t, m.model.params, frozen), in, m.model.config);
        std::vector<Tensor> out{f.f1.value(), f.f2.value(), f.f3.value()};
        if (f.f4.valid()) out.push_back(f.f4.value());
        return out;
    };
}

Degradation shifted(Degradation d, double delta) {
    if (d.mode == DegradationMode::haze)
        d.haze.beta += delta;
    else
        d.dark.gamma += delta;
    return d;
}

int run_analyze(const AnalyzeArgs& a, const std::vector<std::string>& args, std::ostream& out) {
    const LoadedModel m = load_model(a.checkpoint);
    const fs::path dir = a.out.empty() ? m.dir / "analysis" : fs::path(a.out);
    fs::create_directories(dir);
    const auto records = load_limited(a.probe_set, a.max_samples);
    std::string target = a.target;
    const ModelFn f = analysis_target(m, target);

    PowerOptions opt;
    opt.max_iters = a.max_iters;
    opt.tol = a.tol;
    opt.seed = a.seed;
    std::vector<Sample> samples;
    for (const auto& r : records) samples.push_back({r.id, eval_input(r)});
    const LipschitzReport rep = dataset_sweep(f, samples, opt);
    write_file(dir / "lipschitz.csv", rep.to_csv());
    json summary = rep.summary_json();
    summary["target"] = target;
    summary["mode"] = to_string(m.model.mode);
    write_file(dir / "summary.json", summary.dump(2) + "\n");
    out << target << " sigma median " << rep.median << " sup " << rep.sup << '\n';

    if (a.feature_shift) {
        const FeatureFn feats = backbone_features(m);
        std::vector<double> frac(records.size());
        parallel_for(records.size(), [&](std::size_t i) {
            const SceneRecord& r = records[i];
            if (!r.degradation) throw ParameterError("feature shift: record " + r.id + " has no degradation");
            const Tensor x = to_nchw({&*r.degraded});
            const Tensor moved = shifted(*r.degradation, a.shift).apply(r.image, r.depth);
            frac[i] = feature_shift_fraction(feats, x, to_nchw({&moved}), a.shift_threshold);
        });
        json per = json::array();
        double sum = 0;
        for (std::size_t i = 0; i < records.size(); ++i) {
            per.push_back({{"id", records[i].id}, {"fraction", frac[i]}});
            sum += frac[i];
        }
        const double mean = sum / static_cast<double>(records.size());
        const json fj{{"shift", a.shift}, {"threshold", a.shift_threshold}, {"mean", mean}, {"per_sample", per}};
        write_file(dir / "feature_shift.json", fj.dump(2) + "\n");
        out << "feature shift fraction " << mean << '\n';
    }

    if (a.audit) {
        if (m.model.mode != ModelMode::lrod) throw ParameterError("analyze --audit needs a shared-backbone checkpoint");
        const auto recs = read_audit_records(m.dir / "audit");
        std::vector<Tensor> probes;
        for (std::size_t i = 0; i < std::min(a.audit_probes, samples.size()); ++i) probes.push_back(samples[i].x);
        PowerOptions aopt;
        aopt.max_iters = 1000;
        aopt.tol = a.audit_tol;
        aopt.seed = a.seed;
        const BackboneFn bf = make_backbone_fn(m.model.params.layout.subset("backbone."), m.model.config);
        const Remark1Trace tr = remark1_audit(recs, bf, probes, aopt);
        write_file(dir / "remark1.csv", tr.to_csv());
        const Remark1Calibration cal = calibrate_remark1();
        std::size_t qualifying = 0, within = 0;
        for (const auto& row : tr.rows) {
            if (row.gap || !row.a1 || !row.a2) continue;
            ++qualifying;
            within += row.residual <= cal.c * row.lr;
        }
        const json rj{{"c", cal.c},
                      {"calibration_slope", cal.slope},
                      {"calibration_mus", cal.mus},
                      {"rows", tr.rows.size()},
                      {"qualifying", qualifying},
                      {"within_bound", within},
                      {"fraction", qualifying ? static_cast<double>(within) / static_cast<double>(qualifying) : 0.0}};
        write_file(dir / "remark1.json", rj.dump(2) + "\n");
        out << "audit: " << within << "/" << qualifying << " qualifying steps within c*mu\n";
    }

    const json config{{"target", target},           {"max_samples", a.max_samples}, {"max_iters", a.max_iters},
                      {"tol", a.tol},               {"audit", a.audit},             {"audit_probes", a.audit_probes},
                      {"audit_tol", a.audit_tol},   {"feature_shift", a.feature_shift}, {"shift", a.shift},
                      {"shift_threshold", a.shift_threshold}};
    write_manifest(dir, "analyze", args, config, {{"seed", a.seed}, {"power_start_key", hex(opt.seed)}},
                   {a.checkpoint, a.probe_set});
    return kOk;
}

// ---------------------------------------------------------------------------
// landscape

struct LandscapeArgs {
    std::string checkpoint, probe_set, out, loss = "total", mode;
    std::size_t n = 25, batch = 256;
    double range = 1.0;
    std::uint64_t seed = 0;
};

struct ScanBatch {
    Tensor x, clean;
    std::vector<std::vector<BoxLabel>> labels;
    std::size_t h = 0, w = 0;
};

int run_landscape(const LandscapeArgs& a, const std::vector<std::string>& args, std::ostream& out) {
    const LoadedModel m = load_model(a.checkpoint);
    if (!a.mode.empty()) {
        const TrainMode tm = parse_train_mode(a.mode);
        const ModelMode want = tm == TrainMode::baseline  ? ModelMode::baseline
                               : tm == TrainMode::cascade ? ModelMode::cascade_detector
                                                          : ModelMode::lrod;
        if (m.model.mode != want)
            throw ParameterError("landscape: --mode " + a.mode + " does not match checkpoint mode " +
                                 to_string(m.model.mode));
    }
    if (a.loss != "det" && a.loss != "res" && a.loss != "total")
        throw UsageError("landscape: --loss must be det, res or total");
    const fs::path dir = a.out.empty() ? m.dir / "landscape" : fs::path(a.out);
    fs::create_directories(dir);

    const auto records = load_limited(a.probe_set, a.batch);
    ScanBatch b;
    std::vector<const Tensor*> xs, cs;
    std::vector<Tensor> inputs;
    for (const auto& r : records) {
        xs.push_back(r.degraded ? &*r.degraded : &r.image);
        cs.push_back(&r.image);
        b.labels.push_back(r.annotations);
    }
    b.x = to_nchw(xs);
    b.clean = to_nchw(cs);
    b.h = records.front().image.dim(0);
    b.w = records.front().image.dim(1);
    const DetectionTargets targets = assign_targets(b.labels, b.h, b.w, m.model.config);
    const LossWeights w = m.train.effective_weights();
    TrainConfig pen_cfg = m.train;
    pen_cfg.seed = a.seed;
    const ModelConfig& cfg = m.model.config;
    const auto frozen = [](std::string_view) { return false; };

    // Which parameter vector is scanned, and how its loss is computed.
    const bool res_on_restorer = a.loss == "res" && m.model.mode != ModelMode::lrod;
    if (res_on_restorer && !m.restorer && m.model.mode != ModelMode::cascade_restorer)
        throw ParameterError("landscape: checkpoint has no restoration output");
    const Checkpoint& scanned = res_on_restorer && m.restorer ? *m.restorer : m.model;
    const bool has_res = m.model.mode == ModelMode::lrod;

    const ThetaLoss det_loss = [&](const Tensor& theta) {
        ad::Tape t;
        ad::Tape::NoGrad ng(t);
        const BoundParams p = bind(t, ModelParams{scanned.params.layout, theta}, frozen);
        return detection_loss(detector_forward(p, t.constant(b.x), cfg), targets).value().item();
    };
    const ThetaLoss res_loss = [&](const Tensor& theta) {
        ad::Tape t;
        ad::Tape::NoGrad ng(t);
        const BoundParams p = bind(t, ModelParams{scanned.params.layout, theta}, frozen);
        const ad::Var x = t.constant(b.x);
        const ad::Var r = scanned.params.layout.contains("det.out.weight")
                              ? restore_forward(p, backbone_forward(p, x, cfg), cfg)
                              : restorer_forward(p, x, cfg);
        return charbonnier_loss(r, t.constant(b.clean), w.charbonnier_eps).value().item();
    };
    const ThetaLoss total_loss_fn = [&](const Tensor& theta) {
        double v = det_loss(theta);
        if (!has_res) return v;
        if (w.lambda > 0) v += w.lambda * res_loss(theta);
        if (w.lambda_p > 0) {
            ad::Tape t;
            const BoundParams p = bind(t, ModelParams{scanned.params.layout, theta},
                                       [](std::string_view n) { return n.substr(0, 4) != "res."; });
            std::vector<ad::Var> pv;
            for (std::size_t i = 0; i < p.vars().size(); ++i)
                if (p.layout().entries()[i].name.substr(0, 4) != "res.") pv.push_back(p.vars()[i]);
            Tensor x0({1, 3, b.h, b.w});
            std::copy_n(b.x.data().begin(), x0.size(), x0.data().begin());
            v += w.lambda_p * detection_penalty(detector_forward(p, t.constant(x0), cfg), pv, pen_cfg, 0).value().item();
        }
        return v;
    };
    const ThetaLoss& loss = a.loss == "det" ? det_loss : a.loss == "res" ? res_loss : total_loss_fn;

    const Directions d = sample_directions(scanned.params.values, scanned.params.layout, a.seed);
    LandscapeGrid g = scan(loss, scanned.params.values, d, {-a.range, a.range}, {-a.range, a.range}, a.n);
    g.label = to_string(scanned.mode) + ":" + a.loss;
    write_file(dir / ("landscape_" + a.loss + ".csv"), g.to_csv());
    json meta = g.metadata_json();
    meta["loss"] = a.loss;
    meta["mode"] = to_string(scanned.mode);
    meta["batch"] = records.size();
    meta["zero_filters"] = d.zero_filters;
    write_file(dir / ("landscape_" + a.loss + ".json"), meta.dump(2) + "\n");
    out << g.label << " center " << g.center_loss << " roughness " << meta["roughness"].get<double>() << '\n';

    if (&scanned == &m.model && fs::is_directory(m.dir / "checkpoints")) {
        const auto cks = read_checkpoints(m.dir / "checkpoints");
        if (cks.size() >= 2 && cks.front().second.size() == scanned.params.values.size())
            write_file(dir / ("trajectory_" + a.loss + ".csv"), trajectory_csv(project_trajectory(cks, d.delta, d.eta)));
    }
    const json config{{"loss", a.loss}, {"n", a.n}, {"range", a.range}, {"batch", records.size()}};
    write_manifest(dir, "landscape", args, config,
                   {{"seed", a.seed}, {"seed_delta", hex(d.seed_delta)}, {"seed_eta", hex(d.seed_eta)}},
                   {a.checkpoint, a.probe_set});
    return kOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
    std::string checkpoint, data, out, restorer;
    double score_threshold = 0.05, nms_iou = 0.5;
};

int run_eval(const EvalArgs& a, const std::vector<std::string>& args, std::ostream& out) {
    LoadedModel m = load_model(a.checkpoint);
    if (!a.restorer.empty()) m.restorer = load_checkpoint(a.restorer);
    const EvalResult r = eval_map50(m.model, m.restorer, load_split(a.data), a.score_threshold, a.nms_iou);
    const fs::path file = a.out.empty() ? m.dir / "eval.json" : fs::path(a.out);
    if (file.has_parent_path()) fs::create_directories(file.parent_path());
    write_file(file, r.to_json().dump(2) + "\n");
    std::vector<fs::path> inputs{a.checkpoint, a.data};
    if (!a.restorer.empty()) inputs.emplace_back(a.restorer);
    const json config{{"score_threshold", a.score_threshold}, {"nms_iou", a.nms_iou}};
    const fs::path mdir = file.has_parent_path() ? file.parent_path() : fs::path(".");
    write_manifest(mdir / "eval", "eval", args, config, json::object(), inputs);
    out << "mAP@50 " << r.map << '\n';
    return kOk;
}

// ---------------------------------------------------------------------------
// export-report

json csv_table(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::vector<std::string> cols;
    json rows = json::array();
    bool header = true;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.emplace_back();
        if (header) {
            cols = cells;
            header = false;
            continue;
        }
        json row = json::array();
        for (const auto& c : cells) {
            char* end = nullptr;
            const double v = std::strtod(c.c_str(), &end);
            if (c.empty() || !std::isfinite(v))
                row.push_back(nullptr);
            else if (end && *end == '\0')
                row.push_back(v);
            else
                row.push_back(c);
        }
        rows.push_back(row);
    }
    return {{"columns", cols}, {"rows", rows}};
}

json csv_matrix(const std::string& text) {
    json m = json::array();
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        json row = json::array();
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) {
            const double v = std::strtod(cell.c_str(), nullptr);
            row.push_back(std::isfinite(v) ? json(v) : json(nullptr));
        }
        m.push_back(row);
    }
    return m;
}

int run_export(const std::string& run, const std::string& out_arg, const std::vector<std::string>& args,
               std::ostream& out) {
    const fs::path dir = run;
    std::vector<std::string> missing;
    for (const auto& f : expected_report_files(run))
        if (!fs::exists(dir / f)) missing.push_back(f);
    if (!missing.empty()) {
        std::string msg = "export-report: missing artifacts in " + dir.string() + ":";
        for (const auto& f : missing) msg += "\n    " + f;
        throw IoError(msg);
    }
    const fs::path bundle = out_arg.empty() ? dir / "report" : fs::path(out_arg);
    fs::create_directories(bundle);

    json report;
    report["schema"] = "lrod-report/1";
    report["config"] = read_json(dir / "config.json");
    report["status"] = read_json(dir / "status.json");
    report["loss_curve"] = csv_table(read_file(dir / "loss.csv"));
    report["eval"] = read_json(dir / "eval.json");
    report["lipschitz"] = {{"summary", read_json(dir / "analysis/summary.json")},
                           {"per_sample", csv_table(read_file(dir / "analysis/lipschitz.csv"))}};
    report["audit"] = nullptr;
    if (fs::exists(dir / "analysis/remark1.csv")) {
        report["audit"] = {{"rows", csv_table(read_file(dir / "analysis/remark1.csv"))},
                           {"summary", fs::exists(dir / "analysis/remark1.json") ? read_json(dir / "analysis/remark1.json")
                                                                                  : json(nullptr)}};
    }
    report["feature_shift"] =
        fs::exists(dir / "analysis/feature_shift.json") ? read_json(dir / "analysis/feature_shift.json") : json(nullptr);
    json grids = json::array();
    std::vector<fs::path> copies{dir / "loss.csv", dir / "analysis/lipschitz.csv"};
    if (fs::exists(dir / "analysis/remark1.csv")) copies.push_back(dir / "analysis/remark1.csv");
    for (const char* loss : {"det", "res", "total"}) {
        const fs::path csv = dir / "landscape" / (std::string("landscape_") + loss + ".csv");
        if (!fs::exists(csv)) continue;
        copies.push_back(csv);
        json g{{"loss", loss},
               {"metadata", read_json(dir / "landscape" / (std::string("landscape_") + loss + ".json"))},
               {"values", csv_matrix(read_file(csv))}};
        const fs::path traj = dir / "landscape" / (std::string("trajectory_") + loss + ".csv");
        g["trajectory"] = fs::exists(traj) ? csv_table(read_file(traj)) : json(nullptr);
        if (fs::exists(traj)) copies.push_back(traj);
        grids.push_back(g);
    }
    report["landscapes"] = grids;
    write_file(bundle / "report.json", report.dump(1) + "\n");
    for (const auto& c : copies) write_file(bundle / c.filename(), read_file(c));
    std::vector<fs::path> inputs;
    for (const auto& f : expected_report_files(run)) inputs.push_back(dir / f);
    write_manifest(bundle, "export-report", args, json::object(), json::object(), inputs);
    out << "report " << sha256_file(bundle / "report.json") << '\n';
    return kOk;
}

}  // namespace

std::vector<std::string> expected_report_files(const std::string& run_dir) {
    std::vector<std::string> files{"config.json",           "status.json",         "loss.csv",
                                   "eval.json",             "analysis/summary.json", "analysis/lipschitz.csv",
                                   "landscape/landscape_det.csv", "landscape/landscape_det.json"};
    if (fs::is_directory(fs::path(run_dir) / "audit")) files.push_back("analysis/remark1.csv");
    return files;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Lipschitz-regularized detection toolkit", "lrod"};
    app.require_subcommand(1);

    GenArgs gen;
    auto* g = app.add_subcommand("gen-data", "Generate train and degraded val splits");
    g->add_option("--seed", gen.seed, "Run seed");
    g->add_option("--n", gen.n, "Training scenes");
    g->add_option("--val-n", gen.val_n, "Validation scenes");
    g->add_option("--out", gen.out, "Output directory")->required();
    g->add_option("--degradation", gen.degradation, "Validation degradation")->check(CLI::IsMember({"haze", "dark"}));
    g->add_option("--height", gen.scene.height, "Image height");
    g->add_option("--width", gen.scene.width, "Image width");
    g->add_option("--max-objects", gen.scene.max_objects, "Objects per scene, at most");

    TrainArgs tr;
    std::uint64_t tr_seed = 0;
    std::size_t tr_epochs = 0, tr_max_steps = 0;
    auto* t = app.add_subcommand("train", "Train one model");
    t->add_option("--config", tr.config, "Training config (JSON)");
    t->add_option("--data", tr.data, "gen-data output directory");
    t->add_option("--out", tr.out, "Run directory")->required();
    auto* ts = t->add_option("--seed", tr_seed, "Override the config seed");
    t->add_option("--mode", tr.mode, "Override the mode")
        ->check(CLI::IsMember({"baseline", "cascade", "lrod", "ablation-res-only", "ablation-pen-only"}));
    t->add_option("--degradation", tr.degradation, "Override the degradation")->check(CLI::IsMember({"haze", "dark"}));
    auto* te = t->add_option("--epochs", tr_epochs, "Override the epoch count");
    auto* tms = t->add_option("--max-steps", tr_max_steps, "Stop after this many steps per phase");

    AnalyzeArgs an;
    auto* a = app.add_subcommand("analyze", "Lipschitz sweeps, feature shift and the training audit");
    a->add_option("--checkpoint", an.checkpoint, "Model checkpoint (.tns)")->required();
    a->add_option("--probe-set", an.probe_set, "Manifest of probe images")->required();
    a->add_option("--out", an.out, "Output directory (default: <run>/analysis)");
    a->add_option("--seed", an.seed, "Power-iteration seed");
    a->add_option("--target", an.target, "detector, restorer, cascade or auto")
        ->check(CLI::IsMember({"auto", "detector", "restorer", "cascade"}));
    a->add_option("--max-samples", an.max_samples, "Use the first N probes (0: all)");
    a->add_option("--max-iters", an.max_iters, "Power-iteration limit");
    a->add_option("--tol", an.tol, "Power-iteration relative tolerance");
    a->add_flag("--audit", an.audit, "Evaluate the Lipschitz-evolution bound on the run's audit records");
    a->add_option("--audit-probes", an.audit_probes, "Probe images for the audit");
    a->add_option("--audit-tol", an.audit_tol, "Power-iteration tolerance for the audit");
    a->add_flag("--feature-shift", an.feature_shift, "Backbone feature shift under a degradation change");
    a->add_option("--shift", an.shift, "Degradation parameter change");
    a->add_option("--shift-threshold", an.shift_threshold, "Relative change counted as shifted");

    LandscapeArgs ls;
    auto* l = app.add_subcommand("landscape", "2-D loss landscape around a checkpoint");
    l->add_option("--checkpoint", ls.checkpoint, "Model checkpoint (.tns)")->required();
    l->add_option("--probe-set", ls.probe_set, "Manifest of the fixed evaluation batch")->required();
    l->add_option("--out", ls.out, "Output directory (default: <run>/landscape)");
    l->add_option("--mode", ls.mode, "Expected training mode of the checkpoint");
    l->add_option("--loss", ls.loss, "det, res or total")->check(CLI::IsMember({"det", "res", "total"}));
    l->add_option("--n", ls.n, "Grid points per axis (odd)");
    l->add_option("--range", ls.range, "Half-width of the scanned square");
    l->add_option("--batch", ls.batch, "Evaluation batch size");
    l->add_option("--seed", ls.seed, "Direction seed");

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "mAP@50 on a split");
    e->add_option("--checkpoint", ev.checkpoint, "Detector checkpoint (.tns)")->required();
    e->add_option("--data", ev.data, "Split manifest")->required();
    e->add_option("--restorer", ev.restorer, "Restorer applied first");
    e->add_option("--out", ev.out, "Report file (default: <run>/eval.json)");
    e->add_option("--score-threshold", ev.score_threshold, "Minimum detection score");
    e->add_option("--nms-iou", ev.nms_iou, "Suppression overlap");

    std::string ex_run, ex_out;
    auto* x = app.add_subcommand("export-report", "Bundle a run directory into one report");
    x->add_option("--run", ex_run, "Run directory")->required();
    x->add_option("--out", ex_out, "Bundle directory (default: <run>/report)");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& pe) {
        err << "usage error: " << pe.what() << "\n\n";
        const auto subs = app.get_subcommands();
        err << (subs.empty() ? app.help() : subs.front()->help());
        return kUsageError;
    }

    const std::string verb = app.get_subcommands().front()->get_name();
    try {
        try {
            if (verb == "gen-data") return run_gen_data(gen, args, out);
            if (verb == "train") {
                if (ts->count()) tr.seed = tr_seed;
                if (te->count()) tr.epochs = tr_epochs;
                if (tms->count()) tr.max_steps = tr_max_steps;
                return run_train(tr, args, out, err);
            }
            if (verb == "analyze") return run_analyze(an, args, out);
            if (verb == "landscape") return run_landscape(ls, args, out);
            if (verb == "eval") return run_eval(ev, args, out);
            if (verb == "export-report") return run_export(ex_run, ex_out, args, out);
        } catch (const UsageError&) {
            throw;
        } catch (...) {
            std::throw_with_nested(Error(verb + " failed"));
        }
    } catch (const UsageError& ue) {
        err << "usage error: " << ue.what() << "\n\n" << app.get_subcommands().front()->help();
        return kUsageError;
    } catch (const std::exception& ex) {
        print_chain(err, ex);
        return kRuntimeError;
    }
    return kUsageError;
}

}  // namespace lrod::cli
