#include <doctest.h>

#include <filesystem>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lrod/util.hpp"
#include "lrod_cli/cli.hpp"

namespace fs = std::filesystem;
using lrod::cli::dispatch;

namespace {

const fs::path kWork = LROD_CLI_WORK_DIR;

struct Result {
    int code;
    std::string out, err;
};

Result run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = dispatch(args, out, err);
    return {code, out.str(), err.str()};
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(lrod::read_file(p));
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::string c;
        std::istringstream ls(line);
        while (std::getline(ls, c, ',')) cells.push_back(c);
        rows.push_back(cells);
    }
    return rows;
}

// Small data shared by the cases below; generated once per process.
const fs::path& data_dir() {
    static const fs::path dir = [] {
        const fs::path d = kWork / "data";
        fs::remove_all(d);
        const Result r = run({"gen-data", "--seed", "7", "--n", "32", "--val-n", "8", "--out", d.string()});
        REQUIRE(r.code == 0);
        return d;
    }();
    return dir;
}

const fs::path& trained_run() {
    static const fs::path dir = [] {
        const fs::path cfg = kWork / "lrod.json";
        lrod::write_file(cfg, R"({"mode":"lrod","epochs":1,"batch_size":8,"audit_every":2,"max_steps":4})");
        const fs::path d = kWork / "run";
        fs::remove_all(d);
        const Result r = run({"train", "--config", cfg.string(), "--data", data_dir().string(), "--out", d.string()});
        REQUIRE_MESSAGE(r.code == 0, r.err);
        return d;
    }();
    return dir;
}

std::string val_manifest() { return (data_dir() / "val" / "manifest.jsonl").string(); }

}  // namespace

TEST_CASE("gen-data is deterministic") {
    const fs::path a = kWork / "gen_a", b = kWork / "gen_b";
    for (const auto& d : {a, b}) {
        fs::remove_all(d);
        REQUIRE(run({"gen-data", "--seed", "7", "--n", "12", "--val-n", "4", "--out", d.string()}).code == 0);
    }
    CHECK(lrod::sha256_file(a / "train/manifest.jsonl") == lrod::sha256_file(b / "train/manifest.jsonl"));
    CHECK(lrod::sha256_file(a / "val/manifest.jsonl") == lrod::sha256_file(b / "val/manifest.jsonl"));
    CHECK(lrod::sha256_file(a / "manifest.json") != "");
    const auto ma = nlohmann::json::parse(lrod::read_file(a / "manifest.json"));
    const auto mb = nlohmann::json::parse(lrod::read_file(b / "manifest.json"));
    CHECK(ma["inputs"].size() == 2);
    CHECK(ma["config_hash"] == mb["config_hash"]);
    CHECK(ma["seeds"]["seed"] == 7);
    CHECK(ma.contains("git_describe"));
}

TEST_CASE("train then analyze writes a parseable Lipschitz report") {
    const fs::path run_dir = trained_run();
    for (const char* f : {"model.tns", "loss.csv", "config.json", "status.json", "eval.json", "manifest.json"})
        CHECK_MESSAGE(fs::exists(run_dir / f), f);
    const Result r = run({"analyze", "--checkpoint", (run_dir / "model.tns").string(), "--probe-set", val_manifest(),
                          "--max-samples", "4", "--audit", "--feature-shift"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto rows = read_csv(run_dir / "analysis/lipschitz.csv");
    REQUIRE(rows.size() == 5);
    CHECK(rows[0] == std::vector<std::string>{"id", "sigma", "iters", "converged"});
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const double s = std::stod(rows[i][1]);
        CHECK(std::isfinite(s));
        CHECK(s > 0);
    }
    const auto summary = nlohmann::json::parse(lrod::read_file(run_dir / "analysis/summary.json"));
    CHECK(summary["n"] == 4);
    CHECK(fs::exists(run_dir / "analysis/remark1.csv"));
    CHECK(fs::exists(run_dir / "analysis/feature_shift.json"));
}

TEST_CASE("landscape at n=25 gives a 25x25 grid with a finite center") {
    const fs::path run_dir = trained_run();
    const Result r = run({"landscape", "--checkpoint", (run_dir / "model.tns").string(), "--probe-set", val_manifest(),
                          "--mode", "lrod", "--loss", "total", "--n", "25", "--batch", "4"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto rows = read_csv(run_dir / "landscape/landscape_total.csv");
    REQUIRE(rows.size() == 25);
    for (const auto& row : rows) CHECK(row.size() == 25);
    CHECK(std::isfinite(std::stod(rows[12][12])));

    // The scan needed by export-report.
    REQUIRE(run({"landscape", "--checkpoint", (run_dir / "model.tns").string(), "--probe-set", val_manifest(),
                 "--loss", "det", "--n", "5", "--batch", "4"})
                .code == 0);
    CHECK(fs::exists(run_dir / "landscape/trajectory_det.csv"));
}

TEST_CASE("analyze and landscape outputs are byte-identical across runs") {
    const fs::path run_dir = trained_run();
    const std::string ck = (run_dir / "model.tns").string();
    std::vector<std::string> hashes;
    for (int i = 0; i < 2; ++i) {
        const fs::path out = kWork / "repeat";
        fs::remove_all(out);
        REQUIRE(run({"analyze", "--checkpoint", ck, "--probe-set", val_manifest(), "--max-samples", "2", "--out",
                     (out / "a").string()})
                    .code == 0);
        REQUIRE(run({"landscape", "--checkpoint", ck, "--probe-set", val_manifest(), "--loss", "det", "--n", "3",
                     "--batch", "2", "--out", (out / "l").string()})
                    .code == 0);
        std::string h;
        for (const char* f : {"a/lipschitz.csv", "a/summary.json", "a/manifest.json", "l/landscape_det.csv",
                              "l/landscape_det.json", "l/manifest.json"})
            h += lrod::sha256_file(out / f);
        hashes.push_back(h);
    }
    CHECK(hashes[0] == hashes[1]);
}

TEST_CASE("export-report on an empty directory lists every expected file") {
    const fs::path empty = kWork / "empty_run";
    fs::remove_all(empty);
    fs::create_directories(empty);
    const Result r = run({"export-report", "--run", empty.string()});
    CHECK(r.code == 1);
    for (const auto& f : lrod::cli::expected_report_files(empty.string())) CHECK_MESSAGE(r.err.find(f) != std::string::npos, f);
}

TEST_CASE("export-report is idempotent") {
    const fs::path run_dir = trained_run();
    // Needs the analysis and landscape artifacts from the cases above.
    if (!fs::exists(run_dir / "landscape/landscape_det.csv"))
        REQUIRE(run({"landscape", "--checkpoint", (run_dir / "model.tns").string(), "--probe-set", val_manifest(),
                     "--loss", "det", "--n", "5", "--batch", "4"})
                    .code == 0);
    if (!fs::exists(run_dir / "analysis/remark1.csv"))
        REQUIRE(run({"analyze", "--checkpoint", (run_dir / "model.tns").string(), "--probe-set", val_manifest(),
                     "--max-samples", "4", "--audit"})
                    .code == 0);
    const Result a = run({"export-report", "--run", run_dir.string()});
    REQUIRE_MESSAGE(a.code == 0, a.err);
    const std::string h1 = lrod::sha256_file(run_dir / "report/report.json");
    const Result b = run({"export-report", "--run", run_dir.string()});
    REQUIRE(b.code == 0);
    CHECK(lrod::sha256_file(run_dir / "report/report.json") == h1);
    CHECK(a.out == b.out);
    const auto report = nlohmann::json::parse(lrod::read_file(run_dir / "report/report.json"));
    CHECK(report["landscapes"].size() >= 1);
    CHECK(report["audit"].is_object());
}

TEST_CASE("exit codes") {
    CHECK(run({}).code == 2);
    CHECK(run({"no-such-verb"}).code == 2);
    CHECK(run({"gen-data", "--out", (kWork / "x").string(), "--bogus"}).code == 2);
    CHECK(run({"gen-data", "--out", (kWork / "x").string(), "--n", "abc"}).code == 2);
    CHECK(run({"train", "--out", (kWork / "x").string(), "--degradation", "fog"}).code == 2);
    CHECK(run({"--help"}).code == 0);

    const Result missing = run({"eval", "--checkpoint", (kWork / "nope.tns").string(), "--data", val_manifest()});
    CHECK(missing.code == 1);
    CHECK(missing.err.find("eval failed") != std::string::npos);
    CHECK(missing.err.find("caused by") != std::string::npos);

    const Result bad_grid = run({"landscape", "--checkpoint", (trained_run() / "model.tns").string(), "--probe-set",
                                 val_manifest(), "--n", "4"});
    CHECK(bad_grid.code == 1);
}

TEST_CASE("train exits 1 on divergence and keeps the trace") {
    const fs::path cfg = kWork / "diverge.json";
    lrod::write_file(cfg, R"({"mode":"baseline","epochs":1,"batch_size":8,"learning_rate":1e6,"max_steps":4})");
    const fs::path d = kWork / "diverged";
    fs::remove_all(d);
    const Result r = run({"train", "--config", cfg.string(), "--data", data_dir().string(), "--out", d.string()});
    CHECK(r.code == 1);
    CHECK(fs::exists(d / "loss.csv"));
    const auto status = nlohmann::json::parse(lrod::read_file(d / "status.json"));
    CHECK(status["aborted"] == true);
}
