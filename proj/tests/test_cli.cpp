// Copyright (c) 2026 The ctdsr Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "config_file.hpp"
#include "ctdsr/archive.hpp"
#include "ctdsr/image_io.hpp"
#include "json.hpp"
#include "test_util.hpp"

using namespace ctdsr;
namespace fs = std::filesystem;
using ctdsr::testing::slurp;
using ctdsr::testing::TempDir;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result call(std::vector<std::string> args) {
    args.insert(args.begin(), "ctdsr");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out;
    std::ostringstream err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

bool contains(const std::string& s, const std::string& part) { return s.find(part) != std::string::npos; }

const char* kTinyConfig = R"([model]
scale = 4
stages = 2
channels = 4
residual_units = 1

[train]
batch_size = 4
step1_epochs = 1
max_epochs = 2
pool_size = 4
seed = 3

[loss]
gamma = 0.5
)";

// Toy scenes and prepared shards shared by the tests below.
struct Workspace {
    TempDir dir{"cli"};
    fs::path scenes = dir.path / "scenes";
    fs::path shards = dir.path / "shards";
    fs::path config = dir.path / "tiny.ini";

    Workspace() {
        REQUIRE(call({"make-toy", "--output", scenes.string(), "--count", "3", "--size", "64", "--seed", "9"}).code ==
                0);
        REQUIRE(call({"prepare", "--input", scenes.string(), "--output", shards.string(), "--scale", "4",
                      "--patch-size", "32", "--count", "8", "--depth-format", "pfm"})
                    .code == 0);
        std::ofstream(config) << kTinyConfig;
    }
};

Workspace& workspace() {
    static Workspace w;
    return w;
}

}  // namespace

TEST_CASE("usage errors exit with 1") {
    CHECK(call({}).code == 1);
    CHECK(call({"bogus"}).code == 1);
    CHECK(call({"train"}).code == 1);
    auto r = call({"infer", "--checkpoint", "x.ctar", "--input", "a.pfm", "--output", "b.pfm", "--rgb", "c.png"});
    CHECK(r.code == 1);
    CHECK(contains(r.err, "--rgb"));
    CHECK(call({"--help"}).code == 0);
}

TEST_CASE("make-toy and prepare") {
    auto& w = workspace();
    CHECK(fs::exists(w.scenes / "toy0002_color.png"));
    CHECK(fs::exists(w.scenes / "toy0002_depth.pfm"));
    CHECK(fs::exists(w.scenes / "run_manifest.json"));
    const auto samples = read_shards(w.shards);
    CHECK(samples.size() == 8);
    for (const auto& s : samples) {
        CHECK(s.scale == 4);
        CHECK(same_extent(s.d_hr, 32, 32));
        CHECK(same_extent(s.d_lr, 8, 8));
    }
    auto manifest = nlohmann::json::parse(slurp(w.shards / "run_manifest.json"));
    CHECK(manifest["command"] == "prepare");
    CHECK(manifest.contains("config_hash"));
    CHECK(manifest.contains("version"));

    SUBCASE("rerun is byte-identical") {
        const fs::path again = w.dir.path / "shards_again";
        REQUIRE(call({"prepare", "--input", w.scenes.string(), "--output", again.string(), "--scale", "4",
                      "--patch-size", "32", "--count", "8", "--depth-format", "pfm"})
                    .code == 0);
        for (const auto& entry : fs::directory_iterator(w.shards)) {
            CAPTURE(entry.path().filename().string());
            CHECK(slurp(entry.path()) == slurp(again / entry.path().filename()));
        }
    }
    SUBCASE("unsupported scale") {
        auto r = call({"prepare", "--input", w.scenes.string(), "--output", (w.dir.path / "x3").string(), "--scale",
                       "3", "--count", "4", "--depth-format", "pfm"});
        CHECK(r.code == 1);
        CHECK(contains(r.err, "unsupported scale"));
    }
    SUBCASE("missing input directory") {
        auto r = call({"prepare", "--input", (w.dir.path / "nowhere").string(), "--output",
                       (w.dir.path / "none").string(), "--count", "4"});
        CHECK(r.code == 1);
    }
}

TEST_CASE("config files") {
    TempDir dir("cfg");
    cli::RunConfig c;
    std::vector<std::string> errors;
    std::ofstream(dir.path / "a.ini") << kTinyConfig << "[optimizer]\nmomentum = 0.8\n";
    cli::apply_file(c, dir.path / "a.ini", errors);
    CHECK(errors.empty());
    CHECK(c.train.arch.channels == 4);
    CHECK(c.train.optimizer.beta1 == 0.8);
    CHECK(c.train.max_epochs == 2);

    cli::RunConfig again;
    std::ofstream(dir.path / "b.ini") << cli::to_ini(c);
    cli::apply_file(again, dir.path / "b.ini", errors);
    CHECK(errors.empty());
    CHECK(again.train == c.train);
    CHECK(cli::config_hash(again) == cli::config_hash(c));

    std::ofstream(dir.path / "bad.ini") << "[model]\nscale = 3\nwidth = 4\n[optimizer]\nmomentum = 0.8\nbeta1 = 0.7\n";
    cli::RunConfig bad;
    cli::apply_file(bad, dir.path / "bad.ini", errors);
    for (auto& e : validation_errors(bad.train)) errors.push_back(e);
    CHECK(errors.size() >= 3);
}

TEST_CASE("train, resume, eval and infer") {
    auto& w = workspace();
    const fs::path run = w.dir.path / "run";
    auto r = call({"train", "--config", w.config.string(), "--data", w.shards.string(), "--out", run.string()});
    INFO(r.err);
    REQUIRE(r.code == 0);
    CHECK(contains(r.out, "teacher"));
    CHECK(fs::exists(run / "final.ctar"));
    CHECK(fs::exists(run / "checkpoint.ctar"));
    CHECK(fs::exists(run / "config.ini"));
    auto manifest = nlohmann::json::parse(slurp(run / "manifest.json"));
    CHECK(manifest["command"] == "train");
    CHECK(manifest["seed"] == 3);
    {
        std::ifstream log(run / "train_log.jsonl");
        std::string line;
        int lines = 0;
        while (std::getline(log, line)) ++lines;
        CHECK(lines == 2);
    }

    SUBCASE("rerun gives identical weights") {
        const fs::path twin = w.dir.path / "twin";
        REQUIRE(call({"train", "--config", w.config.string(), "--data", w.shards.string(), "--out", twin.string()})
                    .code == 0);
        CHECK(load_dsr_params(twin / "final.ctar").checksum() == load_dsr_params(run / "final.ctar").checksum());
    }
    SUBCASE("resume continues the epoch count") {
        const fs::path more = w.dir.path / "more";
        auto m = call({"train", "--config", w.config.string(), "--data", w.shards.string(), "--out", more.string(),
                       "--resume", (run / "final.ctar").string(), "--max-epochs", "3"});
        INFO(m.err);
        REQUIRE(m.code == 0);
        CHECK(contains(m.out, "resuming after epoch 2"));
        CHECK(contains(m.out, "epoch    3"));
        CHECK(load_checkpoint(more / "final.ctar", load_checkpoint(run / "final.ctar", {4, 2, 4, 1, 0}).dsr.arch)
                  .epoch == 3);
    }
    SUBCASE("ablation") {
        const fs::path abl = w.dir.path / "ablate";
        auto a = call({"train", "--config", w.config.string(), "--data", w.shards.string(), "--out", abl.string(),
                       "--ablate", "no-cross-task"});
        REQUIRE(a.code == 0);
        CHECK(contains(slurp(abl / "config.ini"), "student = dsr"));
        CHECK(call({"train", "--config", w.config.string(), "--data", w.shards.string(), "--out", abl.string(),
                    "--ablate", "no-everything"})
                  .code == 1);
    }
    SUBCASE("invalid configuration lists problems") {
        auto bad = call({"train", "--config", w.config.string(), "--data", w.shards.string(), "--out",
                         (w.dir.path / "bad").string(), "--set", "model.scale=3", "--set", "train.batch_size=0"});
        CHECK(bad.code == 1);
        CHECK(contains(bad.err, "scale"));
        CHECK(contains(bad.err, "batch"));
        auto mismatch = call({"train", "--config", w.config.string(), "--data", w.shards.string(), "--out",
                              (w.dir.path / "mm").string(), "--set", "model.scale=2"});
        CHECK(mismatch.code == 1);
    }
    SUBCASE("eval") {
        const fs::path rep = w.dir.path / "report";
        auto e = call({"eval", "--checkpoint", (run / "final.ctar").string(), "--data", w.scenes.string(), "--scale",
                       "4", "--depth-format", "pfm", "--out", rep.string()});
        INFO(e.err);
        REQUIRE(e.code == 0);
        CHECK(contains(e.out, "toy0000"));
        CHECK(contains(e.out, "mean"));
        auto report = nlohmann::json::parse(slurp(rep / "report.json"));
        CHECK(report["rows"].size() == 3);
        CHECK(report["mean"]["bicubic_mad"].get<double>() > 0);
        CHECK(fs::exists(rep / "report.csv"));
        CHECK(fs::exists(rep / "manifest.json"));
        CHECK(call({"eval", "--checkpoint", (run / "final.ctar").string(), "--data", w.scenes.string(), "--scale",
                    "2", "--depth-format", "pfm"})
                  .code == 1);
    }
    SUBCASE("infer needs depth only") {
        TempDir solo("solo");
        io::write_pfm(solo.path / "lr.pfm", testing::random_tensor<float>({1, 12, 10}, 5, 0, 1));
        const auto args = [&](const std::string& out) {
            return std::vector<std::string>{"infer", "--checkpoint", (run / "final.ctar").string(), "--input",
                                            (solo.path / "lr.pfm").string(), "--output", (solo.path / out).string()};
        };
        auto i = call(args("a.pfm"));
        INFO(i.err);
        REQUIRE(i.code == 0);
        CHECK(contains(i.out, "12x10 -> 48x40"));
        REQUIRE(call(args("b.pfm")).code == 0);
        CHECK(slurp(solo.path / "a.pfm") == slurp(solo.path / "b.pfm"));
        CHECK(io::read_pfm(solo.path / "a.pfm").shape() == Shape{1, 48, 40});
        CHECK(fs::exists(solo.path / "a.pfm.manifest.json"));
        CHECK(call(args("c.txt")).code == 1);
    }
    SUBCASE("missing checkpoint") {
        CHECK(call({"eval", "--checkpoint", (w.dir.path / "none.ctar").string(), "--data", w.scenes.string(),
                    "--scale", "4"})
                  .code == 1);
    }
}

TEST_CASE("non-finite training exits with 2") {
    auto& w = workspace();
    const fs::path run = w.dir.path / "nan";
    auto r = call({"train", "--config", w.config.string(), "--data", w.shards.string(), "--out", run.string(),
                   "--set", "train.initial_lr=1e30"});
    CHECK(r.code == 2);
    CHECK(contains(r.err, "training aborted"));
}
