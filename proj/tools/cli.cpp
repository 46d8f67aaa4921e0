// Copyright (c) 2026 The ctdsr Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "config_file.hpp"
#include "ctdsr/archive.hpp"
#include "ctdsr/data_pipeline.hpp"
#include "ctdsr/evaluate.hpp"
#include "ctdsr/image_io.hpp"
#include "ctdsr/trainer.hpp"
#include "json.hpp"

#ifndef CTDSR_VERSION
#define CTDSR_VERSION "unknown"
#endif

namespace ctdsr::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Input problems the user can fix; mapped to exit code 1.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string hash_text(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp);
        out << text;
        if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
    }
    fs::rename(tmp, path);
}

void write_manifest(const fs::path& path, const std::string& command, const std::string& config_hash,
                    std::uint64_t seed, json extra = json::object()) {
    extra["command"] = command;
    extra["config_hash"] = config_hash;
    extra["seed"] = seed;
    extra["version"] = CTDSR_VERSION;
    write_text(path, extra.dump(2) + "\n");
}

DepthFormat parse_format(const std::string& s) {
    if (s == "png16" || s == "png") return DepthFormat::png16;
    if (s == "pfm") return DepthFormat::pfm;
    throw UsageError("unknown depth format '" + s + "' (png16 or pfm)");
}

void require_scale(int scale) {
    if (!is_supported_scale(scale)) {
        throw UsageError("unsupported scale " + std::to_string(scale) + " (supported: 2, 4, 8, 16)");
    }
}

// ---------------------------------------------------------------------------

struct PrepareArgs {
    std::string input, output, format = "png16";
    int scale = 4, patch = 256, count = 0, shard_size = 256;
    std::uint64_t seed = 1;
};

int cmd_prepare(const PrepareArgs& a, std::ostream& out) {
    require_scale(a.scale);
    const LoadedDataset ds = load_rgbd_pairs(a.input, parse_format(a.format));
    const auto samples = extract_patches(ds.pairs, a.patch, a.count, a.scale, a.seed);
    json meta{{"input", a.input}, {"scale", a.scale}, {"patch_size", a.patch}, {"count", a.count},
              {"seed", a.seed},   {"depth_max", ds.depth_max}};
    const auto shards = write_shards(samples, a.output, a.shard_size, meta.dump());
    write_manifest(fs::path(a.output) / "run_manifest.json", "prepare", hash_text(meta.dump()), a.seed, meta);
    out << a.input << ": " << ds.pairs.size() << " pairs, " << samples.size() << " patches of " << a.patch << "x"
        << a.patch << " (x" << a.scale << "), " << shards.size() << " shard(s), depth max " << ds.depth_max << "\n";
    return kOk;
}

// ---------------------------------------------------------------------------

struct ToyArgs {
    std::string output, prefix = "toy";
    int count = 0, size = 64;
    std::uint64_t seed = 1;
};

int cmd_make_toy(const ToyArgs& a, std::ostream& out) {
    if (a.count < 1) throw UsageError("--count must be positive");
    fs::create_directories(a.output);
    for (int i = 0; i < a.count; ++i) {
        const ToyScene scene = generate_toy_scene(mix_seed(a.seed, static_cast<std::uint64_t>(i)), a.size);
        char stem[64];
        std::snprintf(stem, sizeof stem, "%s%04d", a.prefix.c_str(), i);
        Tensor<float> rgb = scene.rgb.tensor();
        for (auto& v : rgb.values()) v *= 255.0f;
        io::write_png(fs::path(a.output) / (std::string(stem) + "_color.png"), rgb, 8);
        io::write_pfm(fs::path(a.output) / (std::string(stem) + "_depth.pfm"), scene.depth.tensor());
    }
    json meta{{"count", a.count}, {"size", a.size}, {"prefix", a.prefix}};
    write_manifest(fs::path(a.output) / "run_manifest.json", "make-toy", hash_text(meta.dump()), a.seed, meta);
    out << "wrote " << a.count << " toy RGB-D pairs of " << a.size << "x" << a.size << " to " << a.output << "\n";
    return kOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string config, data, out, resume;
    std::vector<std::string> ablate, set;
    std::optional<std::uint64_t> seed;
    std::optional<int> step1_epochs, max_epochs, batch_size;
    bool cache_teacher = false;
};

void apply_ablation(RunConfig& c, const std::string& name, std::vector<std::string>& errors) {
    if (name == "no-distill") {
        c.train.weights.rho2 = 0;
    } else if (name == "no-affinity") {
        c.train.weights.gamma = 0;
    } else if (name == "no-structure") {
        c.train.weights.rho1 = 0;
    } else if (name == "no-cross-task") {
        c.train.weights.rho1 = 0;
        c.train.weights.rho2 = 0;
        c.train.student = Role::dsr;
    } else {
        errors.push_back("unknown ablation '" + name +
                         "' (no-distill, no-affinity, no-structure, no-cross-task)");
    }
}

json epoch_json(const EpochRecord& r) {
    json losses = json::object();
    for (const auto& [k, v] : r.losses) losses[k] = v;
    return {{"epoch", r.epoch},
            {"step", r.step},
            {"lr", r.lr},
            {"losses", losses},
            {"e_dsr", r.e_dsr},
            {"e_de", r.e_de},
            {"teacher", r.teacher ? json(to_string(*r.teacher)) : json(nullptr)},
            {"seconds", r.seconds}};
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
    RunConfig c;
    std::vector<std::string> errors;
    apply_file(c, a.config, errors);
    for (const auto& kv : a.set) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            errors.push_back("--set expects key=value, got '" + kv + "'");
            continue;
        }
        apply_setting(c, kv.substr(0, eq), kv.substr(eq + 1), errors);
    }
    if (!a.data.empty()) c.data = a.data;
    if (!a.out.empty()) c.output = a.out;
    if (a.seed) c.train.seed = *a.seed;
    if (a.step1_epochs) c.train.step1_epochs = *a.step1_epochs;
    if (a.max_epochs) c.train.max_epochs = *a.max_epochs;
    if (a.batch_size) c.train.batch_size = *a.batch_size;
    for (const auto& name : a.ablate) apply_ablation(c, name, errors);
    for (auto& e : validation_errors(c.train)) errors.push_back(std::move(e));
    if (c.data.empty()) errors.emplace_back("no training data: set paths.data or --data");
    if (c.output.empty()) errors.emplace_back("no output directory: set paths.output or --out");
    if (!a.resume.empty() && !fs::exists(a.resume)) errors.push_back("checkpoint '" + a.resume + "' not found");
    if (!errors.empty()) {
        err << "invalid configuration:\n";
        for (const auto& e : errors) err << "  - " << e << "\n";
        return kValidation;
    }

    const auto data = read_shards(c.data);
    for (const auto& s : data) {
        if (s.scale != c.train.arch.scale) {
            throw UsageError("shards in '" + c.data.string() + "' are x" + std::to_string(s.scale) +
                             ", configuration is x" + std::to_string(c.train.arch.scale));
        }
    }

    fs::create_directories(c.output);
    const std::string hash = config_hash(c);
    write_text(c.output / "config.ini", to_ini(c));
    write_manifest(c.output / "manifest.json", "train", hash, c.train.seed,
                   {{"data", c.data.string()},
                    {"samples", data.size()},
                    {"resume", a.resume},
                    {"data_manifest_crc32", crc32_of_file(c.data / "manifest.json")}});

    TrainState state = a.resume.empty() ? init_state(c.train) : load_checkpoint(a.resume, c.train.arch);
    if (!a.resume.empty()) out << "resuming after epoch " << state.epoch << "\n";

    std::ofstream log(c.output / "train_log.jsonl", a.resume.empty() ? std::ios::trunc : std::ios::app);
    TeacherCache cache;
    TrainHooks hooks;
    if (a.cache_teacher) hooks.teacher_cache = &cache;
    hooks.on_epoch_end = [&](const EpochRecord& r, const TrainState& s) {
        log << epoch_json(r).dump() << "\n";
        log.flush();
        save_checkpoint(s, c.output / "checkpoint.ctar");
        out << "epoch " << std::setw(4) << r.epoch << "  step " << r.step << "  lr " << r.lr << "  e_dsr "
            << r.e_dsr << "  e_de " << r.e_de;
        if (r.teacher) out << "  teacher " << to_string(*r.teacher);
        out << "  " << std::fixed << std::setprecision(1) << r.seconds << "s" << std::defaultfloat
            << std::setprecision(6) << "\n";
    };
    train(state, c.train, data, hooks);
    save_checkpoint(state, c.output / "final.ctar");
    out << "final checkpoint: " << (c.output / "final.ctar").string() << "  dsr checksum " << std::hex
        << state.dsr.checksum() << std::dec << "\n";
    return kOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string checkpoint, data, format = "png16", out;
    int scale = 4;
    double unit_scale = 1.0;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
    require_scale(a.scale);
    if (!fs::exists(a.checkpoint)) throw UsageError("checkpoint '" + a.checkpoint + "' not found");
    const NetworkParams<float> dsr = load_dsr_params(a.checkpoint);
    if (dsr.arch.scale != a.scale) {
        throw UsageError("scale mismatch: checkpoint is x" + std::to_string(dsr.arch.scale) + ", --scale is x" +
                         std::to_string(a.scale));
    }
    const LoadedDataset ds = load_rgbd_pairs(a.data, parse_format(a.format));
    // Depth was normalised by the dataset maximum; report in file units times unit_scale.
    const EvalReport report = evaluate(ds.pairs, &dsr, a.scale, static_cast<double>(ds.depth_max) * a.unit_scale);
    out << to_text_table(report);
    if (!a.out.empty()) {
        fs::create_directories(a.out);
        write_text(fs::path(a.out) / "report.json", to_json(report) + "\n");
        write_text(fs::path(a.out) / "report.csv", to_csv(report));
        write_text(fs::path(a.out) / "report.txt", to_text_table(report));
        json meta{{"checkpoint", a.checkpoint}, {"data", a.data}, {"scale", a.scale}, {"unit_scale", a.unit_scale}};
        write_manifest(fs::path(a.out) / "manifest.json", "eval", hash_text(meta.dump()), 0, meta);
    }
    return kOk;
}

// ---------------------------------------------------------------------------

struct InferArgs {
    std::string checkpoint, input, output;
    std::optional<double> depth_max;
};

bool has_ext(const fs::path& p, const char* ext) { return p.extension() == ext; }

int cmd_infer(const InferArgs& a, std::ostream& out) {
    if (!fs::exists(a.checkpoint)) throw UsageError("checkpoint '" + a.checkpoint + "' not found");
    if (!fs::exists(a.input)) throw UsageError("input depth '" + a.input + "' not found");
    const fs::path in(a.input);
    const fs::path dst(a.output);
    if (!has_ext(dst, ".pfm") && !has_ext(dst, ".png")) throw UsageError("output must end in .pfm or .png");

    Tensor<float> raw;
    double depth_max = 1.0;
    if (has_ext(in, ".pfm")) {
        raw = io::read_pfm(in);
    } else if (has_ext(in, ".png")) {
        io::PngImage png = io::read_png(in);
        raw = std::move(png.values);
        depth_max = png.bit_depth == 16 ? 65535.0 : 255.0;
    } else {
        throw UsageError("input depth must be .pfm or .png");
    }
    if (raw.shape().channels != 1) throw UsageError("input depth '" + a.input + "' must have one channel");
    if (a.depth_max) depth_max = *a.depth_max;
    if (!(depth_max > 0)) throw UsageError("--depth-max must be positive");

    const NetworkParams<float> dsr = load_dsr_params(a.checkpoint);
    for (auto& v : raw.values()) v = static_cast<float>(v / depth_max);
    const DepthMap lr(std::move(raw));

    const auto t0 = std::chrono::steady_clock::now();
    const DepthMap hr = infer(lr, dsr);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

    Tensor<float> result = hr.tensor();
    for (auto& v : result.values()) v = static_cast<float>(v * depth_max);
    if (dst.has_parent_path()) fs::create_directories(dst.parent_path());
    if (has_ext(dst, ".pfm")) {
        io::write_pfm(dst, result);
    } else {
        io::write_png(dst, result, 16);
    }
    json meta{{"checkpoint", a.checkpoint}, {"input", a.input}, {"output", a.output}, {"depth_max", depth_max}};
    fs::path manifest = dst;
    manifest += ".manifest.json";
    write_manifest(manifest, "infer", hash_text(meta.dump()), 0, meta);
    out << lr.height() << "x" << lr.width() << " -> " << hr.height() << "x" << hr.width() << " (x"
        << dsr.arch.scale << ") in " << std::fixed << std::setprecision(2) << ms << " ms\n"
        << std::defaultfloat;
    return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"ctdsr: cross-task depth super-resolution"};
    app.require_subcommand(1);
    app.set_version_flag("--version", CTDSR_VERSION);

    PrepareArgs pa;
    auto* prepare = app.add_subcommand("prepare", "Cut RGB-D pairs into training patch shards");
    prepare->add_option("--input", pa.input, "Directory of <stem>_color.png / <stem>_depth.* pairs")->required();
    prepare->add_option("--output", pa.output, "Shard directory")->required();
    prepare->add_option("--scale", pa.scale, "Upsampling factor (2, 4, 8, 16)");
    prepare->add_option("--patch-size", pa.patch, "HR patch size");
    prepare->add_option("--count", pa.count, "Number of patches")->required();
    prepare->add_option("--seed", pa.seed);
    prepare->add_option("--depth-format", pa.format, "png16 or pfm");
    prepare->add_option("--shard-size", pa.shard_size, "Samples per shard");

    ToyArgs ta;
    auto* toy = app.add_subcommand("make-toy", "Write procedural RGB-D scenes");
    toy->add_option("--output", ta.output)->required();
    toy->add_option("--count", ta.count)->required();
    toy->add_option("--size", ta.size);
    toy->add_option("--seed", ta.seed);
    toy->add_option("--prefix", ta.prefix);

    TrainArgs tr;
    auto* trn = app.add_subcommand("train", "Two-step cross-task training");
    trn->add_option("--config", tr.config, "INI configuration file")->required();
    trn->add_option("--data", tr.data, "Shard directory (overrides paths.data)");
    trn->add_option("--out", tr.out, "Run directory (overrides paths.output)");
    trn->add_option("--resume", tr.resume, "Checkpoint to continue from");
    trn->add_option("--ablate", tr.ablate, "no-distill | no-affinity | no-structure | no-cross-task");
    trn->add_option("--set", tr.set, "section.key=value override");
    trn->add_option("--seed", tr.seed);
    trn->add_option("--step1-epochs", tr.step1_epochs);
    trn->add_option("--max-epochs", tr.max_epochs);
    trn->add_option("--batch-size", tr.batch_size);
    trn->add_flag("--cache-teacher", tr.cache_teacher, "Keep frozen-teacher outputs in memory (no augmentation)");

    EvalArgs ea;
    auto* evl = app.add_subcommand("eval", "MAD / RMSE on full RGB-D scenes");
    evl->add_option("--checkpoint", ea.checkpoint)->required();
    evl->add_option("--data", ea.data)->required();
    evl->add_option("--scale", ea.scale)->required();
    evl->add_option("--unit-scale", ea.unit_scale, "Multiplier applied to file depth units");
    evl->add_option("--depth-format", ea.format, "png16 or pfm");
    evl->add_option("--out", ea.out, "Directory for report.{json,csv,txt}");

    InferArgs ia;
    auto* inf = app.add_subcommand("infer", "Super-resolve one depth map (depth only)");
    inf->add_option("--checkpoint", ia.checkpoint)->required();
    inf->add_option("--input", ia.input, "LR depth (.pfm or .png)")->required();
    inf->add_option("--output", ia.output, "HR depth (.pfm or 16-bit .png)")->required();
    inf->add_option("--depth-max", ia.depth_max, "Raw value mapped to 1.0");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        std::ostringstream o;
        std::ostringstream e2;
        const int code = app.exit(e, o, e2);
        out << o.str();
        err << e2.str();
        return code == 0 ? kOk : kValidation;
    }

    try {
        if (*prepare) return cmd_prepare(pa, out);
        if (*toy) return cmd_make_toy(ta, out);
        if (*trn) return cmd_train(tr, out, err);
        if (*evl) return cmd_eval(ea, out);
        if (*inf) return cmd_infer(ia, out);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const DataError& e) {
        err << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const io::IoError& e) {
        err << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const ArchiveError& e) {
        err << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const TrainingAborted& e) {
        err << "training aborted: " << e.what() << "\n";
        return kAbort;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kAbort;
    }
    return kOk;
}

}  // namespace ctdsr::cli
