// Copyright (c) 2026 The ctdsr Authors
// SPDX-License-Identifier: Apache-2.0

#include <set>

#include "ctdsr/archive.hpp"
#include "ctdsr/trainer.hpp"
#include "json.hpp"

namespace ctdsr {
namespace {

using nlohmann::json;

constexpr const char* kFormat = "ctdsr-checkpoint";
constexpr int kVersion = 1;

struct SetRef {
    const char* prefix;
    NetworkParams<float>* params;
    AdamState* opt;
};

std::vector<SetRef> sets_of(TrainState& s) {
    return {{"dsr", &s.dsr, &s.opt_dsr},
            {"de", &s.de, &s.opt_de},
            {"sp", &s.sp, &s.opt_sp},
            {"unc", &s.uncertainty, &s.opt_uncertainty}};
}

json arch_json(const ArchConfig& a) {
    return {{"scale", a.scale},
            {"stages", a.stages},
            {"channels", a.channels},
            {"residual_units", a.residual_units},
            {"sp_width", a.sp_width}};
}

ArchConfig arch_from(const json& j) {
    ArchConfig a;
    a.scale = j.at("scale").get<int>();
    a.stages = j.at("stages").get<int>();
    a.channels = j.at("channels").get<int>();
    a.residual_units = j.at("residual_units").get<int>();
    a.sp_width = j.at("sp_width").get<int>();
    return a;
}

json read_meta(const Archive& a, const std::filesystem::path& path) {
    json meta = json::parse(a.meta_json);
    if (meta.value("format", "") != kFormat) throw ArchiveError("'" + path.string() + "' is not a checkpoint");
    if (meta.value("version", 0) != kVersion) {
        throw ArchiveError("'" + path.string() + "' has unsupported checkpoint version " +
                           std::to_string(meta.value("version", 0)));
    }
    return meta;
}

// Copies "<prefix>/<name>" tensors into `params`, collecting every mismatch.
void fill(NetworkParams<float>& params, const std::string& prefix, const Archive& a,
          std::vector<std::string>& problems) {
    for (auto& p : params.store) {
        const std::string key = prefix + "/" + p->name;
        const Tensor<float>* t = a.find(key);
        if (t == nullptr) {
            problems.push_back("missing " + key + " " + to_string(p->value.shape()));
        } else if (t->shape() != p->value.shape()) {
            problems.push_back(key + ": checkpoint " + to_string(t->shape()) + ", configuration " +
                               to_string(p->value.shape()));
        } else {
            p->value = *t;
        }
    }
}

[[noreturn]] void report(const std::filesystem::path& path, const std::vector<std::string>& problems) {
    std::string msg = "checkpoint '" + path.string() + "' does not match the configuration:";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw ConfigError(msg);
}

}  // namespace

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
    auto& s = const_cast<TrainState&>(state);  // read-only below
    Archive a;
    json meta;
    meta["format"] = kFormat;
    meta["version"] = kVersion;
    meta["arch"] = arch_json(state.dsr.arch);
    meta["N"] = state.dsr.arch.stages;
    meta["C"] = state.dsr.arch.channels;
    meta["scale"] = state.dsr.arch.scale;
    meta["epoch"] = state.epoch;
    meta["errors"] = {{"dsr_sum", state.err_dsr_sum}, {"de_sum", state.err_de_sum}, {"count", state.err_count}};
    meta["role_history"] = json::array();
    for (const auto& r : state.role_history) {
        meta["role_history"].push_back(
            {{"epoch", r.epoch}, {"teacher", to_string(r.teacher)}, {"e_dsr", r.e_dsr}, {"e_de", r.e_de}});
    }
    meta["adam_steps"] = json::object();
    for (const auto& set : sets_of(s)) {
        if (set.params->store.size() == 0) continue;
        json steps = json::array();
        for (const auto& slot : set.opt->slots) steps.push_back(slot.step);
        meta["adam_steps"][set.prefix] = steps;
        for (const auto& p : set.params->store) a.tensors.push_back({std::string(set.prefix) + "/" + p->name, p->value});
        std::size_t i = 0;
        for (const auto& p : set.params->store) {
            if (i < set.opt->slots.size() && !set.opt->slots[i].m.empty()) {
                const std::string base = std::string("adam/") + set.prefix;
                a.tensors.push_back({base + "/m/" + p->name, set.opt->slots[i].m});
                a.tensors.push_back({base + "/v/" + p->name, set.opt->slots[i].v});
            }
            ++i;
        }
    }
    a.meta_json = meta.dump();
    write_archive(path, a);
}

ArchConfig checkpoint_arch(const std::filesystem::path& path) {
    const Archive a = read_archive(path);
    return arch_from(read_meta(a, path).at("arch"));
}

TrainState load_checkpoint(const std::filesystem::path& path, const ArchConfig& arch) {
    const Archive a = read_archive(path);
    const json meta = read_meta(a, path);
    std::vector<std::string> problems;
    const ArchConfig stored = arch_from(meta.at("arch"));
    if (!(stored == arch)) {
        problems.push_back("header records N=" + std::to_string(stored.stages) + " C=" +
                           std::to_string(stored.channels) + " x" + std::to_string(stored.scale) +
                           ", configuration has N=" + std::to_string(arch.stages) + " C=" +
                           std::to_string(arch.channels) + " x" + std::to_string(arch.scale));
    }

    TrainState s;
    s.dsr = init_dsrnet<float>(arch, 0);
    s.de = init_denet<float>(arch, 0);
    std::set<std::string> present_sets;
    for (const auto& t : a.tensors) present_sets.insert(t.name.substr(0, t.name.find('/')));
    if (present_sets.contains("sp")) s.sp = init_spnet<float>(arch, 0);
    if (present_sets.contains("unc")) s.uncertainty = init_uncertainty<float>(arch);

    std::set<std::string> expected;
    const json steps = meta.value("adam_steps", json::object());
    for (const auto& set : sets_of(s)) {
        if (set.params->store.size() == 0) continue;
        fill(*set.params, set.prefix, a, problems);
        set.opt->slots.assign(set.params->store.size(), AdamSlot{});
        const json st = steps.value(set.prefix, json::array());
        std::size_t i = 0;
        for (const auto& p : set.params->store) {
            expected.insert(std::string(set.prefix) + "/" + p->name);
            AdamSlot& slot = set.opt->slots[i];
            if (i < st.size()) slot.step = st[i].get<std::int64_t>();
            const std::string base = std::string("adam/") + set.prefix;
            const Tensor<float>* m = a.find(base + "/m/" + p->name);
            const Tensor<float>* v = a.find(base + "/v/" + p->name);
            if (m != nullptr && v != nullptr) {
                expected.insert(base + "/m/" + p->name);
                expected.insert(base + "/v/" + p->name);
                if (m->shape() != p->value.shape() || v->shape() != p->value.shape()) {
                    problems.push_back(base + "/*/" + p->name + ": moment shape differs from parameter");
                } else {
                    slot.m = *m;
                    slot.v = *v;
                }
            }
            ++i;
        }
    }
    for (const auto& t : a.tensors) {
        if (!expected.contains(t.name)) problems.push_back("unexpected " + t.name + " " + to_string(t.value.shape()));
    }
    if (!problems.empty()) report(path, problems);

    s.epoch = meta.at("epoch").get<int>();
    const json& e = meta.at("errors");
    s.err_dsr_sum = e.at("dsr_sum").get<double>();
    s.err_de_sum = e.at("de_sum").get<double>();
    s.err_count = e.at("count").get<std::int64_t>();
    for (const auto& r : meta.at("role_history")) {
        s.role_history.push_back({r.at("epoch").get<int>(), r.at("teacher").get<std::string>() == "DSR" ? Role::dsr : Role::de,
                                  r.at("e_dsr").get<double>(), r.at("e_de").get<double>()});
    }
    return s;
}

NetworkParams<float> load_dsr_params(const std::filesystem::path& path) {
    const Archive a = read_archive(path);
    const json meta = read_meta(a, path);
    NetworkParams<float> p = init_dsrnet<float>(arch_from(meta.at("arch")), 0);
    std::vector<std::string> problems;
    fill(p, "dsr", a, problems);
    if (!problems.empty()) report(path, problems);
    return p;
}

}  // namespace ctdsr
