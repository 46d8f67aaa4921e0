// Copyright (c) 2026 The ctdsr Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>
#include <fstream>

#include "ctdsr/archive.hpp"
#include "ctdsr/data_pipeline.hpp"
#include "json.hpp"

namespace ctdsr {
namespace {

using nlohmann::json;

std::string shard_name(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "shard-%05zu.ctar", index);
    return buf;
}

const Tensor<float>& require(const Archive& a, const std::string& name, const std::filesystem::path& file) {
    const Tensor<float>* t = a.find(name);
    if (t == nullptr) throw DataError("shard '" + file.string() + "' lacks tensor '" + name + "'");
    return *t;
}

}  // namespace

std::vector<ShardInfo> write_shards(const std::vector<TrainingSample>& samples, const std::filesystem::path& dir,
                                    int samples_per_shard, const std::string& extra_meta_json) {
    if (samples_per_shard < 1) throw DataError("samples per shard must be positive");
    std::filesystem::create_directories(dir);
    std::vector<ShardInfo> shards;
    for (std::size_t begin = 0; begin < samples.size(); begin += static_cast<std::size_t>(samples_per_shard)) {
        const std::size_t end = std::min(samples.size(), begin + static_cast<std::size_t>(samples_per_shard));
        Archive a;
        json meta = json::array();
        for (std::size_t i = begin; i < end; ++i) {
            const TrainingSample& s = samples[i];
            validate(s);
            const std::string k = std::to_string(i - begin);
            meta.push_back({{"scale", s.scale},
                            {"source", s.origin.source},
                            {"y", s.origin.y},
                            {"x", s.origin.x},
                            {"rotated", s.origin.rotated}});
            a.tensors.push_back({k + "/d_lr", s.d_lr.tensor()});
            a.tensors.push_back({k + "/d_hr", s.d_hr.tensor()});
            a.tensors.push_back({k + "/rgb", s.rgb.tensor()});
            a.tensors.push_back({k + "/s_gt", s.s_gt.tensor()});
        }
        a.meta_json = json{{"samples", meta}}.dump();
        const std::string name = shard_name(shards.size());
        write_archive(dir / name, a);
        shards.push_back({name, static_cast<int>(end - begin), crc32_of_file(dir / name)});
    }

    json manifest;
    try {
        manifest["meta"] = json::parse(extra_meta_json);
    } catch (const json::exception& e) {
        throw DataError(std::string("shard metadata is not valid JSON: ") + e.what());
    }
    manifest["sample_count"] = samples.size();
    manifest["shards"] = json::array();
    for (const auto& s : shards) manifest["shards"].push_back({{"file", s.file}, {"samples", s.samples}, {"crc32", s.crc32}});
    const auto tmp = dir / "manifest.json.tmp";
    {
        std::ofstream out(tmp);
        out << manifest.dump(2) << '\n';
        if (!out) throw DataError("cannot write '" + tmp.string() + "'");
    }
    std::filesystem::rename(tmp, dir / "manifest.json");
    return shards;
}

std::vector<TrainingSample> read_shards(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    std::ifstream in(manifest_path);
    if (!in) throw DataError("no shard manifest at '" + manifest_path.string() + "'");
    json manifest;
    try {
        manifest = json::parse(in);
    } catch (const json::exception& e) {
        throw DataError("unreadable manifest '" + manifest_path.string() + "': " + e.what());
    }

    std::vector<TrainingSample> out;
    for (const auto& entry : manifest.at("shards")) {
        const auto file = dir / entry.at("file").get<std::string>();
        if (crc32_of_file(file) != entry.at("crc32").get<std::uint32_t>()) {
            throw DataError("shard '" + file.string() + "' does not match its manifest checksum");
        }
        const Archive a = read_archive(file);
        const json meta = json::parse(a.meta_json).at("samples");
        for (std::size_t i = 0; i < meta.size(); ++i) {
            const std::string k = std::to_string(i);
            const json& m = meta[i];
            TrainingSample s{DepthMap(require(a, k + "/d_lr", file)),
                             DepthMap(require(a, k + "/d_hr", file)),
                             RgbImage(require(a, k + "/rgb", file)),
                             StructureMap(require(a, k + "/s_gt", file)),
                             m.at("scale").get<int>(),
                             {m.at("source").get<std::string>(), m.at("y").get<int>(), m.at("x").get<int>(),
                              m.at("rotated").get<bool>()}};
            validate(s);
            out.push_back(std::move(s));
        }
    }
    if (out.size() != manifest.at("sample_count").get<std::size_t>()) {
        throw DataError("manifest '" + manifest_path.string() + "' sample count disagrees with its shards");
    }
    return out;
}

}  // namespace ctdsr
