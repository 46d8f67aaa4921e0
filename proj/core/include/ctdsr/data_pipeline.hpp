// Copyright (c) 2026 The ctdsr Authors
// SPDX-License-Identifier: Apache-2.0
//
// RGB-D ingestion, degradation, structure ground truth, patch sampling and
// procedural toy scenes.

#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctdsr/raster.hpp"

namespace ctdsr {

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr int kSupportedScales[] = {2, 4, 8, 16};
bool is_supported_scale(int scale) noexcept;

struct RgbdPair {
    std::string name;  // file stem shared by the colour and depth files
    RgbImage rgb;
    DepthMap depth;
};

struct PatchOrigin {
    std::string source;
    int y = 0;
    int x = 0;
    bool rotated = false;
};

struct TrainingSample {
    DepthMap d_lr;
    DepthMap d_hr;
    RgbImage rgb;
    StructureMap s_gt;
    int scale = 0;
    PatchOrigin origin;
};

// Throws DataError if the dimensional invariants of a sample do not hold.
void validate(const TrainingSample& sample);

enum class DepthFormat { png16, pfm };

struct LoadedDataset {
    std::vector<RgbdPair> pairs;
    float depth_max = 0;  // raw value mapped to 1.0; de-normalisation factor
};

// Pairs "<stem>_color.png" with "<stem>_depth.{png,pfm}" in one directory.
// Depth is divided by the maximum over the whole directory; zero-valued
// (invalid) pixels are replaced by their nearest valid neighbour.
LoadedDataset load_rgbd_pairs(const std::filesystem::path& dir, DepthFormat format);

// Replaces non-positive or non-finite pixels by the nearest (4-connected
// geodesic) valid pixel. Leaves the map untouched if no pixel is valid.
void fill_invalid_nearest(DepthMap& depth);

// Separable antialiased bicubic resampling (a = -0.5; kernel support is
// widened by the downscale factor). Matches Pillow's BICUBIC filter.
Tensor<float> resample_bicubic(const Tensor<float>& src, int out_height, int out_width);

DepthMap bicubic_downsample(const DepthMap& d_hr, int scale);
DepthMap bicubic_upsample(const DepthMap& d_lr, int scale);

// 3x3 Laplacian [[0,-1,0],[-1,4,-1],[0,-1,0]] with replicate padding.
StructureMap compute_structure_gt(const DepthMap& d_hr);

// Random square crops (uniform over valid origins), deterministic in seed.
std::vector<TrainingSample> extract_patches(const std::vector<RgbdPair>& pairs, int patch_size, int count,
                                            int scale, std::uint64_t seed);

// Builds one sample from a full HR depth/RGB pair (crop-free).
TrainingSample make_sample(const RgbImage& rgb, const DepthMap& d_hr, int scale, PatchOrigin origin = {});

TrainingSample augment_rotate180(const TrainingSample& sample);

// 3-8 rectangles and discs on distinct depth planes in front of a sloped
// background. Colour is a fixed colour map of depth plus per-object texture;
// some objects are camouflaged with the background colour so their depth
// edges have no colour edge.
struct ToyScene {
    RgbImage rgb;
    DepthMap depth;
    int object_count = 0;
};
ToyScene generate_toy_scene(std::uint64_t seed, int size);

// Toy training set: `count` patch-free scenes, each scene a full sample.
std::vector<TrainingSample> make_toy_samples(std::uint64_t seed, int count, int size, int scale);

}  // namespace ctdsr

namespace ctdsr {

// Sample shards: "<dir>/shard-NNNNN.ctar" archives (see archive.hpp) holding
// d_lr, d_hr, rgb and s_gt per sample with scale and patch origin in the
// metadata, plus "<dir>/manifest.json" listing every shard with its CRC32.
struct ShardInfo {
    std::string file;
    int samples = 0;
    std::uint32_t crc32 = 0;
};

std::vector<ShardInfo> write_shards(const std::vector<TrainingSample>& samples, const std::filesystem::path& dir,
                                    int samples_per_shard = 256, const std::string& extra_meta_json = "{}");

// Verifies shard checksums against the manifest.
std::vector<TrainingSample> read_shards(const std::filesystem::path& dir);

}  // namespace ctdsr
