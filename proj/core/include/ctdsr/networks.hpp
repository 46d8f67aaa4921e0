// Copyright (c) 2026 The ctdsr Authors
// SPDX-License-Identifier: Apache-2.0
//
// The three parametric models:
//
//   DSRNet  LR depth -> shallow block -> N back-projection blocks (HR features
//           F^1..F^N) -> reconstruction conv -> HR depth
//   DENet   HR RGB -> shallow block -> N residual stages at HR -> HR depth
//   SPNet   fused 2C-channel feature -> 5 x (conv + ReLU) -> conv -> structure
//
// Every DSRNet/DENet stage also feeds a side-output head (conv3x3 C -> C/2,
// ReLU, conv1x1 C/2 -> 1) producing an HR depth map.

#pragma once

#include <string>
#include <vector>

#include "ctdsr/autograd.hpp"
#include "ctdsr/ops.hpp"
#include "ctdsr/params.hpp"
#include "ctdsr/raster.hpp"

namespace ctdsr {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct ArchConfig {
    int scale = 4;
    int stages = 5;          // N
    int channels = 32;       // C
    int residual_units = 4;  // pre-activation units per DENet stage
    int sp_width = 0;        // SPNet hidden width; 0 means C

    [[nodiscard]] int structure_width() const { return sp_width > 0 ? sp_width : channels; }
    friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

// Throws ConfigError on an unsupported scale or non-positive sizes.
void validate(const ArchConfig& arch);

enum class NetworkKind { dsr, de, sp, uncertainty };
const char* to_string(NetworkKind kind);

template <class T>
struct NetworkParams {
    NetworkKind kind = NetworkKind::dsr;
    ArchConfig arch;
    ParamStore<T> store;

    [[nodiscard]] std::uint64_t checksum() const { return store.checksum(); }
};

template <class T>
struct FeatureStack {
    std::vector<Var<T>> features;      // F^1..F^N, each (C, H, W)
    std::vector<Var<T>> side_outputs;  // D^1..D^N, each (1, H, W)
    Var<T> final_output;               // (1, H, W)
};

// Geometry of one LR<->HR resampling step; x16 cascades two x4 steps.
std::vector<ops::ConvGeometry> projection_steps(int scale);

template <class T>
NetworkParams<T> init_dsrnet(const ArchConfig& arch, std::uint64_t seed);
template <class T>
NetworkParams<T> init_denet(const ArchConfig& arch, std::uint64_t seed);
template <class T>
NetworkParams<T> init_spnet(const ArchConfig& arch, std::uint64_t seed);
// Two 1x1 convs ("sr.*", "de.*") initialised to weight 1, bias 0.
template <class T>
NetworkParams<T> init_uncertainty(const ArchConfig& arch);

// `trainable` = false binds parameters as constants (no gradient path).
template <class T>
FeatureStack<T> dsrnet_forward(Var<T> d_lr, NetworkParams<T>& params, bool trainable);
template <class T>
FeatureStack<T> denet_forward(Var<T> rgb, NetworkParams<T>& params, bool trainable);
template <class T>
Var<T> side_output_head(Var<T> feature, NetworkParams<T>& params, int stage, bool trainable);
template <class T>
Var<T> spnet_forward(Var<T> fused, NetworkParams<T>& params, bool trainable);

// Number of convolution layers (including transposed ones) in SPNet.
int spnet_conv_layer_count(const NetworkParams<float>& params);

// Tape-free conveniences returning plain rasters.
struct FeatureStackValues {
    std::vector<Tensor<float>> features;
    std::vector<Tensor<float>> side_outputs;
    DepthMap final_output;
};
FeatureStackValues dsrnet_forward(const DepthMap& d_lr, const NetworkParams<float>& params);
FeatureStackValues denet_forward(const RgbImage& rgb, const NetworkParams<float>& params);

}  // namespace ctdsr
