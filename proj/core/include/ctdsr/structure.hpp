// Copyright (c) 2026 The ctdsr Authors
// SPDX-License-Identifier: Apache-2.0
//
// Uncertainty-weighted fusion of the final DSR/DE features and the structure
// loss that regularises both networks through SPNet.

#pragma once

#include <optional>

#include "ctdsr/autograd.hpp"
#include "ctdsr/networks.hpp"
#include "ctdsr/raster.hpp"

namespace ctdsr {

enum class Branch { sr, de };

// Per-pixel attention gain in (0, 1).
struct UncertaintyMap {
    Tensor<float> values;  // (1, H, W)
};

class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// sigmoid(w * (pred - gt) + b) with the branch's 1x1 conv.
template <class T>
Var<T> uncertainty_map(Var<T> pred, Var<T> gt, NetworkParams<T>& conv_params, Branch branch, bool trainable);

// Needs ground truth; throws ContractError when gt is absent.
UncertaintyMap uncertainty_map(const DepthMap& pred, const std::optional<DepthMap>& gt,
                               const NetworkParams<float>& conv_params, Branch branch);

// [f_sr * (1 + u_sr), f_de * (1 + u_de)] along channels, SR branch first.
template <class T>
Var<T> attention_fuse(Var<T> f_sr, Var<T> f_de, Var<T> u_sr, Var<T> u_de);

// mean |s_pred - s_gt|.
template <class T>
Var<T> structure_loss(Var<T> s_pred, Var<T> s_gt);
double structure_loss(const StructureMap& s_pred, const StructureMap& s_gt);

}  // namespace ctdsr
