// Copyright (c) 2026 The ctdsr Authors
// SPDX-License-Identifier: Apache-2.0

#include "ctdsr/structure.hpp"

#include <string>

#include "ctdsr/ops.hpp"

namespace ctdsr {

template <class T>
Var<T> uncertainty_map(Var<T> pred, Var<T> gt, NetworkParams<T>& conv_params, Branch branch, bool trainable) {
    if (conv_params.kind != NetworkKind::uncertainty) {
        throw ConfigError("uncertainty_map needs uncertainty conv parameters");
    }
    if (pred.shape() != gt.shape() || pred.shape().channels != 1) {
        throw ShapeError("uncertainty_map: prediction " + to_string(pred.shape()) + " vs ground truth " +
                         to_string(gt.shape()));
    }
    const std::string prefix = branch == Branch::sr ? "sr" : "de";
    Tape<T>& tape = *pred.tape;
    Var<T> w = tape.parameter(conv_params.store.at(prefix + ".weight"), trainable);
    Var<T> b = tape.parameter(conv_params.store.at(prefix + ".bias"), trainable);
    return ops::sigmoid(ops::conv2d(ops::sub(pred, gt), w, b, {1, 1, 0}));
}

UncertaintyMap uncertainty_map(const DepthMap& pred, const std::optional<DepthMap>& gt,
                               const NetworkParams<float>& conv_params, Branch branch) {
    if (!gt.has_value()) {
        throw ContractError("uncertainty_map requires ground-truth depth; it is a training-only operation");
    }
    Tape<float> tape;
    // Frozen binding never writes through the parameter reference.
    auto& params = const_cast<NetworkParams<float>&>(conv_params);
    Var<float> u = uncertainty_map(tape.constant(pred.tensor()), tape.constant(gt->tensor()), params, branch, false);
    return UncertaintyMap{u.value()};
}

template <class T>
Var<T> attention_fuse(Var<T> f_sr, Var<T> f_de, Var<T> u_sr, Var<T> u_de) {
    const Shape a = f_sr.shape();
    const Shape b = f_de.shape();
    if (a.height != b.height || a.width != b.width) {
        throw ShapeError("attention_fuse: feature extents differ " + to_string(a) + " vs " + to_string(b));
    }
    return ops::concat(ops::gate(f_sr, u_sr), ops::gate(f_de, u_de));
}

template <class T>
Var<T> structure_loss(Var<T> s_pred, Var<T> s_gt) {
    return ops::l1_mean(s_pred, s_gt);
}

double structure_loss(const StructureMap& s_pred, const StructureMap& s_gt) {
    if (s_pred.height() != s_gt.height() || s_pred.width() != s_gt.width()) {
        throw ShapeError("structure_loss: dimension mismatch " + to_string(s_pred.tensor().shape()) + " vs " +
                         to_string(s_gt.tensor().shape()));
    }
    Tape<double> tape;
    return ops::l1_mean(tape.constant(s_pred.tensor().cast<double>()), tape.constant(s_gt.tensor().cast<double>()))
        .value()
        .item();
}

#define CTDSR_INSTANTIATE_STRUCTURE(T)                                                     \
    template Var<T> uncertainty_map(Var<T>, Var<T>, NetworkParams<T>&, Branch, bool);      \
    template Var<T> attention_fuse(Var<T>, Var<T>, Var<T>, Var<T>);                        \
    template Var<T> structure_loss(Var<T>, Var<T>);

CTDSR_INSTANTIATE_STRUCTURE(float)
CTDSR_INSTANTIATE_STRUCTURE(double)

}  // namespace ctdsr
