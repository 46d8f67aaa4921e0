// Copyright (c) 2026 The ctdsr Authors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable operators over Tape<T>. Every op validates shapes eagerly and
// throws ShapeError on mismatch. Scalars are (1, 1, 1) tensors.

#pragma once

#include "ctdsr/autograd.hpp"

namespace ctdsr::ops {

struct ConvGeometry {
    int kernel = 3;
    int stride = 1;
    int pad = 1;
};

// x: (Cin, H, W); weight: (Cout, Cin, k*k); bias: (Cout, 1, 1).
template <class T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias, ConvGeometry g);

// x: (Cin, h, w); weight: (Cin, Cout, k*k); bias: (Cout, 1, 1).
// Output extent is (h - 1) * stride - 2 * pad + kernel.
template <class T>
Var<T> conv_transpose2d(Var<T> x, Var<T> weight, Var<T> bias, ConvGeometry g);

template <class T>
Var<T> relu(Var<T> x);
template <class T>
Var<T> sigmoid(Var<T> x);

template <class T>
Var<T> add(Var<T> a, Var<T> b);
template <class T>
Var<T> sub(Var<T> a, Var<T> b);
template <class T>
Var<T> mul(Var<T> a, Var<T> b);
template <class T>
Var<T> scale(Var<T> x, T factor);

// f * (1 + u), with the single-channel u broadcast over f's channels.
template <class T>
Var<T> gate(Var<T> f, Var<T> u);

// Channel concatenation [a, b].
template <class T>
Var<T> concat(Var<T> a, Var<T> b);

// Average pooling down to (out_h, out_w); input extents must be multiples.
template <class T>
Var<T> avg_pool_to(Var<T> x, int out_h, int out_w);

// Row-wise softmax of R(x) R(x)^T where R reshapes (C, H, W) to (HW, C).
// Result is (1, HW, HW).
template <class T>
Var<T> affinity(Var<T> x);

// mean |a - b| over all elements; d|r|/dr taken as 0 at r = 0.
template <class T>
Var<T> l1_mean(Var<T> a, Var<T> b);

struct SsimOptions {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 1.0;
};

// Mean SSIM over the valid-window map of two single-channel rasters.
template <class T>
Var<T> ssim(Var<T> a, Var<T> b, const SsimOptions& opt = {});

}  // namespace ctdsr::ops
