// Copyright (c) 2026 The ctdsr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "ctdsr/autograd.hpp"
#include "ctdsr/ops.hpp"
#include "ctdsr/raster.hpp"

namespace ctdsr {

struct LossWeights {
    double gamma = 0.5;   // affinity term inside the distillation loss
    double lambda = 0.2;  // SSIM share of the depth-estimation loss
    double rho1 = 0.1;    // structure loss
    double rho2 = 0.1;    // distillation loss

    friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

// Throws std::invalid_argument unless all weights are >= 0 and lambda <= 1.
void validate(const LossWeights& w);

// L1 (mean reduction) between the super-resolved and ground-truth depth.
template <class T>
Var<T> dsr_loss(Var<T> d_sr, Var<T> d_hr);

// lambda * (1 - SSIM) / 2 + (1 - lambda) * L1.
template <class T>
Var<T> de_loss(Var<T> d_de, Var<T> d_hr, double lambda);

// task + rho1 * structure + rho2 * distill.
template <class T>
Var<T> total_student_loss(Var<T> task_loss, Var<T> l_struc, Var<T> l_distill, const LossWeights& w);

double dsr_loss(const DepthMap& d_sr, const DepthMap& d_hr);
double de_loss(const DepthMap& d_de, const DepthMap& d_hr, double lambda);
double total_student_loss(double task_loss, double l_struc, double l_distill, const LossWeights& w);

// Mean SSIM, 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03, L = 1.
double ssim(const DepthMap& a, const DepthMap& b);

// Metrics in native units: both maps are multiplied by unit_scale first.
double mad_metric(const DepthMap& pred, const DepthMap& gt, double unit_scale);
double rmse_metric(const DepthMap& pred, const DepthMap& gt, double unit_scale);

}  // namespace ctdsr
