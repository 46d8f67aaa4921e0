// Copyright (c) 2026 The ctdsr Authors
// SPDX-License-Identifier: Apache-2.0
//
// Full-image evaluation: each HR scene is cropped to a multiple of the scale,
// bicubic-degraded, recovered from depth alone and scored in native units.

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ctdsr/data_pipeline.hpp"
#include "ctdsr/networks.hpp"

namespace ctdsr {

struct EvalRow {
    std::string scene;
    double mad = 0;
    double rmse = 0;
    double bicubic_mad = 0;
    double bicubic_rmse = 0;
};

struct EvalReport {
    int scale = 0;
    double unit_scale = 1;
    std::vector<EvalRow> rows;
    EvalRow mean;  // scene = "mean"
};

// Any LR -> HR depth predictor.
using DepthModel = std::function<DepthMap(const DepthMap& d_lr)>;

EvalReport evaluate(const std::vector<RgbdPair>& scenes, const DepthModel& model, int scale, double unit_scale);

// `dsr` may be null, in which case only the bicubic columns are meaningful
// and the model columns repeat them.
EvalReport evaluate(const std::vector<RgbdPair>& scenes, const NetworkParams<float>* dsr, int scale,
                    double unit_scale);

std::string to_text_table(const EvalReport& report);
std::string to_json(const EvalReport& report);
std::string to_csv(const EvalReport& report);

}  // namespace ctdsr
