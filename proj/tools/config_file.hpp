// Copyright (c) 2026 The ctdsr Authors
// SPDX-License-Identifier: Apache-2.0
//
// INI training configuration:
//
//   [model]      scale stages channels residual_units sp_width
//   [train]      batch_size step1_epochs max_epochs initial_lr lr_decay_factor
//                lr_decay_period seed pool_size augment side_probe student
//   [loss]       gamma lambda rho1 rho2
//   [optimizer]  momentum beta1 beta2 epsilon
//   [paths]      data output
//
// "momentum" is another name for beta1; giving both with different values is
// an error. student = auto | dsr | de.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ctdsr/trainer.hpp"

namespace ctdsr::cli {

struct RunConfig {
    TrainConfig train;
    std::filesystem::path data;    // prepared shard directory
    std::filesystem::path output;  // run directory
};

// Applies "section.key" = value settings in order, appending one message per
// unknown key or unparsable value to `errors`.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value,
                   std::vector<std::string>& errors);

// Reads an INI file on top of the defaults in `config`.
void apply_file(RunConfig& config, const std::filesystem::path& path, std::vector<std::string>& errors);

// Canonical INI text; hashing it gives the config hash.
std::string to_ini(const RunConfig& config);
std::string config_hash(const RunConfig& config);

}  // namespace ctdsr::cli
