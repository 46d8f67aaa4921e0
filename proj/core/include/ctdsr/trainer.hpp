// Copyright (c) 2026 The ctdsr Authors
// SPDX-License-Identifier: Apache-2.0
//
// Two-step training:
//
//   Step 1  epochs 1..step1_epochs: DSRNet and DENet are trained independently
//           on their own task losses.
//   Step 2  epochs step1_epochs+1..max_epochs: every epoch the network with the
//           lower mean error over the previous epoch becomes the teacher and is
//           frozen; the other is trained on task + structure + distillation.
//           SPNet and the two uncertainty convs are trained every epoch.
//
// The epoch counter is global, so the learning-rate schedule runs straight
// through the Step-1/Step-2 boundary.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctdsr/data_pipeline.hpp"
#include "ctdsr/distillation.hpp"
#include "ctdsr/losses.hpp"
#include "ctdsr/networks.hpp"

namespace ctdsr {

struct OptimizerConfig {
    double beta1 = 0.9;  // also the "momentum" of the SGD-style description
    double beta2 = 0.99;
    double epsilon = 1e-8;

    friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

struct TrainConfig {
    ArchConfig arch;
    int batch_size = 8;
    int step1_epochs = 100;
    int max_epochs = 200;
    double initial_lr = 1e-3;
    double lr_decay_factor = 0.1;
    int lr_decay_period = 50;
    LossWeights weights;
    OptimizerConfig optimizer;
    std::uint64_t seed = 1;
    int pool_size = 32;
    bool augment = true;          // random 180-degree rotation per sample and epoch
    bool side_probe = true;       // Step 1 fits the side heads on detached features
    std::optional<Role> student;  // forces the Step-2 student every epoch

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// Every violated constraint, one message each. Empty when valid.
std::vector<std::string> validation_errors(const TrainConfig& config);
// Throws ConfigError joining validation_errors() when non-empty.
void validate(const TrainConfig& config);

// Per-tensor Adam moments; a parameter's step count only advances when it
// received a gradient.
struct AdamSlot {
    Tensor<float> m;
    Tensor<float> v;
    std::int64_t step = 0;

    friend bool operator==(const AdamSlot&, const AdamSlot&) = default;
};
struct AdamState {
    std::vector<AdamSlot> slots;  // parallel to the ParamStore order

    friend bool operator==(const AdamState&, const AdamState&) = default;
};

class TrainingAborted : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// One Adam update with bias correction over every parameter holding a
// gradient; parameters without a gradient are skipped. Throws
// TrainingAborted naming the first parameter with a non-finite gradient,
// before anything is modified.
void optimizer_step(ParamStore<float>& params, AdamState& state, double lr, const OptimizerConfig& opt);

// initial_lr * decay_factor ^ floor((epoch - 1) / decay_period), epoch >= 1.
double lr_at_epoch(int epoch, const TrainConfig& config);

struct RoleRecord {
    int epoch = 0;
    Role teacher = Role::dsr;
    double e_dsr = 0;
    double e_de = 0;

    friend bool operator==(const RoleRecord&, const RoleRecord&) = default;
};

struct TrainState {
    NetworkParams<float> dsr;
    NetworkParams<float> de;
    NetworkParams<float> sp;           // empty until Step 2 starts
    NetworkParams<float> uncertainty;  // empty until Step 2 starts
    AdamState opt_dsr;
    AdamState opt_de;
    AdamState opt_sp;
    AdamState opt_uncertainty;
    int epoch = 0;  // last completed epoch
    // Error sums of the last completed epoch; e = sum / count.
    double err_dsr_sum = 0;
    double err_de_sum = 0;
    std::int64_t err_count = 0;
    std::vector<RoleRecord> role_history;

    [[nodiscard]] double e_dsr() const { return err_count > 0 ? err_dsr_sum / static_cast<double>(err_count) : 0; }
    [[nodiscard]] double e_de() const { return err_count > 0 ? err_de_sum / static_cast<double>(err_count) : 0; }
};

// Randomly initialised DSRNet and DENet, seeded from config.seed.
TrainState init_state(const TrainConfig& config);

struct EpochRecord {
    int epoch = 0;
    int step = 1;
    double lr = 0;
    // Batch means of each loss component ("dsr", "de", "struc", "l_o",
    // "l_a", "distill", "total"); only those computed appear.
    std::vector<std::pair<std::string, double>> losses;
    double e_dsr = 0;
    double e_de = 0;
    std::optional<Role> teacher;
    double seconds = 0;
    std::vector<double> batch_losses;  // student objective per batch
};

// Frozen-teacher outputs keyed by sample index; valid while the teacher's
// role and parameter checksum stay the same. Only used without augmentation.
struct TeacherCache {
    Role role = Role::dsr;
    std::uint64_t checksum = 0;
    std::vector<std::optional<FeatureStackValues>> entries;
};

struct TrainHooks {
    std::function<void(const EpochRecord&, const TrainState&)> on_epoch_end;
    TeacherCache* teacher_cache = nullptr;
};

// Deterministic sample order and rotation flags for one epoch.
struct EpochPlan {
    std::vector<std::size_t> order;
    std::vector<bool> rotate;
};
EpochPlan plan_epoch(std::uint64_t seed, int epoch, std::size_t sample_count, bool augment);

// Runs Step-1 epochs state.epoch+1 .. step1_epochs.
void run_step1(TrainState& state, const TrainConfig& config, const std::vector<TrainingSample>& data,
               const TrainHooks& hooks = {});
// Runs Step-2 epochs max(state.epoch, step1_epochs)+1 .. max_epochs.
void run_step2(TrainState& state, const TrainConfig& config, const std::vector<TrainingSample>& data,
               const TrainHooks& hooks = {});
// Step 1 then Step 2.
void train(TrainState& state, const TrainConfig& config, const std::vector<TrainingSample>& data,
           const TrainHooks& hooks = {});

// Checkpoints: archive with header {N, C, scale, epoch, role history, ...}
// and tensors "dsr/...", "de/...", "sp/...", "unc/..." plus Adam moments
// under "adam/<set>/{m,v}/...". Empty parameter sets are omitted.
void save_checkpoint(const TrainState& state, const std::filesystem::path& path);

// Throws ConfigError listing every missing, unexpected or mis-shaped tensor
// when the checkpoint does not match `arch`.
TrainState load_checkpoint(const std::filesystem::path& path, const ArchConfig& arch);
// Architecture recorded in a checkpoint header.
ArchConfig checkpoint_arch(const std::filesystem::path& path);
// Reads only the DSRNet parameters; the other sets may be absent.
NetworkParams<float> load_dsr_params(const std::filesystem::path& path);

// HR depth from LR depth with DSRNet alone. Throws ConfigError when the
// parameters are not DSRNet's or their scale differs from expected_scale.
DepthMap infer(const DepthMap& d_lr, const NetworkParams<float>& dsr_params, std::optional<int> expected_scale = {});

}  // namespace ctdsr
