// Copyright (c) 2026 The ctdsr Authors
// SPDX-License-Identifier: Apache-2.0

#include "ctdsr/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ctdsr/ops.hpp"
#include "ctdsr/random.hpp"
#include "ctdsr/structure.hpp"

namespace ctdsr {

std::vector<std::string> validation_errors(const TrainConfig& c) {
    std::vector<std::string> errors;
    try {
        validate(c.arch);
    } catch (const ConfigError& e) {
        errors.emplace_back(e.what());
    }
    try {
        validate(c.weights);
    } catch (const std::invalid_argument& e) {
        errors.emplace_back(e.what());
    }
    if (c.batch_size < 1) errors.emplace_back("batch_size must be >= 1");
    if (c.step1_epochs < 0) errors.emplace_back("step1_epochs must be >= 0");
    if (c.step1_epochs >= c.max_epochs) errors.emplace_back("step1_epochs must be smaller than max_epochs");
    if (!(c.initial_lr > 0) || !std::isfinite(c.initial_lr)) errors.emplace_back("initial_lr must be > 0");
    if (!(c.lr_decay_factor > 0) || c.lr_decay_factor > 1) errors.emplace_back("lr_decay_factor must be in (0, 1]");
    if (c.lr_decay_period < 1) errors.emplace_back("lr_decay_period must be >= 1");
    const auto& o = c.optimizer;
    if (!(o.beta1 >= 0 && o.beta1 < 1)) errors.emplace_back("beta1 must be in [0, 1)");
    if (!(o.beta2 >= 0 && o.beta2 < 1)) errors.emplace_back("beta2 must be in [0, 1)");
    if (!(o.epsilon > 0)) errors.emplace_back("epsilon must be > 0");
    if (c.pool_size < 1) errors.emplace_back("pool_size must be >= 1");
    return errors;
}

void validate(const TrainConfig& config) {
    const auto errors = validation_errors(config);
    if (errors.empty()) return;
    std::string msg = "invalid training configuration:";
    for (const auto& e : errors) msg += "\n  - " + e;
    throw ConfigError(msg);
}

void optimizer_step(ParamStore<float>& params, AdamState& state, double lr, const OptimizerConfig& opt) {
    if (state.slots.empty()) state.slots.resize(params.size());
    if (state.slots.size() != params.size()) {
        throw TrainingAborted("optimizer state holds " + std::to_string(state.slots.size()) + " slots for " +
                              std::to_string(params.size()) + " parameters");
    }
    for (const auto& p : params) {
        for (float g : p->grad.values()) {
            if (!std::isfinite(g)) throw TrainingAborted("non-finite gradient in parameter '" + p->name + "'");
        }
    }
    std::size_t i = 0;
    for (auto& p : params) {
        AdamSlot& slot = state.slots[i++];
        if (p->grad.empty()) continue;
        if (slot.m.empty()) {
            slot.m = Tensor<float>(p->value.shape());
            slot.v = Tensor<float>(p->value.shape());
        }
        ++slot.step;
        const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(slot.step));
        const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(slot.step));
        for (std::size_t k = 0; k < p->value.size(); ++k) {
            const double g = p->grad[k];
            const double m = opt.beta1 * slot.m[k] + (1.0 - opt.beta1) * g;
            const double v = opt.beta2 * slot.v[k] + (1.0 - opt.beta2) * g * g;
            slot.m[k] = static_cast<float>(m);
            slot.v[k] = static_cast<float>(v);
            p->value[k] = static_cast<float>(p->value[k] - lr * (m / c1) / (std::sqrt(v / c2) + opt.epsilon));
        }
    }
}

double lr_at_epoch(int epoch, const TrainConfig& config) {
    if (epoch < 1) throw std::invalid_argument("epochs are numbered from 1");
    return config.initial_lr * std::pow(config.lr_decay_factor, (epoch - 1) / config.lr_decay_period);
}

TrainState init_state(const TrainConfig& config) {
    validate(config);
    TrainState s;
    s.dsr = init_dsrnet<float>(config.arch, mix_seed(config.seed, 1));
    s.de = init_denet<float>(config.arch, mix_seed(config.seed, 2));
    return s;
}

EpochPlan plan_epoch(std::uint64_t seed, int epoch, std::size_t n, bool augment) {
    Rng rng(mix_seed(mix_seed(seed, 0x0dd), static_cast<std::uint64_t>(epoch)));
    EpochPlan plan;
    plan.order.resize(n);
    std::iota(plan.order.begin(), plan.order.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(i) - 1));
        std::swap(plan.order[i - 1], plan.order[j]);
    }
    plan.rotate.assign(n, false);
    if (augment) {
        for (std::size_t i = 0; i < n; ++i) plan.rotate[i] = rng.uniform() < 0.5;
    }
    return plan;
}

namespace {

using Clock = std::chrono::steady_clock;

double mean_abs(const Tensor<float>& a, const Tensor<float>& b) {
    double sum = 0;
    for (std::size_t i = 0; i < a.size(); ++i) sum += std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
    return sum / static_cast<double>(a.size());
}

class Tally {
public:
    void add(const std::string& name, double v) {
        for (auto& [k, s] : sums_) {
            if (k == name) {
                s += v;
                return;
            }
        }
        sums_.emplace_back(name, v);
    }
    [[nodiscard]] std::vector<std::pair<std::string, double>> means(std::size_t n) const {
        auto out = sums_;
        for (auto& kv : out) kv.second /= static_cast<double>(std::max<std::size_t>(n, 1));
        return out;
    }

private:
    std::vector<std::pair<std::string, double>> sums_;
};

std::string describe(const std::vector<std::pair<std::string, double>>& parts) {
    std::ostringstream os;
    for (std::size_t i = 0; i < parts.size(); ++i) os << (i ? ", " : "") << parts[i].first << '=' << parts[i].second;
    return os.str();
}

void check_finite(int epoch, std::size_t batch, const std::vector<std::pair<std::string, double>>& parts) {
    for (const auto& kv : parts) {
        if (!std::isfinite(kv.second)) {
            throw TrainingAborted("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                  std::to_string(batch + 1) + " (" + describe(parts) + ")");
        }
    }
}

// Sample i of the plan, rotated when the plan says so.
class SampleView {
public:
    SampleView(const std::vector<TrainingSample>& data, const EpochPlan& plan, std::size_t k)
        : index_(plan.order[k]) {
        if (plan.rotate[index_]) {
            rotated_ = augment_rotate180(data[index_]);
            sample_ = &*rotated_;
        } else {
            sample_ = &data[index_];
        }
    }
    const TrainingSample& operator*() const { return *sample_; }
    const TrainingSample* operator->() const { return sample_; }
    [[nodiscard]] std::size_t index() const { return index_; }

private:
    std::size_t index_;
    std::optional<TrainingSample> rotated_;
    const TrainingSample* sample_ = nullptr;
};

void require_data(const std::vector<TrainingSample>& data, const TrainConfig& config) {
    if (data.empty()) throw DataError("no training samples");
    for (const auto& s : data) {
        if (s.scale != config.arch.scale) {
            throw ConfigError("training sample '" + s.origin.source + "' has scale x" + std::to_string(s.scale) +
                              ", configuration expects x" + std::to_string(config.arch.scale));
        }
    }
}

Var<float> probe_loss(Tape<float>& tape, const FeatureStack<float>& fs, NetworkParams<float>& params, Var<float> hr) {
    Var<float> sum;
    for (std::size_t n = 0; n < fs.features.size(); ++n) {
        Var<float> detached = tape.constant(fs.features[n].value());
        Var<float> term = ops::l1_mean(side_output_head(detached, params, static_cast<int>(n + 1), true), hr);
        sum = sum.valid() ? ops::add(sum, term) : term;
    }
    return ops::scale(sum, 1.0f / static_cast<float>(fs.features.size()));
}

struct ConstStack {
    std::vector<Var<float>> features;
    std::vector<Var<float>> side_outputs;
    Var<float> final_output;
};

ConstStack bind(Tape<float>& tape, const FeatureStackValues& v) {
    ConstStack out;
    for (const auto& f : v.features) out.features.push_back(tape.constant(f));
    for (const auto& d : v.side_outputs) out.side_outputs.push_back(tape.constant(d));
    out.final_output = tape.constant(v.final_output.tensor());
    return out;
}

ConstStack view(const FeatureStack<float>& fs) { return {fs.features, fs.side_outputs, fs.final_output}; }

void finish_epoch(TrainState& state, EpochRecord& rec, const Tally& tally, std::size_t samples, double dsr_sum,
                  double de_sum, Clock::time_point start, const TrainHooks& hooks) {
    state.epoch = rec.epoch;
    state.err_dsr_sum = dsr_sum;
    state.err_de_sum = de_sum;
    state.err_count = static_cast<std::int64_t>(samples);
    rec.losses = tally.means(samples);
    rec.e_dsr = state.e_dsr();
    rec.e_de = state.e_de();
    rec.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    if (hooks.on_epoch_end) hooks.on_epoch_end(rec, state);
}

}  // namespace

void run_step1(TrainState& state, const TrainConfig& config, const std::vector<TrainingSample>& data,
               const TrainHooks& hooks) {
    validate(config);
    require_data(data, config);
    const std::size_t batch = static_cast<std::size_t>(config.batch_size);
    for (int epoch = state.epoch + 1; epoch <= config.step1_epochs; ++epoch) {
        const auto start = Clock::now();
        const double lr = lr_at_epoch(epoch, config);
        const EpochPlan plan = plan_epoch(config.seed, epoch, data.size(), config.augment);
        EpochRecord rec{epoch, 1, lr, {}, 0, 0, std::nullopt, 0, {}};
        Tally tally;
        double dsr_sum = 0;
        double de_sum = 0;
        for (std::size_t b0 = 0, bi = 0; b0 < data.size(); b0 += batch, ++bi) {
            const std::size_t b1 = std::min(data.size(), b0 + batch);
            const float inv = 1.0f / static_cast<float>(b1 - b0);
            state.dsr.store.zero_grad();
            state.de.store.zero_grad();
            double batch_total = 0;
            for (std::size_t k = b0; k < b1; ++k) {
                SampleView s(data, plan, k);
                std::vector<std::pair<std::string, double>> parts;
                {
                    Tape<float> tape;
                    Var<float> hr = tape.constant(s->d_hr.tensor());
                    auto fs = dsrnet_forward(tape.constant(s->d_lr.tensor()), state.dsr, true);
                    Var<float> loss = dsr_loss(fs.final_output, hr);
                    parts.emplace_back("dsr", loss.value().item());
                    if (config.side_probe) {
                        Var<float> probe = probe_loss(tape, fs, state.dsr, hr);
                        parts.emplace_back("dsr_probe", probe.value().item());
                        loss = ops::add(loss, probe);
                    }
                    dsr_sum += mean_abs(fs.final_output.value(), s->d_hr.tensor());
                    check_finite(epoch, bi, parts);
                    tape.backward(ops::scale(loss, inv));
                }
                {
                    Tape<float> tape;
                    Var<float> hr = tape.constant(s->d_hr.tensor());
                    auto fs = denet_forward(tape.constant(s->rgb.tensor()), state.de, true);
                    Var<float> loss = de_loss(fs.final_output, hr, config.weights.lambda);
                    parts.emplace_back("de", loss.value().item());
                    if (config.side_probe) {
                        Var<float> probe = probe_loss(tape, fs, state.de, hr);
                        parts.emplace_back("de_probe", probe.value().item());
                        loss = ops::add(loss, probe);
                    }
                    de_sum += mean_abs(fs.final_output.value(), s->d_hr.tensor());
                    check_finite(epoch, bi, parts);
                    tape.backward(ops::scale(loss, inv));
                }
                for (const auto& [k2, v] : parts) tally.add(k2, v);
                batch_total += parts[0].second;
            }
            rec.batch_losses.push_back(batch_total / static_cast<double>(b1 - b0));
            optimizer_step(state.dsr.store, state.opt_dsr, lr, config.optimizer);
            optimizer_step(state.de.store, state.opt_de, lr, config.optimizer);
        }
        finish_epoch(state, rec, tally, data.size(), dsr_sum, de_sum, start, hooks);
    }
}

void run_step2(TrainState& state, const TrainConfig& config, const std::vector<TrainingSample>& data,
               const TrainHooks& hooks) {
    validate(config);
    require_data(data, config);
    if (state.sp.store.size() == 0) state.sp = init_spnet<float>(config.arch, mix_seed(config.seed, 3));
    if (state.uncertainty.store.size() == 0) state.uncertainty = init_uncertainty<float>(config.arch);

    const LossWeights& w = config.weights;
    const std::size_t batch = static_cast<std::size_t>(config.batch_size);
    TeacherCache* cache = config.augment ? nullptr : hooks.teacher_cache;

    for (int epoch = std::max(state.epoch, config.step1_epochs) + 1; epoch <= config.max_epochs; ++epoch) {
        const auto start = Clock::now();
        const double lr = lr_at_epoch(epoch, config);
        const double e_dsr = state.e_dsr();
        const double e_de = state.e_de();
        RoleAssignment roles;
        if (config.student.has_value()) {
            roles = {*config.student == Role::dsr ? Role::de : Role::dsr, *config.student, e_dsr, e_de};
        } else {
            roles = select_roles(e_dsr, e_de);
        }
        state.role_history.push_back({epoch, roles.teacher, e_dsr, e_de});

        const bool dsr_student = roles.student == Role::dsr;
        NetworkParams<float>& student = dsr_student ? state.dsr : state.de;
        AdamState& student_opt = dsr_student ? state.opt_dsr : state.opt_de;
        const NetworkParams<float>& teacher = dsr_student ? state.de : state.dsr;
        if (cache != nullptr) {
            const std::uint64_t sum = teacher.checksum();
            if (cache->role != roles.teacher || cache->checksum != sum || cache->entries.size() != data.size()) {
                *cache = TeacherCache{roles.teacher, sum, std::vector<std::optional<FeatureStackValues>>(data.size())};
            }
        }

        const EpochPlan plan = plan_epoch(config.seed, epoch, data.size(), config.augment);
        EpochRecord rec{epoch, 2, lr, {}, 0, 0, roles.teacher, 0, {}};
        Tally tally;
        double dsr_sum = 0;
        double de_sum = 0;
        for (std::size_t b0 = 0, bi = 0; b0 < data.size(); b0 += batch, ++bi) {
            const std::size_t b1 = std::min(data.size(), b0 + batch);
            const float inv = 1.0f / static_cast<float>(b1 - b0);
            student.store.zero_grad();
            state.sp.store.zero_grad();
            state.uncertainty.store.zero_grad();
            double batch_total = 0;
            for (std::size_t k = b0; k < b1; ++k) {
                SampleView s(data, plan, k);
                FeatureStackValues fresh;
                const FeatureStackValues* tv = nullptr;
                if (cache != nullptr && cache->entries[s.index()].has_value()) {
                    tv = &*cache->entries[s.index()];
                } else {
                    fresh = dsr_student ? denet_forward(s->rgb, teacher) : dsrnet_forward(s->d_lr, teacher);
                    if (cache != nullptr) {
                        cache->entries[s.index()] = std::move(fresh);
                        tv = &*cache->entries[s.index()];
                    } else {
                        tv = &fresh;
                    }
                }

                Tape<float> tape;
                Var<float> hr = tape.constant(s->d_hr.tensor());
                const FeatureStack<float> fs = dsr_student
                                                   ? dsrnet_forward(tape.constant(s->d_lr.tensor()), student, true)
                                                   : denet_forward(tape.constant(s->rgb.tensor()), student, true);
                const ConstStack st = view(fs);
                const ConstStack te = bind(tape, *tv);
                const ConstStack& sr = dsr_student ? st : te;
                const ConstStack& de = dsr_student ? te : st;

                std::vector<std::pair<std::string, double>> parts;
                Var<float> task = dsr_student ? dsr_loss(st.final_output, hr)
                                              : de_loss(st.final_output, hr, w.lambda);
                parts.emplace_back(dsr_student ? "dsr" : "de", task.value().item());

                Var<float> distill;
                if (w.rho2 != 0.0) {
                    Var<float> l_o = output_space_loss(sr.side_outputs, de.side_outputs);
                    parts.emplace_back("l_o", l_o.value().item());
                    Var<float> l_a;
                    if (w.gamma != 0.0) {
                        l_a = affinity_space_loss(sr.features, de.features, config.pool_size);
                        parts.emplace_back("l_a", l_a.value().item());
                    }
                    distill = distill_loss(l_o, l_a, w.gamma);
                    parts.emplace_back("distill", distill.value().item());
                }

                Var<float> struc;
                if (w.rho1 != 0.0) {
                    Var<float> u_sr = uncertainty_map(sr.final_output, hr, state.uncertainty, Branch::sr, true);
                    Var<float> u_de = uncertainty_map(de.final_output, hr, state.uncertainty, Branch::de, true);
                    Var<float> fused = attention_fuse(sr.features.back(), de.features.back(), u_sr, u_de);
                    Var<float> s_pred = spnet_forward(fused, state.sp, true);
                    struc = structure_loss(s_pred, tape.constant(s->s_gt.tensor()));
                    parts.emplace_back("struc", struc.value().item());
                }

                Var<float> total = total_student_loss(task, struc, distill, w);
                parts.emplace_back("total", total.value().item());
                check_finite(epoch, bi, parts);

                const double e_student = mean_abs(st.final_output.value(), s->d_hr.tensor());
                const double e_teacher = mean_abs(tv->final_output.tensor(), s->d_hr.tensor());
                dsr_sum += dsr_student ? e_student : e_teacher;
                de_sum += dsr_student ? e_teacher : e_student;

                tape.backward(ops::scale(total, inv));
                for (const auto& [name, v] : parts) tally.add(name, v);
                batch_total += parts.back().second;
            }
            rec.batch_losses.push_back(batch_total / static_cast<double>(b1 - b0));
            optimizer_step(student.store, student_opt, lr, config.optimizer);
            optimizer_step(state.sp.store, state.opt_sp, lr, config.optimizer);
            optimizer_step(state.uncertainty.store, state.opt_uncertainty, lr, config.optimizer);
        }
        finish_epoch(state, rec, tally, data.size(), dsr_sum, de_sum, start, hooks);
    }
}

void train(TrainState& state, const TrainConfig& config, const std::vector<TrainingSample>& data,
           const TrainHooks& hooks) {
    run_step1(state, config, data, hooks);
    run_step2(state, config, data, hooks);
}

DepthMap infer(const DepthMap& d_lr, const NetworkParams<float>& dsr_params, std::optional<int> expected_scale) {
    if (dsr_params.kind != NetworkKind::dsr) {
        throw ConfigError(std::string("inference needs DSRNet parameters, got ") + to_string(dsr_params.kind));
    }
    if (expected_scale.has_value() && *expected_scale != dsr_params.arch.scale) {
        throw ConfigError("scale mismatch: parameters are x" + std::to_string(dsr_params.arch.scale) +
                          ", expected x" + std::to_string(*expected_scale));
    }
    return dsrnet_forward(d_lr, dsr_params).final_output;
}

}  // namespace ctdsr
