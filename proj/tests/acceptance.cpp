// Copyright (c) 2026 The ctdsr Authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits with the number of failed criteria.

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "cli.hpp"
#include "ctdsr/archive.hpp"
#include "ctdsr/distillation.hpp"
#include "ctdsr/evaluate.hpp"
#include "ctdsr/image_io.hpp"
#include "ctdsr/losses.hpp"
#include "ctdsr/structure.hpp"
#include "ctdsr/trainer.hpp"
#include "test_util.hpp"

using namespace ctdsr;
using namespace ctdsr::testing;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    std::vector<std::string> failures;
    std::vector<std::string> notes;
    int checks = 0;

    void expect(bool ok, const std::string& what) {
        ++checks;
        if (!ok) failures.push_back(what);
    }
    void note(const std::string& s) { notes.push_back(s); }
};

std::string num(double v, int prec = 6) {
    std::ostringstream os;
    os << std::setprecision(prec) << v;
    return os.str();
}

// ---------------------------------------------------------------------------
// 1: properties

std::vector<double> brute_affinity(const Tensor<double>& f) {
    const int n = f.height() * f.width();
    std::vector<double> out(static_cast<std::size_t>(n) * n);
    for (int i = 0; i < n; ++i) {
        std::vector<double> logits(n);
        for (int j = 0; j < n; ++j) {
            double s = 0;
            for (int c = 0; c < f.channels(); ++c) s += f.channel(c)[i] * f.channel(c)[j];
            logits[j] = s;
        }
        const double mx = *std::max_element(logits.begin(), logits.end());
        double z = 0;
        for (double l : logits) z += std::exp(l - mx);
        for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(i) * n + j] = std::exp(logits[j] - mx) / z;
    }
    return out;
}

DepthMap random_map(int h, int w, std::uint64_t seed) { return DepthMap(random_tensor<float>({1, h, w}, seed, 0, 1)); }

void properties(Outcome& o) {
    // affinity
    double row_err = 0;
    double cycle_err = 0;
    double brute_err = 0;
    bool in_range = true;
    for (std::uint64_t s = 0; s < 5; ++s) {
        const auto f = random_tensor<double>({3, 4, 4}, 10 + s);
        const Tensor<double> a = affinity(f, 4);
        const auto b = brute_affinity(f);
        for (std::size_t i = 0; i < b.size(); ++i) brute_err = std::max(brute_err, std::abs(a[i] - b[i]));
        for (int i = 0; i < 16; ++i) {
            double row = 0;
            for (int j = 0; j < 16; ++j) {
                row += a(0, i, j);
                in_range = in_range && a(0, i, j) > 0 && a(0, i, j) < 1;
                for (int k = 0; k < 16; ++k) {
                    auto m = [&](int p, int q) { return std::log(a(0, p, q)) - std::log(a(0, q, p)); };
                    cycle_err = std::max(cycle_err, std::abs(m(i, j) + m(j, k) + m(k, i)));
                }
            }
            row_err = std::max(row_err, std::abs(row - 1));
        }
    }
    const auto frozen = oracles()["affinity_pool_out"].get<std::vector<double>>();
    const Tensor<double> pooled =
        affinity(from_values<double>({3, 8, 8}, oracles()["affinity_pool_in"].get<std::vector<double>>()), 4);
    for (std::size_t i = 0; i < frozen.size(); ++i) brute_err = std::max(brute_err, std::abs(pooled[i] - frozen[i]));
    o.expect(row_err <= 1e-9 && in_range, "affinity rows not stochastic (" + num(row_err) + ")");
    o.expect(cycle_err <= 1e-6, "affinity logits not symmetric (" + num(cycle_err) + ")");
    o.expect(brute_err <= 1e-6, "affinity differs from brute force by " + num(brute_err));

    // ssim
    for (std::uint64_t s = 0; s < 10; ++s) {
        const auto x = random_map(20, 24, 100 + s);
        const auto y = random_map(20, 24, 200 + s);
        o.expect(ssim(x, x) == 1.0, "ssim(x, x) != 1");
        const double xy = ssim(x, y);
        o.expect(std::abs(xy - ssim(y, x)) <= 1e-9, "ssim not symmetric");
        o.expect(xy >= -1 && xy <= 1, "ssim out of range");
    }
    const DepthMap sa(from_values<float>({1, 32, 32}, read_f64("ssim_a.bin")));
    const DepthMap sc(from_values<float>({1, 32, 32}, read_f64("ssim_c.bin")));
    o.expect(std::abs(ssim(sa, sc) - oracles()["ssim_a_c"].get<double>()) <= 1e-6, "ssim differs from reference");

    // losses
    for (std::uint64_t s = 0; s < 10; ++s) {
        const auto x = random_map(16, 16, 300 + s);
        const auto y = random_map(16, 16, 400 + s);
        o.expect(dsr_loss(x, y) > 0 && dsr_loss(x, x) == 0, "L_DSR sign or identity");
        o.expect(de_loss(x, y, 0.2) > 0 && de_loss(x, x, 0.2) == 0, "L_DE sign or identity");
        const Tensor<double> fx = random_tensor<double>({3, 8, 8}, 500 + s);
        const Tensor<double> fy = random_tensor<double>({3, 8, 8}, 600 + s);
        o.expect(output_space_loss({fx}, {fy}) > 0 && output_space_loss({fx}, {fx}) == 0, "L_O sign or identity");
        o.expect(affinity_space_loss({fx}, {fy}, 4) > 0 && affinity_space_loss({fx}, {fx}, 4) == 0,
                 "L_A sign or identity");
        const StructureMap px = compute_structure_gt(x);
        const StructureMap py = compute_structure_gt(y);
        o.expect(structure_loss(px, py) > 0 && structure_loss(px, px) == 0, "L_struc sign or identity");
        o.expect(rmse_metric(x, y, 255) >= mad_metric(x, y, 255), "RMSE < MAD");
        o.expect(mad_metric(x, x, 255) == 0 && rmse_metric(x, x, 255) == 0, "metrics nonzero at identity");
    }

    // augmentation
    const auto samples = make_toy_samples(3, 4, 32, 4);
    for (const auto& s : samples) {
        const auto back = augment_rotate180(augment_rotate180(s));
        o.expect(back.d_lr == s.d_lr && back.d_hr == s.d_hr && back.rgb == s.rgb && back.s_gt == s.s_gt,
                 "rotate180 is not an involution");
        const auto r = augment_rotate180(s);
        o.expect(r.d_hr.at(0, 0) == s.d_hr.at(31, 31), "rotate180 corner mapping");
    }

    // structure kernel
    const StructureMap flat = compute_structure_gt(DepthMap(9, 7, 0.42f));
    for (float v : flat.tensor().values()) o.expect(v == 0.0f, "structure map nonzero on a constant");
    Rng rng(7);
    DepthMap d1(12, 12);
    DepthMap d2(12, 12);
    for (auto& v : d1.tensor().values()) v = static_cast<float>(rng.integer(0, 64)) / 64.0f;
    for (auto& v : d2.tensor().values()) v = static_cast<float>(rng.integer(0, 64)) / 64.0f;
    DepthMap mix(12, 12);
    for (std::size_t i = 0; i < mix.tensor().size(); ++i) mix.tensor()[i] = 2.0f * d1.tensor()[i] - 0.5f * d2.tensor()[i];
    const auto s = compute_structure_gt(mix);
    const auto s1 = compute_structure_gt(d1);
    const auto s2 = compute_structure_gt(d2);
    double lin = 0;
    for (std::size_t i = 0; i < s.tensor().size(); ++i) {
        lin = std::max(lin, std::abs(double(s.tensor()[i]) - (2.0 * s1.tensor()[i] - 0.5 * s2.tensor()[i])));
    }
    o.expect(lin <= 1e-9, "structure map not linear (" + num(lin) + ")");
}

// ---------------------------------------------------------------------------
// 2: gradients

Tensor<double> offset_target(const Tensor<double>& x, std::uint64_t seed) {
    Rng rng(seed);
    Tensor<double> t = x;
    for (auto& v : t.values()) v += (rng.uniform() < 0.5 ? -1 : 1) * rng.uniform(0.05, 0.3);
    return t;
}

void gradients(Outcome& o) {
    double worst = 0;
    auto record = [&](const std::string& what, const GradCheck& g) {
        worst = std::max(worst, g.rel_error);
        o.expect(g.rel_error <= 1e-4, what + " relative error " + num(g.rel_error));
    };
    const auto x = random_tensor<double>({1, 8, 8}, 1, 0, 1);
    {
        std::vector<Tensor<double>> in{x, offset_target(x, 2)};
        LossFn fn = [](Tape<double>&, const std::vector<Var<double>>& v) { return dsr_loss(v[0], v[1]); };
        record("L_DSR", check_gradient(fn, in, 0));
    }
    {
        // the SSIM term on 8x8 with a window that fits, plus L_DE with its standard window on 16x16
        ops::SsimOptions opt;
        opt.window = 7;
        opt.sigma = 1.0;
        std::vector<Tensor<double>> in{x, random_tensor<double>({1, 8, 8}, 3, 0, 1)};
        LossFn fn = [&](Tape<double>&, const std::vector<Var<double>>& v) { return ops::ssim(v[0], v[1], opt); };
        record("SSIM 8x8", check_gradient(fn, in, 0));
        const auto x16 = random_tensor<double>({1, 16, 16}, 4, 0, 1);
        std::vector<Tensor<double>> in16{x16, offset_target(x16, 5)};
        LossFn de = [](Tape<double>&, const std::vector<Var<double>>& v) { return de_loss(v[0], v[1], 0.2); };
        record("L_DE", check_gradient(de, in16, 0));
    }
    std::vector<Tensor<double>> feats{random_tensor<double>({3, 8, 8}, 6), random_tensor<double>({3, 8, 8}, 7)};
    {
        std::vector<Tensor<double>> outs{x, offset_target(x, 8)};
        LossFn fn = [](Tape<double>&, const std::vector<Var<double>>& v) {
            return output_space_loss<double>({v[0]}, {v[1]});
        };
        record("L_O", check_gradient(fn, outs, 0));
        record("L_O teacher side", check_gradient(fn, outs, 1));
        LossFn la = [](Tape<double>&, const std::vector<Var<double>>& v) {
            return affinity_space_loss<double>({v[0]}, {v[1]}, 8);
        };
        record("L_A", check_gradient(la, feats, 0));
    }
    const ArchConfig arch{4, 2, 4, 1, 0};
    {
        auto sp = init_spnet<double>(arch, 9);
        auto unc = init_uncertainty<double>(arch);
        std::vector<Tensor<double>> in{random_tensor<double>({4, 8, 8}, 10), random_tensor<double>({4, 8, 8}, 11),
                                       random_tensor<double>({1, 8, 8}, 12, 0, 1),
                                       random_tensor<double>({1, 8, 8}, 13, 0, 1),
                                       random_tensor<double>({1, 8, 8}, 14, 0, 1), random_tensor<double>({1, 8, 8}, 15)};
        LossFn fn = [&](Tape<double>&, const std::vector<Var<double>>& v) {
            auto u_sr = uncertainty_map(v[2], v[4], unc, Branch::sr, true);
            auto u_de = uncertainty_map(v[3], v[4], unc, Branch::de, true);
            return structure_loss(spnet_forward(attention_fuse(v[0], v[1], u_sr, u_de), sp, true), v[5]);
        };
        for (std::size_t i = 0; i < 4; ++i) record("L_struc input " + std::to_string(i), check_gradient(fn, in, i));
        auto whole = [&](Tape<double>& t) {
            std::vector<Var<double>> v;
            for (const auto& e : in) v.push_back(t.constant(e));
            return fn(t, v);
        };
        record("L_struc sp.0.weight", check_param_gradient(whole, sp.store.at("sp.0.weight")));
        record("L_struc sr.weight", check_param_gradient(whole, unc.store.at("sr.weight")));
    }
    {
        LossWeights w;
        std::vector<Tensor<double>> maps{x, offset_target(x, 16), offset_target(x, 17), feats[0], feats[1]};
        LossFn fn = [&](Tape<double>&, const std::vector<Var<double>>& v) {
            auto distill = distill_loss(output_space_loss<double>({v[0]}, {v[2]}),
                                        affinity_space_loss<double>({v[3]}, {v[4]}, 8), w.gamma);
            return total_student_loss(dsr_loss(v[0], v[1]), ops::l1_mean(v[0], v[2]), distill, w);
        };
        for (std::size_t i : {0u, 3u}) record("total input " + std::to_string(i), check_gradient(fn, maps, i));
    }
    {
        auto student = init_dsrnet<double>(arch, 20);
        auto teacher = init_denet<double>(arch, 21);
        Tape<double> t;
        auto s = dsrnet_forward(t.constant(random_tensor<double>({1, 8, 8}, 22, 0, 1)), student, true);
        auto te = denet_forward(t.constant(random_tensor<double>({3, 32, 32}, 23, 0, 1)), teacher, false);
        t.backward(distill_loss(output_space_loss(s.side_outputs, te.side_outputs),
                                affinity_space_loss(s.features, te.features, 4), 0.5));
        bool zero = true;
        for (const auto& p : teacher.store) {
            for (double g : p->grad.values()) zero = zero && g == 0.0;
        }
        bool reached = false;
        for (const auto& p : student.store) {
            for (double g : p->grad.values()) reached = reached || g != 0.0;
        }
        o.expect(zero, "L_distill leaked gradient into teacher parameters");
        o.expect(reached, "L_distill did not reach the student");
    }
    o.note("worst relative error " + num(worst, 3));
}

// ---------------------------------------------------------------------------
// 3: protocol

void protocol(Outcome& o) {
    struct Row {
        double e_dsr, e_de;
        Role teacher;
    };
    for (const Row& r : {Row{0.1, 0.2, Role::dsr}, Row{0.3, 0.2, Role::de}, Row{0.25, 0.25, Role::dsr}}) {
        const auto a = select_roles(r.e_dsr, r.e_de);
        o.expect(a.teacher == r.teacher && a.student != a.teacher,
                 "select_roles(" + num(r.e_dsr) + ", " + num(r.e_de) + ")");
    }

    const auto data = make_toy_samples(31, 16, 32, 4);
    TrainConfig c;
    c.arch = {4, 2, 8, 1, 0};
    c.batch_size = 4;
    c.step1_epochs = 2;
    c.max_epochs = 4;
    c.seed = 8;
    TrainState s = init_state(c);
    run_step1(s, c, data);
    const TrainState after_step1 = s;

    std::uint64_t prev_dsr = s.dsr.checksum();
    std::uint64_t prev_de = s.de.checksum();
    TrainHooks h;
    h.on_epoch_end = [&](const EpochRecord& r, const TrainState& st) {
        const bool dsr_teacher = *r.teacher == Role::dsr;
        const std::uint64_t teacher_now = dsr_teacher ? st.dsr.checksum() : st.de.checksum();
        const std::uint64_t teacher_before = dsr_teacher ? prev_dsr : prev_de;
        o.expect(teacher_now == teacher_before, "teacher changed during epoch " + std::to_string(r.epoch));
        prev_dsr = st.dsr.checksum();
        prev_de = st.de.checksum();
    };
    run_step2(s, c, data, h);

    // plain L_DSR loop against Step 2 with the cross-task terms off
    TrainConfig plain = c;
    plain.augment = true;
    plain.weights.rho1 = 0;
    plain.weights.rho2 = 0;
    plain.student = Role::dsr;
    TrainState st = after_step1;
    std::vector<double> trainer_losses;
    TrainHooks collect;
    collect.on_epoch_end = [&](const EpochRecord& r, const TrainState&) {
        trainer_losses.insert(trainer_losses.end(), r.batch_losses.begin(), r.batch_losses.end());
    };
    run_step2(st, plain, data, collect);

    NetworkParams<float> ref = after_step1.dsr;
    AdamState ref_opt = after_step1.opt_dsr;
    std::vector<double> ref_losses;
    for (int epoch = c.step1_epochs + 1; epoch <= c.max_epochs; ++epoch) {
        const auto plan = plan_epoch(plain.seed, epoch, data.size(), true);
        for (std::size_t b0 = 0; b0 < data.size(); b0 += 4) {
            ref.store.zero_grad();
            double sum = 0;
            for (std::size_t k = b0; k < b0 + 4; ++k) {
                const TrainingSample sample =
                    plan.rotate[plan.order[k]] ? augment_rotate180(data[plan.order[k]]) : data[plan.order[k]];
                Tape<float> t;
                auto fs = dsrnet_forward(t.constant(sample.d_lr.tensor()), ref, true);
                auto loss = dsr_loss(fs.final_output, t.constant(sample.d_hr.tensor()));
                sum += loss.value().item();
                t.backward(ops::scale(loss, 0.25f));
            }
            ref_losses.push_back(sum / 4);
            optimizer_step(ref.store, ref_opt, lr_at_epoch(epoch, plain), plain.optimizer);
        }
    }
    o.expect(ref_losses.size() == trainer_losses.size(), "loss trajectory lengths differ");
    double worst = 0;
    for (std::size_t i = 0; i < std::min(ref_losses.size(), trainer_losses.size()); ++i) {
        worst = std::max(worst, std::abs(ref_losses[i] - trainer_losses[i]));
    }
    o.expect(worst <= 1e-6, "loss trajectory differs by " + num(worst));
    o.expect(ref.checksum() == st.dsr.checksum(), "final DSRNet weights differ from the plain loop");
    o.note(std::to_string(ref_losses.size()) + " steps, max loss difference " + num(worst, 3));
}

// ---------------------------------------------------------------------------
// 4: ablation ladder

struct Rung {
    const char* name;
    double rho1, rho2, gamma;
    bool forced_dsr;
};
constexpr Rung kLadder[] = {{"w/o CT", 0, 0, 0, true},
                            {"+L_O", 0, 0.1, 0, false},
                            {"+L_O+L_A", 0, 0.1, 0.5, false},
                            {"+SPNet", 0.1, 0.1, 0.5, false}};

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void ladder(Outcome& o, int seeds, bool verbose) {
    std::vector<std::vector<double>> mad(4);
    for (int k = 1; k <= seeds; ++k) {
        const auto seed = static_cast<std::uint64_t>(k);
        TrainConfig c;
        c.arch = {4, 2, 16, 1, 0};
        c.batch_size = 16;
        c.step1_epochs = 30;
        c.max_epochs = 60;
        c.pool_size = 16;
        c.augment = false;
        c.seed = seed;
        const auto data = make_toy_samples(mix_seed(seed, 11), 500, 64, 4);
        std::vector<RgbdPair> test;
        for (int i = 0; i < 20; ++i) {
            const auto scene = generate_toy_scene(mix_seed(seed * 1000 + 7, static_cast<std::uint64_t>(i)), 64);
            test.push_back({"test" + std::to_string(i), scene.rgb, scene.depth});
        }
        const auto t0 = Clock::now();
        TrainState shared = init_state(c);
        run_step1(shared, c, data);
        TeacherCache cache;
        TrainHooks h;
        h.teacher_cache = &cache;
        std::ostringstream line;
        line << "seed " << seed << " (bicubic " << num(evaluate(test, nullptr, 4, 1).mean.mad, 5) << ", step 1 "
             << num(evaluate(test, &shared.dsr, 4, 1).mean.mad, 5) << "):";
        for (std::size_t r = 0; r < 4; ++r) {
            TrainConfig cr = c;
            cr.weights.rho1 = kLadder[r].rho1;
            cr.weights.rho2 = kLadder[r].rho2;
            cr.weights.gamma = kLadder[r].gamma;
            if (kLadder[r].forced_dsr) cr.student = Role::dsr;
            TrainState s = shared;
            run_step2(s, cr, data, h);
            mad[r].push_back(evaluate(test, &s.dsr, 4, 1).mean.mad);
            line << "  " << kLadder[r].name << " " << num(mad[r].back(), 5);
        }
        line << "  [" << num(seconds_since(t0), 4) << " s]";
        o.note(line.str());
        if (verbose) std::cerr << line.str() << "\n";
    }
    std::vector<double> med(4);
    std::ostringstream line;
    line << "median MAD:";
    for (std::size_t r = 0; r < 4; ++r) {
        med[r] = median(mad[r]);
        line << "  " << kLadder[r].name << " " << num(med[r], 5);
    }
    o.note(line.str());
    for (std::size_t r = 1; r < 4; ++r) {
        o.expect(med[r] <= med[r - 1] * 1.01, std::string(kLadder[r].name) + " median " + num(med[r], 5) +
                                                  " is worse than " + kLadder[r - 1].name + " " +
                                                  num(med[r - 1], 5) + " by more than 1%");
    }
    const double gain = 1 - med[3] / med[0];
    o.expect(med[3] < med[0], "full model median is not below the baseline");
    o.expect(gain >= 0.03, "end-to-end improvement " + num(100 * gain, 3) + "% is below 3%");
    o.note("end-to-end improvement " + num(100 * gain, 3) + "%");
}

// ---------------------------------------------------------------------------
// 5: depth-only inference

int run_cli(std::vector<std::string> args, std::string* err = nullptr) {
    args.insert(args.begin(), "ctdsr");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out;
    std::ostringstream e;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, e);
    if (err != nullptr) *err = e.str();
    return code;
}

void depth_only(Outcome& o) {
    TempDir dir("accept_infer");
    TrainConfig c;
    c.arch = {4, 2, 8, 1, 0};
    c.step1_epochs = 1;
    c.max_epochs = 2;
    c.batch_size = 4;
    TrainState s = init_state(c);
    train(s, c, make_toy_samples(5, 8, 32, 4));
    save_checkpoint(s, dir.path / "full.ctar");
    TrainState dsr_only;
    dsr_only.dsr = s.dsr;
    save_checkpoint(dsr_only, dir.path / "dsr_only.ctar");
    o.expect(fs::file_size(dir.path / "dsr_only.ctar") < fs::file_size(dir.path / "full.ctar"),
             "stripped checkpoint is not smaller");

    io::write_pfm(dir.path / "lr.pfm", random_tensor<float>({1, 16, 16}, 6, 0, 1));
    for (const auto& e : fs::directory_iterator(dir.path)) {
        const auto ext = e.path().extension();
        o.expect(ext != ".png" && ext != ".jpg", "unexpected image " + e.path().string());
    }
    std::string err;
    o.expect(run_cli({"infer", "--checkpoint", (dir.path / "full.ctar").string(), "--input",
                      (dir.path / "lr.pfm").string(), "--output", (dir.path / "a.pfm").string()},
                     &err) == 0,
             "infer failed: " + err);
    o.expect(run_cli({"infer", "--checkpoint", (dir.path / "dsr_only.ctar").string(), "--input",
                      (dir.path / "lr.pfm").string(), "--output", (dir.path / "b.pfm").string()},
                     &err) == 0,
             "infer with DSRNet-only checkpoint failed: " + err);
    o.expect(run_cli({"infer", "--checkpoint", (dir.path / "full.ctar").string(), "--input",
                      (dir.path / "lr.pfm").string(), "--output", (dir.path / "c.pfm").string(), "--rgb",
                      "x.png"}) == 1,
             "infer accepted an RGB argument");
    if (fs::exists(dir.path / "a.pfm") && fs::exists(dir.path / "b.pfm")) {
        o.expect(io::read_pfm(dir.path / "a.pfm").shape() == Shape{1, 64, 64}, "output is not 64x64");
        o.expect(slurp(dir.path / "a.pfm") == slurp(dir.path / "b.pfm"), "output bytes depend on DENet/SPNet");
    }
}

// ---------------------------------------------------------------------------
// 6: determinism

void determinism(Outcome& o) {
    TrainConfig c;
    c.arch = {4, 2, 16, 1, 0};
    c.batch_size = 16;
    c.step1_epochs = 3;
    c.max_epochs = 6;
    c.pool_size = 16;
    c.seed = 12;
    const auto data = make_toy_samples(mix_seed(12, 11), 64, 64, 4);
    TrainState a = init_state(c);
    TrainState b = init_state(c);
    train(a, c, data);
    train(b, c, data);
    for (auto [name, x, y] : {std::tuple{"DSRNet", a.dsr.checksum(), b.dsr.checksum()},
                              std::tuple{"DENet", a.de.checksum(), b.de.checksum()},
                              std::tuple{"SPNet", a.sp.checksum(), b.sp.checksum()},
                              std::tuple{"uncertainty", a.uncertainty.checksum(), b.uncertainty.checksum()}}) {
        o.expect(x == y, std::string(name) + " checksum differs between runs");
    }
    o.expect(a.role_history == b.role_history, "role history differs between runs");
    std::ostringstream roles;
    for (const auto& r : a.role_history) roles << to_string(r.teacher)[1];
    o.note("teachers per Step-2 epoch: " + roles.str());
}

// ---------------------------------------------------------------------------
// 7: metric engine

// Direct two-dimensional bicubic (a = -0.5) with per-axis normalised, edge-trimmed taps.
std::vector<double> taps_for(int in, int out, int o, int& first) {
    const double scale = static_cast<double>(in) / out;
    const double fs = std::max(scale, 1.0);
    const double center = (o + 0.5) * scale;
    first = std::max(static_cast<int>(center - 2 * fs + 0.5), 0);
    const int last = std::min(static_cast<int>(center + 2 * fs + 0.5), in);
    std::vector<double> w;
    double total = 0;
    for (int i = first; i < last; ++i) {
        const double x = std::abs((i - center + 0.5) / fs);
        const double k = x < 1 ? 1.5 * x * x * x - 2.5 * x * x + 1 : (x < 2 ? -0.5 * x * x * x + 2.5 * x * x - 4 * x + 2 : 0);
        w.push_back(k);
        total += k;
    }
    for (auto& v : w) v /= total;
    return w;
}

void metric_engine(Outcome& o) {
    const auto scene = generate_toy_scene(mix_seed(999, 1), 66);
    const EvalReport report = evaluate({{"held-out", scene.rgb, scene.depth}}, nullptr, 4, 1.0);
    const EvalRow& row = report.rows.at(0);

    DepthMap hr(64, 64);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) hr.at(y, x) = scene.depth.at(y, x);
    const DepthMap up = bicubic_upsample(bicubic_downsample(hr, 4), 4);
    long double abs_sum = 0;
    long double sq_sum = 0;
    for (int y = 0; y < 64; ++y) {
        for (int x = 0; x < 64; ++x) {
            const long double d = static_cast<long double>(up.at(y, x)) - hr.at(y, x);
            abs_sum += d < 0 ? -d : d;
            sq_sum += d * d;
        }
    }
    const double mad = static_cast<double>(abs_sum / 4096);
    const double rmse = std::sqrt(static_cast<double>(sq_sum / 4096));
    o.expect(std::abs(row.bicubic_mad - mad) <= 1e-9, "MAD " + num(row.bicubic_mad, 12) + " vs " + num(mad, 12));
    o.expect(std::abs(row.bicubic_rmse - rmse) <= 1e-9, "RMSE " + num(row.bicubic_rmse, 12) + " vs " + num(rmse, 12));
    o.expect(mad > 0, "bicubic MAD is zero");

    // the degradation itself, recomputed in double with a direct 2-D sum
    auto resample = [](const std::vector<double>& src, int ih, int iw, int oh, int ow) {
        std::vector<double> dst(static_cast<std::size_t>(oh) * ow);
        for (int y = 0; y < oh; ++y) {
            int fy = 0;
            const auto wy = taps_for(ih, oh, y, fy);
            for (int x = 0; x < ow; ++x) {
                int fx = 0;
                const auto wx = taps_for(iw, ow, x, fx);
                double s = 0;
                for (std::size_t i = 0; i < wy.size(); ++i)
                    for (std::size_t j = 0; j < wx.size(); ++j)
                        s += wy[i] * wx[j] * src[static_cast<std::size_t>(fy + i) * iw + fx + j];
                dst[static_cast<std::size_t>(y) * ow + x] = s;
            }
        }
        return dst;
    };
    std::vector<double> hr_d(hr.tensor().values().begin(), hr.tensor().values().end());
    const auto ref_up = resample(resample(hr_d, 64, 64, 16, 16), 16, 16, 64, 64);
    long double ref_abs = 0;
    for (std::size_t i = 0; i < ref_up.size(); ++i) ref_abs += std::abs(ref_up[i] - hr_d[i]);
    const double ref_mad = static_cast<double>(ref_abs / 4096);
    o.expect(std::abs(ref_mad - mad) <= 1e-6, "independent bicubic MAD " + num(ref_mad, 10) + " vs " + num(mad, 10));
    o.note("bicubic MAD " + num(mad, 9) + ", RMSE " + num(rmse, 9) + " (independent resampler MAD " +
           num(ref_mad, 9) + ")");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance run"};
    int seeds = 3;
    std::vector<int> only;
    bool verbose = false;
    app.add_option("--seeds", seeds, "Seeds for the ablation ladder")->check(CLI::PositiveNumber);
    app.add_option("--only", only, "Run only these criteria");
    app.add_flag("-v,--verbose", verbose);
    CLI11_PARSE(app, argc, argv);

    struct Criterion {
        int id;
        const char* title;
        double budget_s;  // 0: no limit
        std::function<void(Outcome&)> run;
    };
    const std::vector<Criterion> criteria{
        {1, "property suite", 120, properties},
        {2, "gradient verification", 300, gradients},
        {3, "two-step protocol", 0, protocol},
        {4, "toy ablation ladder", 1800, [&](Outcome& o) { ladder(o, seeds, verbose); }},
        {5, "depth-only inference", 0, depth_only},
        {6, "determinism", 0, determinism},
        {7, "metric engine", 0, metric_engine},
    };

    int failed = 0;
    for (const auto& c : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
        Outcome o;
        const auto t0 = Clock::now();
        try {
            c.run(o);
        } catch (const std::exception& e) {
            o.failures.push_back(std::string("exception: ") + e.what());
        }
        const double secs = seconds_since(t0);
        if (c.budget_s > 0 && secs > c.budget_s) {
            o.failures.push_back("took " + num(secs, 4) + " s, budget " + num(c.budget_s) + " s");
        }
        const bool pass = o.failures.empty();
        failed += pass ? 0 : 1;
        std::cout << (pass ? "PASS" : "FAIL") << " criterion " << c.id << ": " << c.title << " (" << o.checks
                  << " checks, " << std::fixed << std::setprecision(1) << secs << " s)" << std::defaultfloat
                  << std::setprecision(6) << "\n";
        for (const auto& n : o.notes) std::cout << "    " << n << "\n";
        for (const auto& f : o.failures) std::cout << "    failed: " << f << "\n";
        std::cout.flush();
    }
    return failed;
}
