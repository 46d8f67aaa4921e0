// Copyright (c) 2026 The ctdsr Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "ctdsr/distillation.hpp"
#include "ctdsr/losses.hpp"
#include "ctdsr/networks.hpp"
#include "ctdsr/structure.hpp"
#include "test_util.hpp"

using namespace ctdsr;
using ctdsr::testing::check_param_gradient;
using ctdsr::testing::random_tensor;

namespace {

ArchConfig small(int scale = 4, int stages = 2, int channels = 8) { return {scale, stages, channels, 1, 0}; }

bool all_equal(const Tensor<float>& t, float v) {
    for (float x : t.values())
        if (x != v) return false;
    return true;
}

bool any_nonzero(const Tensor<double>& t) {
    for (double x : t.values())
        if (x != 0.0) return true;
    return false;
}

}  // namespace

TEST_CASE("dsrnet at full depth: 16x16 input, x4, N = 5") {
    ArchConfig arch;  // N = 5, C = 32
    auto p = init_dsrnet<float>(arch, 1);
    Tape<float> tape;
    auto fs = dsrnet_forward(tape.constant(random_tensor<float>({1, 16, 16}, 2, 0, 1)), p, false);
    CHECK(fs.final_output.shape() == Shape{1, 64, 64});
    REQUIRE(fs.features.size() == 5);
    REQUIRE(fs.side_outputs.size() == 5);
    for (int n = 0; n < 5; ++n) {
        CHECK(fs.features[n].shape() == Shape{32, 64, 64});
        CHECK(fs.side_outputs[n].shape() == Shape{1, 64, 64});
    }
}

TEST_CASE("dsrnet supports every scale") {
    for (int s : {2, 4, 8, 16}) {
        CAPTURE(s);
        auto p = init_dsrnet<float>(small(s, 2, 4), 1);
        auto out = dsrnet_forward(DepthMap(4, 3, 0.5f), p);
        CHECK(out.final_output.height() == 4 * s);
        CHECK(out.final_output.width() == 3 * s);
        CHECK(out.features.size() == 2);
    }
    CHECK_THROWS_AS(init_dsrnet<float>(small(3), 1), ConfigError);
    CHECK_THROWS_AS(init_dsrnet<float>(small(4, 0), 1), ConfigError);
}

TEST_CASE("zero reconstruction layer leaves the bias map") {
    auto p = init_dsrnet<float>(small(), 4);
    p.store.at("recon.weight").value.fill(0.0f);
    p.store.at("recon.bias").value.fill(0.25f);
    auto out = dsrnet_forward(DepthMap(random_tensor<float>({1, 8, 8}, 5, 0, 1)), p);
    CHECK(all_equal(out.final_output.tensor(), 0.25f));

    auto d = init_denet<float>(small(), 4);
    d.store.at("recon.weight").value.fill(0.0f);
    auto de = denet_forward(RgbImage(32, 32, 0.0f), d);
    CHECK(all_equal(de.final_output.tensor(), 0.0f));
}

TEST_CASE("forward passes are deterministic") {
    auto p = init_dsrnet<float>(small(), 7);
    DepthMap lr(random_tensor<float>({1, 8, 8}, 8, 0, 1));
    auto a = dsrnet_forward(lr, p);
    auto b = dsrnet_forward(lr, p);
    CHECK(a.final_output == b.final_output);
    for (std::size_t n = 0; n < a.features.size(); ++n) {
        CHECK(a.features[n] == b.features[n]);
        CHECK(a.side_outputs[n] == b.side_outputs[n]);
    }
    CHECK(init_dsrnet<float>(small(), 7).checksum() == p.checksum());
    CHECK(init_dsrnet<float>(small(), 8).checksum() != p.checksum());
}

TEST_CASE("denet at full depth: 64x64x3, N = 5") {
    ArchConfig arch;
    auto p = init_denet<float>(arch, 1);
    auto fs = denet_forward(RgbImage(random_tensor<float>({3, 64, 64}, 3, 0, 1)), p);
    CHECK(same_extent(fs.final_output, 64, 64));
    REQUIRE(fs.features.size() == 5);
    REQUIRE(fs.side_outputs.size() == 5);
    for (const auto& f : fs.features) CHECK(f.shape() == Shape{32, 64, 64});
    for (const auto& d : fs.side_outputs) CHECK(d.shape() == Shape{1, 64, 64});

    Tape<float> tape;
    CHECK_THROWS(denet_forward(tape.constant(Tensor<float>(1, 64, 64)), p, false));
}

TEST_CASE("paired dsr and de outputs share the HR extent") {
    const ArchConfig arch = small(4, 3, 8);
    auto dsr = init_dsrnet<float>(arch, 1);
    auto de = init_denet<float>(arch, 1);
    auto a = dsrnet_forward(DepthMap(8, 8, 0.3f), dsr);
    auto b = denet_forward(RgbImage(32, 32, 0.3f), de);
    REQUIRE(a.side_outputs.size() == b.side_outputs.size());
    for (std::size_t n = 0; n < a.side_outputs.size(); ++n) {
        CHECK(a.side_outputs[n].shape() == b.side_outputs[n].shape());
        CHECK(a.features[n].shape() == b.features[n].shape());
    }
    CHECK(a.final_output.tensor().shape() == b.final_output.tensor().shape());
}

TEST_CASE("side output head") {
    ArchConfig arch;
    auto p = init_dsrnet<float>(arch, 3);
    Tape<float> tape;
    auto out = side_output_head(tape.constant(random_tensor<float>({32, 64, 64}, 1)), p, 1, false);
    CHECK(out.shape() == Shape{1, 64, 64});
    auto zero = side_output_head(tape.constant(Tensor<float>(32, 8, 8)), p, 2, false);
    CHECK(all_equal(zero.value(), 0.0f));
    CHECK_THROWS_AS(side_output_head(tape.constant(Tensor<float>(32, 8, 8)), p, 6, false), ConfigError);
}

TEST_CASE("side output depends on every input channel") {
    auto p = init_dsrnet<double>(small(4, 1, 8), 11);
    Tensor<double> f = random_tensor<double>({8, 6, 6}, 12, 0, 1);
    Tape<double> tape;
    auto x = tape.input(f);
    auto out = side_output_head(x, p, 1, false);
    tape.backward(ops::l1_mean(out, tape.constant(Tensor<double>(1, 6, 6, -10.0))));
    const Tensor<double>& g = tape.grad(x);
    for (int c = 0; c < 8; ++c) {
        CAPTURE(c);
        double norm = 0;
        for (int i = 0; i < 36; ++i) norm += std::abs(g.channel(c)[i]);
        CHECK(norm > 0);
    }
    // and the analytic sensitivity agrees with a finite-difference probe
    for (int c = 0; c < 8; ++c) {
        Tensor<double> up = f;
        Tensor<double> down = f;
        up(c, 2, 3) += 1e-6;
        down(c, 2, 3) -= 1e-6;
        auto eval = [&](const Tensor<double>& in) {
            Tape<double> t;
            auto o = side_output_head(t.constant(in), p, 1, false);
            return ops::l1_mean(o, t.constant(Tensor<double>(1, 6, 6, -10.0))).value().item();
        };
        CHECK(g(c, 2, 3) == doctest::Approx((eval(up) - eval(down)) / 2e-6).epsilon(1e-5));
    }
}

TEST_CASE("spnet") {
    ArchConfig arch;
    auto p = init_spnet<float>(arch, 2);
    CHECK(spnet_conv_layer_count(p) == 6);
    Tape<float> tape;
    auto s = spnet_forward(tape.constant(random_tensor<float>({64, 64, 64}, 3)), p, false);
    CHECK(s.shape() == Shape{1, 64, 64});
    auto z = spnet_forward(tape.constant(Tensor<float>(64, 8, 8)), p, false);
    CHECK(all_equal(z.value(), 0.0f));
    CHECK_THROWS(spnet_forward(tape.constant(Tensor<float>(32, 8, 8)), p, false));
}

TEST_CASE("every parameter receives gradient from some loss term") {
    const ArchConfig arch = small(4, 2, 8);
    auto dsr = init_dsrnet<double>(arch, 21);
    auto de = init_denet<double>(arch, 22);
    auto sp = init_spnet<double>(arch, 23);
    auto unc = init_uncertainty<double>(arch);
    Tape<double> tape;
    auto lr = tape.constant(random_tensor<double>({1, 8, 8}, 24, 0, 1));
    auto rgb = tape.constant(random_tensor<double>({3, 32, 32}, 25, 0, 1));
    auto hr = tape.constant(random_tensor<double>({1, 32, 32}, 26, 0, 1));
    auto s_gt = tape.constant(random_tensor<double>({1, 32, 32}, 27));
    auto a = dsrnet_forward(lr, dsr, true);
    auto b = denet_forward(rgb, de, true);
    auto u_sr = uncertainty_map(a.final_output, hr, unc, Branch::sr, true);
    auto u_de = uncertainty_map(b.final_output, hr, unc, Branch::de, true);
    auto struc = structure_loss(spnet_forward(attention_fuse(a.features.back(), b.features.back(), u_sr, u_de), sp, true),
                                s_gt);
    auto distill = distill_loss(output_space_loss(a.side_outputs, b.side_outputs),
                                affinity_space_loss(a.features, b.features, 4), 0.5);
    auto total = ops::add(ops::add(dsr_loss(a.final_output, hr), de_loss(b.final_output, hr, 0.2)),
                          ops::add(struc, distill));
    tape.backward(total);
    for (auto* store : {&dsr.store, &de.store, &sp.store, &unc.store}) {
        for (const auto& prm : *store) {
            CAPTURE(prm->name);
            CHECK((!prm->grad.empty() && any_nonzero(prm->grad)));
        }
    }
}

TEST_CASE("network gradients match finite differences") {
    const ArchConfig arch{2, 1, 4, 1, 0};
    auto dsr = init_dsrnet<double>(arch, 31);
    auto de = init_denet<double>(arch, 32);
    // 16x16 so the SSIM window fits
    const auto lr = random_tensor<double>({1, 8, 8}, 33, 0, 1);
    const auto rgb = random_tensor<double>({3, 16, 16}, 34, 0, 1);
    const auto hr = random_tensor<double>({1, 16, 16}, 35, 0, 1);
    auto dsr_fn = [&](Tape<double>& t) {
        auto fs = dsrnet_forward(t.constant(lr), dsr, true);
        return ops::add(dsr_loss(fs.final_output, t.constant(hr)),
                        ops::l1_mean(fs.side_outputs[0], t.constant(hr)));
    };
    for (std::string name : {"shallow.0.weight", "up1.deconv0.weight", "up1.conv0.bias", "recon.weight",
                             "side1.0.weight"}) {
        CAPTURE(name);
        CHECK(check_param_gradient(dsr_fn, dsr.store.at(name)).rel_error < 1e-5);
    }
    auto de_fn = [&](Tape<double>& t) {
        auto fs = denet_forward(t.constant(rgb), de, true);
        return de_loss(fs.final_output, t.constant(hr), 0.2);
    };
    for (std::string name : {"shallow.0.weight", "stage1.unit0.conv1.weight", "recon.bias"}) {
        CAPTURE(name);
        CHECK(check_param_gradient(de_fn, de.store.at(name)).rel_error < 1e-5);
    }
}
