// Copyright (c) 2026 The ctdsr Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "ctdsr/losses.hpp"
#include "ctdsr/networks.hpp"
#include "ctdsr/random.hpp"
#include "ctdsr/trainer.hpp"

namespace {

using namespace ctdsr;

Tensor<float> noise(int c, int h, int w, std::uint64_t seed) {
    Tensor<float> t(c, h, w);
    Rng rng(seed);
    for (auto& v : t.values()) v = static_cast<float>(rng.uniform(0, 1));
    return t;
}

// args: stages, channels, LR extent
void BM_DsrInfer(benchmark::State& st) {
    const ArchConfig arch{4, static_cast<int>(st.range(0)), static_cast<int>(st.range(1)), 1, 0};
    const int n = static_cast<int>(st.range(2));
    const auto p = init_dsrnet<float>(arch, 1);
    const DepthMap lr(noise(1, n, n, 2));
    for (auto _ : st) benchmark::DoNotOptimize(infer(lr, p));
    st.counters["hr_pixels"] = 16.0 * n * n;
}
BENCHMARK(BM_DsrInfer)->Args({2, 16, 16})->Args({5, 32, 16})->Args({5, 32, 64})->Unit(benchmark::kMillisecond);

void BM_DeForward(benchmark::State& st) {
    const ArchConfig arch{4, static_cast<int>(st.range(0)), static_cast<int>(st.range(1)), 1, 0};
    const auto p = init_denet<float>(arch, 3);
    const RgbImage rgb(noise(3, 64, 64, 4));
    for (auto _ : st) benchmark::DoNotOptimize(denet_forward(rgb, p).final_output);
}
BENCHMARK(BM_DeForward)->Args({2, 16})->Args({5, 32})->Unit(benchmark::kMillisecond);

// one sample's forward + backward through DSRNet under L_DSR
void BM_DsrTrainStep(benchmark::State& st) {
    const ArchConfig arch{4, 2, 16, 1, 0};
    auto p = init_dsrnet<float>(arch, 5);
    const auto lr = noise(1, 16, 16, 6);
    const auto hr = noise(1, 64, 64, 7);
    for (auto _ : st) {
        p.store.zero_grad();
        Tape<float> t;
        auto fs = dsrnet_forward(t.constant(lr), p, true);
        t.backward(dsr_loss(fs.final_output, t.constant(hr)));
    }
}
BENCHMARK(BM_DsrTrainStep)->Unit(benchmark::kMillisecond);

// one Step-1 epoch over 32 toy samples
void BM_Step1Epoch(benchmark::State& st) {
    TrainConfig c;
    c.arch = {4, 2, 16, 1, 0};
    c.batch_size = 16;
    c.step1_epochs = 1;
    c.max_epochs = 1;
    const auto data = make_toy_samples(8, 32, 64, 4);
    for (auto _ : st) {
        TrainState s = init_state(c);
        run_step1(s, c, data);
        benchmark::DoNotOptimize(s.dsr.checksum());
    }
}
BENCHMARK(BM_Step1Epoch)->Unit(benchmark::kMillisecond)->Iterations(2);

}  // namespace
