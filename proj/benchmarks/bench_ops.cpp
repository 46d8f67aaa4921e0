// Copyright (c) 2026 The ctdsr Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "ctdsr/data_pipeline.hpp"
#include "ctdsr/distillation.hpp"
#include "ctdsr/losses.hpp"
#include "ctdsr/ops.hpp"
#include "ctdsr/random.hpp"

namespace {

using namespace ctdsr;

Tensor<float> noise(int c, int h, int w, std::uint64_t seed) {
    Tensor<float> t(c, h, w);
    Rng rng(seed);
    for (auto& v : t.values()) v = static_cast<float>(rng.uniform(-1, 1));
    return t;
}

// args: channels, extent
void BM_Conv3x3Forward(benchmark::State& st) {
    const int c = static_cast<int>(st.range(0));
    const int n = static_cast<int>(st.range(1));
    const auto x = noise(c, n, n, 1);
    const auto w = noise(c, c, 9, 2);
    const auto b = noise(c, 1, 1, 3);
    for (auto _ : st) {
        Tape<float> t;
        benchmark::DoNotOptimize(ops::conv2d(t.constant(x), t.constant(w), t.constant(b), {3, 1, 1}).value());
    }
    st.counters["FLOP/s"] =
        benchmark::Counter(2.0 * c * c * 9 * n * n, benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Conv3x3Forward)->Args({16, 64})->Args({32, 64})->Args({32, 128});

void BM_Conv3x3Backward(benchmark::State& st) {
    const int c = static_cast<int>(st.range(0));
    const int n = static_cast<int>(st.range(1));
    const auto x = noise(c, n, n, 1);
    const auto w = noise(c, c, 9, 2);
    const auto b = noise(c, 1, 1, 3);
    for (auto _ : st) {
        Tape<float> t;
        auto xi = t.input(x);
        auto y = ops::conv2d(xi, t.input(w), t.input(b), {3, 1, 1});
        t.backward(ops::l1_mean(y, t.constant(Tensor<float>(c, n, n, 2.0f))));
        benchmark::DoNotOptimize(t.grad(xi));
    }
}
BENCHMARK(BM_Conv3x3Backward)->Args({16, 64})->Args({32, 64});

// kernel/stride pairs of the up-projection units
void BM_Deconv(benchmark::State& st) {
    const int s = static_cast<int>(st.range(0));
    const int k = s == 2 ? 6 : (s == 4 ? 8 : 12);
    const auto x = noise(16, 16, 16, 4);
    const auto w = noise(16, 16, k * k, 5);
    const auto b = noise(16, 1, 1, 6);
    for (auto _ : st) {
        Tape<float> t;
        benchmark::DoNotOptimize(
            ops::conv_transpose2d(t.constant(x), t.constant(w), t.constant(b), {k, s, 2}).value());
    }
}
BENCHMARK(BM_Deconv)->Arg(2)->Arg(4)->Arg(8);

void BM_Affinity(benchmark::State& st) {
    const auto f = noise(16, 64, 64, 7);
    const int pool = static_cast<int>(st.range(0));
    for (auto _ : st) benchmark::DoNotOptimize(affinity(f, pool));
}
BENCHMARK(BM_Affinity)->Arg(8)->Arg(16);

void BM_Ssim(benchmark::State& st) {
    const DepthMap a(noise(1, 64, 64, 8));
    const DepthMap b(noise(1, 64, 64, 9));
    for (auto _ : st) benchmark::DoNotOptimize(ssim(a, b));
}
BENCHMARK(BM_Ssim);

void BM_BicubicDownUp(benchmark::State& st) {
    const DepthMap d(noise(1, 256, 256, 10));
    for (auto _ : st) benchmark::DoNotOptimize(bicubic_upsample(bicubic_downsample(d, 4), 4));
}
BENCHMARK(BM_BicubicDownUp);

}  // namespace
