// Copyright (c) 2026 The ctdsr Authors
// SPDX-License-Identifier: Apache-2.0

#include "ctdsr/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <cmath>
#include <string>
#include <vector>

namespace ctdsr {

std::string to_string(const Shape& s) {
    return "(" + std::to_string(s.channels) + ", " + std::to_string(s.height) + ", " +
           std::to_string(s.width) + ")";
}

namespace ops {
namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <class T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

// Builds the message only on failure.
#define CTDSR_REQUIRE(cond, ...)              \
    do {                                      \
        if (!(cond)) throw ShapeError(__VA_ARGS__); \
    } while (false)

int conv_out(int in, const ConvGeometry& g) { return (in + 2 * g.pad - g.kernel) / g.stride + 1; }

// Unfolds x (C, H, W) into columns (C*k*k, Ho*Wo) for the given geometry.
template <class T>
void im2col(const T* x, int channels, int height, int width, const ConvGeometry& g, int out_h, int out_w,
            T* col) {
    const int k = g.kernel;
    std::size_t row = 0;
    for (int c = 0; c < channels; ++c) {
        const T* plane = x + static_cast<std::size_t>(c) * height * width;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx, ++row) {
                T* dst = col + row * static_cast<std::size_t>(out_h) * out_w;
                // Output columns whose source pixel lies inside the row.
                const int ox_lo = std::clamp((g.pad - kx + g.stride - 1) / g.stride, 0, out_w);
                const int ox_hi = std::clamp((width + g.pad - kx + g.stride - 1) / g.stride, ox_lo, out_w);
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky;
                    T* drow = dst + static_cast<std::size_t>(oy) * out_w;
                    if (iy < 0 || iy >= height) {
                        std::fill(drow, drow + out_w, T(0));
                        continue;
                    }
                    const T* srow = plane + static_cast<std::size_t>(iy) * width - g.pad + kx;
                    std::fill(drow, drow + ox_lo, T(0));
                    if (g.stride == 1) {
                        std::copy(srow + ox_lo, srow + ox_hi, drow + ox_lo);
                    } else {
                        for (int ox = ox_lo; ox < ox_hi; ++ox) drow[ox] = srow[ox * g.stride];
                    }
                    std::fill(drow + ox_hi, drow + out_w, T(0));
                }
            }
        }
    }
}

// Adjoint of im2col: scatters columns back, accumulating into x.
template <class T>
void col2im(const T* col, int channels, int height, int width, const ConvGeometry& g, int out_h, int out_w,
            T* x) {
    const int k = g.kernel;
    std::size_t row = 0;
    for (int c = 0; c < channels; ++c) {
        T* plane = x + static_cast<std::size_t>(c) * height * width;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx, ++row) {
                const T* src = col + row * static_cast<std::size_t>(out_h) * out_w;
                const int ox_lo = std::clamp((g.pad - kx + g.stride - 1) / g.stride, 0, out_w);
                const int ox_hi = std::clamp((width + g.pad - kx + g.stride - 1) / g.stride, ox_lo, out_w);
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= height) continue;
                    T* drow = plane + static_cast<std::size_t>(iy) * width - g.pad + kx;
                    const T* srow = src + static_cast<std::size_t>(oy) * out_w;
                    if (g.stride == 1) {
                        for (int ox = ox_lo; ox < ox_hi; ++ox) drow[ox] += srow[ox];
                    } else {
                        for (int ox = ox_lo; ox < ox_hi; ++ox) drow[ox * g.stride] += srow[ox];
                    }
                }
            }
        }
    }
}

template <class T>
void add_bias(Tensor<T>& out, const Tensor<T>& bias) {
    for (int c = 0; c < out.channels(); ++c) {
        T* p = out.channel(c);
        const T b = bias[c];
        for (std::size_t i = 0; i < out.shape().plane(); ++i) p[i] += b;
    }
}

template <class T>
void accumulate_bias_grad(Tensor<T>& gbias, const Tensor<T>& gout) {
    const auto plane = static_cast<Eigen::Index>(gout.shape().plane());
    for (int c = 0; c < gout.channels(); ++c) {
        gbias[c] += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(gout.channel(c), plane).sum();
    }
}

template <class T>
void check_same(const Var<T>& a, const Var<T>& b, const char* op) {
    CTDSR_REQUIRE(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                                        to_string(b.shape()));
}

// Normalised 1-D Gaussian taps.
std::vector<double> gaussian_taps(int window, double sigma) {
    std::vector<double> g(window);
    const int r = window / 2;
    double sum = 0;
    for (int i = 0; i < window; ++i) {
        g[i] = std::exp(-static_cast<double>((i - r) * (i - r)) / (2.0 * sigma * sigma));
        sum += g[i];
    }
    for (auto& v : g) v /= sum;
    return g;
}

// Separable 'valid' correlation of an (H, W) plane with taps g x g.
std::vector<double> filter_valid(const std::vector<double>& src, int h, int w, const std::vector<double>& g) {
    const int k = static_cast<int>(g.size());
    const int oh = h - k + 1;
    const int ow = w - k + 1;
    std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < ow; ++x) {
            double s = 0;
            for (int i = 0; i < k; ++i) s += g[i] * src[static_cast<std::size_t>(y) * w + x + i];
            tmp[static_cast<std::size_t>(y) * ow + x] = s;
        }
    }
    std::vector<double> out(static_cast<std::size_t>(oh) * ow);
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            double s = 0;
            for (int i = 0; i < k; ++i) s += g[i] * tmp[static_cast<std::size_t>(y + i) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = s;
        }
    }
    return out;
}

// Adjoint of filter_valid: maps an (H-k+1, W-k+1) plane back to (H, W).
std::vector<double> filter_valid_adjoint(const std::vector<double>& src, int h, int w,
                                         const std::vector<double>& g) {
    const int k = static_cast<int>(g.size());
    const int oh = h - k + 1;
    const int ow = w - k + 1;
    std::vector<double> tmp(static_cast<std::size_t>(h) * ow, 0.0);
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            const double v = src[static_cast<std::size_t>(y) * ow + x];
            for (int i = 0; i < k; ++i) tmp[static_cast<std::size_t>(y + i) * ow + x] += g[i] * v;
        }
    }
    std::vector<double> out(static_cast<std::size_t>(h) * w, 0.0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < ow; ++x) {
            const double v = tmp[static_cast<std::size_t>(y) * ow + x];
            for (int i = 0; i < k; ++i) out[static_cast<std::size_t>(y) * w + x + i] += g[i] * v;
        }
    }
    return out;
}


// Stride-1 convolution without an unfolded buffer. With the input zero-padded
// to (Hp, Wp) and flattened, output pixel o = y * Wp + x reads tap (ky, kx) at
// o + ky * Wp + kx, so each tap is one GEMM over a contiguous slice. Columns
// x >= Wo of the flat output are scratch and get discarded.
template <class T>
struct FlatConv {
    int cin, cout, k, pad, height, width, hp, wp, oh, ow, span;

    FlatConv(const Shape& xs, int out_channels, const ConvGeometry& g, int out_h, int out_w)
        : cin(xs.channels), cout(out_channels), k(g.kernel), pad(g.pad), height(xs.height), width(xs.width),
          hp(xs.height + 2 * g.pad), wp(xs.width + 2 * g.pad), oh(out_h), ow(out_w),
          span((out_h - 1) * (xs.width + 2 * g.pad) + out_w) {}

    [[nodiscard]] std::size_t plane() const { return static_cast<std::size_t>(hp) * wp; }
    [[nodiscard]] int offset(int tap) const { return (tap / k) * wp + tap % k; }

    using Strided = Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>;
    [[nodiscard]] Eigen::Map<const RowMat<T>, 0, Strided> tap_weight(const T* w, int tap) const {
        return {w + tap, cout, cin, Strided(static_cast<Eigen::Index>(cin) * k * k, k * k)};
    }
    [[nodiscard]] Eigen::Map<RowMat<T>, 0, Strided> tap_weight(T* w, int tap) const {
        return {w + tap, cout, cin, Strided(static_cast<Eigen::Index>(cin) * k * k, k * k)};
    }
    using Outer = Eigen::OuterStride<Eigen::Dynamic>;
    [[nodiscard]] Eigen::Map<const RowMat<T>, 0, Outer> slice(const T* padded, int tap) const {
        return {padded + offset(tap), cin, span, Outer(static_cast<Eigen::Index>(plane()))};
    }
    [[nodiscard]] Eigen::Map<RowMat<T>, 0, Outer> slice(T* padded, int tap) const {
        return {padded + offset(tap), cin, span, Outer(static_cast<Eigen::Index>(plane()))};
    }

    Buffer<T> pad_input(const T* x) const {
        Buffer<T> p(static_cast<std::size_t>(cin) * plane(), T(0));
        for (int c = 0; c < cin; ++c) {
            for (int y = 0; y < height; ++y) {
                const T* src = x + (static_cast<std::size_t>(c) * height + y) * width;
                std::copy(src, src + width, p.data() + c * plane() + static_cast<std::size_t>(y + pad) * wp + pad);
            }
        }
        return p;
    }
};

template <class T>
Var<T> conv2d_unit_stride(Var<T> x, Var<T> weight, Var<T> bias, const ConvGeometry& g, int oh, int ow) {
    const FlatConv<T> fc(x.shape(), weight.shape().channels, g, oh, ow);
    const Buffer<T> padded = fc.pad_input(x.value().data());
    RowMat<T> flat = RowMat<T>::Zero(fc.cout, fc.span);
    for (int t = 0; t < fc.k * fc.k; ++t) flat.noalias() += fc.tap_weight(weight.value().data(), t) * fc.slice(padded.data(), t);
    Tensor<T> out(fc.cout, oh, ow);
    for (int c = 0; c < fc.cout; ++c) {
        for (int y = 0; y < oh; ++y) {
            const T* src = flat.data() + static_cast<std::size_t>(c) * fc.span + static_cast<std::size_t>(y) * fc.wp;
            std::copy(src, src + ow, &out(c, y, 0));
        }
    }
    add_bias(out, bias.value());

    return x.tape->record(std::move(out), {x, weight, bias}, [x, weight, bias, fc](Tape<T>& tape, int self) {
        const Tensor<T>& gout = tape.grad(self);
        if (weight.requires_grad() || x.requires_grad()) {
            RowMat<T> gflat = RowMat<T>::Zero(fc.cout, fc.span);
            for (int c = 0; c < fc.cout; ++c) {
                for (int y = 0; y < fc.oh; ++y) {
                    std::copy_n(&gout(c, y, 0), fc.ow,
                                gflat.data() + static_cast<std::size_t>(c) * fc.span + static_cast<std::size_t>(y) * fc.wp);
                }
            }
            if (weight.requires_grad()) {
                const Buffer<T> padded = fc.pad_input(x.value().data());
                T* gw = tape.grad(weight).data();
                for (int t = 0; t < fc.k * fc.k; ++t) {
                    fc.tap_weight(gw, t).noalias() += gflat * fc.slice(padded.data(), t).transpose();
                }
            }
            if (x.requires_grad()) {
                Buffer<T> gpad(static_cast<std::size_t>(fc.cin) * fc.plane(), T(0));
                for (int t = 0; t < fc.k * fc.k; ++t) {
                    fc.slice(gpad.data(), t).noalias() += fc.tap_weight(weight.value().data(), t).transpose() * gflat;
                }
                Tensor<T>& gx = tape.grad(x);
                for (int c = 0; c < fc.cin; ++c) {
                    for (int y = 0; y < fc.height; ++y) {
                        const T* src = gpad.data() + c * fc.plane() + static_cast<std::size_t>(y + fc.pad) * fc.wp + fc.pad;
                        T* dst = &gx(c, y, 0);
                        for (int xx = 0; xx < fc.width; ++xx) dst[xx] += src[xx];
                    }
                }
            }
        }
        if (bias.requires_grad()) accumulate_bias_grad(tape.grad(bias), gout);
    });
}


// out[i] = x[idx[i]], or 0 where idx[i] < 0. Backward scatters.
using Index32 = std::vector<std::int32_t>;
using IndexPtr = std::shared_ptr<const Index32>;

template <class T>
Var<T> gather(Var<T> x, IndexPtr idx, Shape shape) {
    Tensor<T> out(shape);
    const T* src = x.value().data();
    const Index32& ix = *idx;
    for (std::size_t i = 0; i < ix.size(); ++i) out[i] = ix[i] >= 0 ? src[ix[i]] : T(0);
    return x.tape->record(std::move(out), {x}, [x, idx](Tape<T>& tape, int self) {
        const Tensor<T>& g = tape.grad(self);
        T* gx = tape.grad(x).data();
        const Index32& ix = *idx;
        for (std::size_t i = 0; i < ix.size(); ++i) {
            if (ix[i] >= 0) gx[ix[i]] += g[i];
        }
    });
}

// Index tables are pure functions of their key; memoised per thread.
template <class Build>
IndexPtr cached_index(int kind, std::array<int, 6> dims, Build build) {
    thread_local std::map<std::pair<int, std::array<int, 6>>, IndexPtr> cache;
    auto& slot = cache[{kind, dims}];
    if (!slot) slot = std::make_shared<const Index32>(build());
    return slot;
}

// Zero-padded input regrouped so that pixel (qy * s + ry, qx * s + rx) of the
// padded plane c lands in channel (c * s + ry) * s + rx at (qy, qx).
IndexPtr space_to_depth_index(int c, int h, int w, int s, int pad, int hq, int wq) {
    return cached_index(0, {c, h, w, s, pad, hq * 4096 + wq}, [=] {
        Index32 ix(static_cast<std::size_t>(c) * s * s * hq * wq);
        std::size_t i = 0;
        for (int ch = 0; ch < c; ++ch)
            for (int ry = 0; ry < s; ++ry)
                for (int rx = 0; rx < s; ++rx)
                    for (int qy = 0; qy < hq; ++qy)
                        for (int qx = 0; qx < wq; ++qx, ++i) {
                            const int y = qy * s + ry - pad;
                            const int x = qx * s + rx - pad;
                            ix[i] = (y < 0 || y >= h || x < 0 || x >= w) ? -1 : (ch * h + y) * w + x;
                        }
        return ix;
    });
}

// Inverse regrouping for the transposed case, cropping `pad` on each side.
IndexPtr depth_to_space_index(int c, int hq, int wq, int s, int pad, int oh, int ow) {
    return cached_index(1, {c, hq, wq, s, pad, oh * 4096 + ow}, [=] {
        Index32 ix(static_cast<std::size_t>(c) * oh * ow);
        std::size_t i = 0;
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < oh; ++y)
                for (int x = 0; x < ow; ++x, ++i) {
                    const int yp = y + pad;
                    const int xp = x + pad;
                    const int phase = (ch * s + yp % s) * s + xp % s;
                    ix[i] = (phase * hq + yp / s) * wq + xp / s;
                }
        return ix;
    });
}

// Strided kernel (cout, cin, k*k) as an m x m kernel over cin*s*s phases.
IndexPtr strided_weight_index(int cout, int cin, int k, int s) {
    const int m = k / s;
    return cached_index(2, {cout, cin, k, s, 0, 0}, [=] {
        Index32 ix(static_cast<std::size_t>(cout) * cin * s * s * m * m);
        std::size_t i = 0;
        for (int o = 0; o < cout; ++o)
            for (int c = 0; c < cin; ++c)
                for (int ry = 0; ry < s; ++ry)
                    for (int rx = 0; rx < s; ++rx)
                        for (int jy = 0; jy < m; ++jy)
                            for (int jx = 0; jx < m; ++jx, ++i)
                                ix[i] = (o * cin + c) * k * k + (jy * s + ry) * k + jx * s + rx;
        return ix;
    });
}

// Transposed kernel (cin, cout, k*k) as a flipped m x m stride-1 kernel
// producing cout*s*s phase channels.
IndexPtr transposed_weight_index(int cin, int cout, int k, int s) {
    const int m = k / s;
    return cached_index(3, {cin, cout, k, s, 0, 0}, [=] {
        Index32 ix(static_cast<std::size_t>(cout) * s * s * cin * m * m);
        std::size_t i = 0;
        for (int o = 0; o < cout; ++o)
            for (int ry = 0; ry < s; ++ry)
                for (int rx = 0; rx < s; ++rx)
                    for (int c = 0; c < cin; ++c)
                        for (int ty = 0; ty < m; ++ty)
                            for (int tx = 0; tx < m; ++tx, ++i)
                                ix[i] = (c * cout + o) * k * k + ((m - 1 - ty) * s + ry) * k + (m - 1 - tx) * s + rx;
        return ix;
    });
}

IndexPtr repeat_index(int n, int times) {
    return cached_index(4, {n, times, 0, 0, 0, 0}, [=] {
        Index32 ix(static_cast<std::size_t>(n) * times);
        for (std::size_t i = 0; i < ix.size(); ++i) ix[i] = static_cast<std::int32_t>(i / static_cast<std::size_t>(times));
        return ix;
    });
}

bool phase_decomposable(const ConvGeometry& g) { return g.stride > 1 && g.kernel % g.stride == 0; }

// Stride-s conv with k = m * s: space-to-depth, then an m x m stride-1 conv.
template <class T>
Var<T> conv2d_phased(Var<T> x, Var<T> weight, Var<T> bias, const ConvGeometry& g, int oh, int ow) {
    const Shape xs = x.shape();
    const int s = g.stride;
    const int m = g.kernel / s;
    const int cout = weight.shape().channels;
    const int hq = oh + m - 1;
    const int wq = ow + m - 1;
    Var<T> z = gather(x, space_to_depth_index(xs.channels, xs.height, xs.width, s, g.pad, hq, wq),
                      {xs.channels * s * s, hq, wq});
    Var<T> w = gather(weight, strided_weight_index(cout, xs.channels, g.kernel, s), {cout, xs.channels * s * s, m * m});
    return conv2d(z, w, bias, {m, 1, 0});
}

// Transposed counterpart: full m x m correlation into cout*s*s phase planes,
// then depth-to-space with the padding cropped.
template <class T>
Var<T> conv_transpose2d_phased(Var<T> x, Var<T> weight, Var<T> bias, const ConvGeometry& g, int oh, int ow) {
    const Shape xs = x.shape();
    const int s = g.stride;
    const int m = g.kernel / s;
    const int cout = weight.shape().height;
    Var<T> w = gather(weight, transposed_weight_index(xs.channels, cout, g.kernel, s), {cout * s * s, xs.channels, m * m});
    Var<T> b = gather(bias, repeat_index(cout, s * s), {cout * s * s, 1, 1});
    Var<T> z = conv2d(x, w, b, {m, 1, m - 1});
    const Shape zs = z.shape();
    return gather(z, depth_to_space_index(cout, zs.height, zs.width, s, g.pad, oh, ow), {cout, oh, ow});
}

}  // namespace

template <class T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias, ConvGeometry g) {
    const Shape xs = x.shape();
    const Shape ws = weight.shape();
    const int kk = g.kernel * g.kernel;
    CTDSR_REQUIRE(ws.channels > 0 && ws.height == xs.channels && ws.width == kk,
            "conv2d: weight " + to_string(ws) + " incompatible with input " + to_string(xs) + " and kernel " +
                std::to_string(g.kernel));
    CTDSR_REQUIRE((bias.shape() == Shape{ws.channels, 1, 1}), "conv2d: bias shape " + to_string(bias.shape()));
    const int oh = conv_out(xs.height, g);
    const int ow = conv_out(xs.width, g);
    CTDSR_REQUIRE(oh > 0 && ow > 0, "conv2d: empty output for input " + to_string(xs));

    if (g.stride == 1) return conv2d_unit_stride(x, weight, bias, g, oh, ow);
    if (phase_decomposable(g)) return conv2d_phased(x, weight, bias, g, oh, ow);

    const int rows = xs.channels * kk;
    const int cols = oh * ow;
    Buffer<T> col(static_cast<std::size_t>(rows) * cols);
    im2col(x.value().data(), xs.channels, xs.height, xs.width, g, oh, ow, col.data());

    Tensor<T> out(ws.channels, oh, ow);
    MatMap<T>(out.data(), ws.channels, cols).noalias() =
        ConstMatMap<T>(weight.value().data(), ws.channels, rows) * ConstMatMap<T>(col.data(), rows, cols);
    add_bias(out, bias.value());

    return x.tape->record(std::move(out), {x, weight, bias}, [x, weight, bias, g, oh, ow](Tape<T>& tape, int self) {
        const Shape xs = x.shape();
        const Shape ws = weight.shape();
        const int rows = xs.channels * g.kernel * g.kernel;
        const int cols = oh * ow;
        const Tensor<T>& gout = tape.grad(self);
        ConstMatMap<T> gmat(gout.data(), ws.channels, cols);
        if (weight.requires_grad() || x.requires_grad()) {
            Buffer<T> col(static_cast<std::size_t>(rows) * cols);
            if (weight.requires_grad()) {
                im2col(x.value().data(), xs.channels, xs.height, xs.width, g, oh, ow, col.data());
                MatMap<T>(tape.grad(weight).data(), ws.channels, rows).noalias() +=
                    gmat * ConstMatMap<T>(col.data(), rows, cols).transpose();
            }
            if (x.requires_grad()) {
                MatMap<T>(col.data(), rows, cols).noalias() =
                    ConstMatMap<T>(weight.value().data(), ws.channels, rows).transpose() * gmat;
                col2im(col.data(), xs.channels, xs.height, xs.width, g, oh, ow, tape.grad(x).data());
            }
        }
        if (bias.requires_grad()) accumulate_bias_grad(tape.grad(bias), gout);
    });
}

template <class T>
Var<T> conv_transpose2d(Var<T> x, Var<T> weight, Var<T> bias, ConvGeometry g) {
    const Shape xs = x.shape();
    const Shape ws = weight.shape();
    const int kk = g.kernel * g.kernel;
    CTDSR_REQUIRE(ws.channels == xs.channels && ws.width == kk && ws.height > 0,
            "conv_transpose2d: weight " + to_string(ws) + " incompatible with input " + to_string(xs));
    const int cout = ws.height;
    CTDSR_REQUIRE((bias.shape() == Shape{cout, 1, 1}), "conv_transpose2d: bias shape " + to_string(bias.shape()));
    const int oh = (xs.height - 1) * g.stride - 2 * g.pad + g.kernel;
    const int ow = (xs.width - 1) * g.stride - 2 * g.pad + g.kernel;
    CTDSR_REQUIRE(oh > 0 && ow > 0 && conv_out(oh, g) == xs.height && conv_out(ow, g) == xs.width,
            "conv_transpose2d: geometry does not invert for input " + to_string(xs));
    if (phase_decomposable(g)) return conv_transpose2d_phased(x, weight, bias, g, oh, ow);

    const int rows = cout * kk;
    const int cols = xs.height * xs.width;
    Buffer<T> col(static_cast<std::size_t>(rows) * cols);
    MatMap<T>(col.data(), rows, cols).noalias() =
        ConstMatMap<T>(weight.value().data(), xs.channels, rows).transpose() *
        ConstMatMap<T>(x.value().data(), xs.channels, cols);
    Tensor<T> out(cout, oh, ow);
    col2im(col.data(), cout, oh, ow, g, xs.height, xs.width, out.data());
    add_bias(out, bias.value());

    return x.tape->record(std::move(out), {x, weight, bias}, [x, weight, bias, g, oh, ow](Tape<T>& tape, int self) {
        const Shape xs = x.shape();
        const int cout = weight.shape().height;
        const int rows = cout * g.kernel * g.kernel;
        const int cols = xs.height * xs.width;
        const Tensor<T>& gout = tape.grad(self);
        if (weight.requires_grad() || x.requires_grad()) {
            Buffer<T> col(static_cast<std::size_t>(rows) * cols);
            im2col(gout.data(), cout, oh, ow, g, xs.height, xs.width, col.data());
            ConstMatMap<T> cmat(col.data(), rows, cols);
            if (x.requires_grad()) {
                MatMap<T>(tape.grad(x).data(), xs.channels, cols).noalias() +=
                    ConstMatMap<T>(weight.value().data(), xs.channels, rows) * cmat;
            }
            if (weight.requires_grad()) {
                MatMap<T>(tape.grad(weight).data(), xs.channels, rows).noalias() +=
                    ConstMatMap<T>(x.value().data(), xs.channels, cols) * cmat.transpose();
            }
        }
        if (bias.requires_grad()) accumulate_bias_grad(tape.grad(bias), gout);
    });
}

template <class T>
Var<T> relu(Var<T> x) {
    Tensor<T> out = x.value();
    for (auto& v : out.values()) v = v > T(0) ? v : T(0);
    return x.tape->record(std::move(out), {x}, [x](Tape<T>& tape, int self) {
        const Tensor<T>& gout = tape.grad(self);
        const Tensor<T>& in = x.value();
        Tensor<T>& gx = tape.grad(x);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += in[i] > T(0) ? gout[i] : T(0);
    });
}

template <class T>
Var<T> sigmoid(Var<T> x) {
    Tensor<T> out = x.value();
    for (auto& v : out.values()) v = T(1) / (T(1) + std::exp(-v));
    return x.tape->record(std::move(out), {x}, [x](Tape<T>& tape, int self) {
        const Tensor<T>& y = tape.value(Var<T>{&tape, self});
        const Tensor<T>& gout = tape.grad(self);
        Tensor<T>& gx = tape.grad(x);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gout[i] * y[i] * (T(1) - y[i]);
    });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
    check_same(a, b, "add");
    Tensor<T> out = a.value();
    const Tensor<T>& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& tape, int self) {
        const Tensor<T>& gout = tape.grad(self);
        for (Var<T> v : {a, b}) {
            if (!v.requires_grad()) continue;
            Tensor<T>& g = tape.grad(v);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[i];
        }
    });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
    check_same(a, b, "sub");
    Tensor<T> out = a.value();
    const Tensor<T>& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& tape, int self) {
        const Tensor<T>& gout = tape.grad(self);
        if (a.requires_grad()) {
            Tensor<T>& g = tape.grad(a);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[i];
        }
        if (b.requires_grad()) {
            Tensor<T>& g = tape.grad(b);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= gout[i];
        }
    });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
    check_same(a, b, "mul");
    Tensor<T> out = a.value();
    const Tensor<T>& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& tape, int self) {
        const Tensor<T>& gout = tape.grad(self);
        if (a.requires_grad()) {
            Tensor<T>& g = tape.grad(a);
            const Tensor<T>& bv = b.value();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[i] * bv[i];
        }
        if (b.requires_grad()) {
            Tensor<T>& g = tape.grad(b);
            const Tensor<T>& av = a.value();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[i] * av[i];
        }
    });
}

template <class T>
Var<T> scale(Var<T> x, T factor) {
    Tensor<T> out = x.value();
    for (auto& v : out.values()) v *= factor;
    return x.tape->record(std::move(out), {x}, [x, factor](Tape<T>& tape, int self) {
        const Tensor<T>& gout = tape.grad(self);
        Tensor<T>& g = tape.grad(x);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * gout[i];
    });
}

template <class T>
Var<T> gate(Var<T> f, Var<T> u) {
    const Shape fs = f.shape();
    const Shape us = u.shape();
    CTDSR_REQUIRE(us.channels == 1 && us.height == fs.height && us.width == fs.width,
            "gate: attention map " + to_string(us) + " does not match feature " + to_string(fs));
    Tensor<T> out = f.value();
    const Tensor<T>& uv = u.value();
    const std::size_t plane = fs.plane();
    for (int c = 0; c < fs.channels; ++c) {
        T* p = out.channel(c);
        for (std::size_t i = 0; i < plane; ++i) p[i] *= T(1) + uv[i];
    }
    return f.tape->record(std::move(out), {f, u}, [f, u](Tape<T>& tape, int self) {
        const Tensor<T>& gout = tape.grad(self);
        const std::size_t plane = f.shape().plane();
        const int channels = f.shape().channels;
        if (f.requires_grad()) {
            Tensor<T>& g = tape.grad(f);
            const Tensor<T>& uv = u.value();
            for (int c = 0; c < channels; ++c) {
                for (std::size_t i = 0; i < plane; ++i) g[c * plane + i] += gout[c * plane + i] * (T(1) + uv[i]);
            }
        }
        if (u.requires_grad()) {
            Tensor<T>& g = tape.grad(u);
            const Tensor<T>& fv = f.value();
            for (int c = 0; c < channels; ++c) {
                for (std::size_t i = 0; i < plane; ++i) g[i] += gout[c * plane + i] * fv[c * plane + i];
            }
        }
    });
}

template <class T>
Var<T> concat(Var<T> a, Var<T> b) {
    const Shape as = a.shape();
    const Shape bs = b.shape();
    CTDSR_REQUIRE(as.height == bs.height && as.width == bs.width,
            "concat: spatial mismatch " + to_string(as) + " vs " + to_string(bs));
    Tensor<T> out(as.channels + bs.channels, as.height, as.width);
    std::copy_n(a.value().data(), as.size(), out.data());
    std::copy_n(b.value().data(), bs.size(), out.data() + as.size());
    return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& tape, int self) {
        const Tensor<T>& gout = tape.grad(self);
        const std::size_t na = a.shape().size();
        if (a.requires_grad()) {
            Tensor<T>& g = tape.grad(a);
            for (std::size_t i = 0; i < na; ++i) g[i] += gout[i];
        }
        if (b.requires_grad()) {
            Tensor<T>& g = tape.grad(b);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[na + i];
        }
    });
}

template <class T>
Var<T> avg_pool_to(Var<T> x, int out_h, int out_w) {
    const Shape xs = x.shape();
    CTDSR_REQUIRE(out_h > 0 && out_w > 0 && xs.height % out_h == 0 && xs.width % out_w == 0,
            "avg_pool_to: " + to_string(xs) + " not divisible into " + std::to_string(out_h) + "x" +
                std::to_string(out_w));
    const int fy = xs.height / out_h;
    const int fx = xs.width / out_w;
    if (fy == 1 && fx == 1) return x;
    const T inv = T(1) / static_cast<T>(fy * fx);
    Tensor<T> out(xs.channels, out_h, out_w);
    const Tensor<T>& in = x.value();
    for (int c = 0; c < xs.channels; ++c) {
        for (int y = 0; y < xs.height; ++y) {
            for (int xx = 0; xx < xs.width; ++xx) out(c, y / fy, xx / fx) += in(c, y, xx);
        }
    }
    for (auto& v : out.values()) v *= inv;
    return x.tape->record(std::move(out), {x}, [x, fy, fx, inv](Tape<T>& tape, int self) {
        const Tensor<T>& gout = tape.grad(self);
        Tensor<T>& g = tape.grad(x);
        const Shape xs = x.shape();
        for (int c = 0; c < xs.channels; ++c) {
            for (int y = 0; y < xs.height; ++y) {
                for (int xx = 0; xx < xs.width; ++xx) g(c, y, xx) += gout(c, y / fy, xx / fx) * inv;
            }
        }
    });
}

template <class T>
Var<T> affinity(Var<T> x) {
    const Shape xs = x.shape();
    const int n = static_cast<int>(xs.plane());
    CTDSR_REQUIRE(n > 0 && xs.channels > 0, "affinity: empty feature " + to_string(xs));
    // x viewed as (C, n); logits are x^T x.
    ConstMatMap<T> feat(x.value().data(), xs.channels, n);
    Tensor<T> out(1, n, n);
    MatMap<T> a(out.data(), n, n);
    a.noalias() = feat.transpose() * feat;
    for (int i = 0; i < n; ++i) {
        auto row = a.row(i);
        const T mx = row.maxCoeff();
        row = (row.array() - mx).exp();
        row /= row.sum();
    }
    return x.tape->record(std::move(out), {x}, [x, n](Tape<T>& tape, int self) {
        const Shape xs = x.shape();
        ConstMatMap<T> a(tape.value(Var<T>{&tape, self}).data(), n, n);
        ConstMatMap<T> ga(tape.grad(self).data(), n, n);
        RowMat<T> glogit = a.cwiseProduct(ga);
        const Eigen::Matrix<T, Eigen::Dynamic, 1> rowdot = glogit.rowwise().sum();
        glogit -= a.cwiseProduct(rowdot.replicate(1, n));
        const RowMat<T> sym = glogit + glogit.transpose();
        ConstMatMap<T> feat(x.value().data(), xs.channels, n);
        MatMap<T>(tape.grad(x).data(), xs.channels, n).noalias() += feat * sym;
    });
}

template <class T>
Var<T> l1_mean(Var<T> a, Var<T> b) {
    check_same(a, b, "l1_mean");
    const Tensor<T>& av = a.value();
    const Tensor<T>& bv = b.value();
    CTDSR_REQUIRE(av.size() > 0, "l1_mean: empty input");
    double sum = 0;
    for (std::size_t i = 0; i < av.size(); ++i) sum += std::abs(static_cast<double>(av[i]) - bv[i]);
    const auto out = Tensor<T>::scalar(static_cast<T>(sum / static_cast<double>(av.size())));
    return a.tape->record(out, {a, b}, [a, b](Tape<T>& tape, int self) {
        const T g = tape.grad(self)[0] / static_cast<T>(a.value().size());
        const Tensor<T>& av = a.value();
        const Tensor<T>& bv = b.value();
        auto sign = [](T r) { return r > T(0) ? T(1) : (r < T(0) ? T(-1) : T(0)); };
        if (a.requires_grad()) {
            Tensor<T>& ga = tape.grad(a);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * sign(av[i] - bv[i]);
        }
        if (b.requires_grad()) {
            Tensor<T>& gb = tape.grad(b);
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g * sign(av[i] - bv[i]);
        }
    });
}

template <class T>
Var<T> ssim(Var<T> a, Var<T> b, const SsimOptions& opt) {
    check_same(a, b, "ssim");
    const Shape s = a.shape();
    CTDSR_REQUIRE(s.channels == 1, "ssim: expects single-channel rasters, got " + to_string(s));
    CTDSR_REQUIRE(s.height >= opt.window && s.width >= opt.window,
            "ssim: raster " + to_string(s) + " smaller than the " + std::to_string(opt.window) + "x" +
                std::to_string(opt.window) + " window");
    const int h = s.height;
    const int w = s.width;
    const auto g = gaussian_taps(opt.window, opt.sigma);
    const double c1 = (opt.k1 * opt.dynamic_range) * (opt.k1 * opt.dynamic_range);
    const double c2 = (opt.k2 * opt.dynamic_range) * (opt.k2 * opt.dynamic_range);

    std::vector<double> av(a.value().values().begin(), a.value().values().end());
    std::vector<double> bv(b.value().values().begin(), b.value().values().end());
    std::vector<double> aa(av.size());
    std::vector<double> bb(av.size());
    std::vector<double> ab(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) {
        aa[i] = av[i] * av[i];
        bb[i] = bv[i] * bv[i];
        ab[i] = av[i] * bv[i];
    }
    const auto mu_a = filter_valid(av, h, w, g);
    const auto mu_b = filter_valid(bv, h, w, g);
    const auto e_aa = filter_valid(aa, h, w, g);
    const auto e_bb = filter_valid(bb, h, w, g);
    const auto e_ab = filter_valid(ab, h, w, g);
    const std::size_t m = mu_a.size();

    // Per-window partial derivatives of the SSIM map w.r.t. the five moments.
    std::vector<double> d_mu_a(m);
    std::vector<double> d_mu_b(m);
    std::vector<double> d_e_aa(m);
    std::vector<double> d_e_bb(m);
    std::vector<double> d_e_ab(m);
    double total = 0;
    for (std::size_t i = 0; i < m; ++i) {
        const double ma = mu_a[i];
        const double mb = mu_b[i];
        const double var_a = e_aa[i] - ma * ma;
        const double var_b = e_bb[i] - mb * mb;
        const double cov = e_ab[i] - ma * mb;
        const double num1 = (ma * mb) * 2.0 + c1;
        const double num2 = cov * 2.0 + c2;
        const double den1 = ma * ma + mb * mb + c1;
        const double den2 = var_a + var_b + c2;
        const double den = den1 * den2;
        const double value = (num1 * num2) / den;
        total += value;
        // d value = (d num1 * num2 + num1 * d num2) / den - value * (d den1 * den2 + den1 * d den2) / den
        d_mu_a[i] = (2.0 * mb * num2 + num1 * (-2.0 * mb)) / den - value * (2.0 * ma * den2 + den1 * (-2.0 * ma)) / den;
        d_mu_b[i] = (2.0 * ma * num2 + num1 * (-2.0 * ma)) / den - value * (2.0 * mb * den2 + den1 * (-2.0 * mb)) / den;
        d_e_ab[i] = num1 * 2.0 / den;
        d_e_aa[i] = -value * den1 / den;
        d_e_bb[i] = d_e_aa[i];
    }
    const auto out = Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(m)));

    return a.tape->record(out, {a, b},
                          [a, b, h, w, g, m, d_mu_a = std::move(d_mu_a), d_mu_b = std::move(d_mu_b),
                           d_e_aa = std::move(d_e_aa), d_e_bb = std::move(d_e_bb),
                           d_e_ab = std::move(d_e_ab)](Tape<T>& tape, int self) {
                              const double scale_factor = static_cast<double>(tape.grad(self)[0]) / static_cast<double>(m);
                              const auto back_mu_a = filter_valid_adjoint(d_mu_a, h, w, g);
                              const auto back_mu_b = filter_valid_adjoint(d_mu_b, h, w, g);
                              const auto back_aa = filter_valid_adjoint(d_e_aa, h, w, g);
                              const auto back_bb = filter_valid_adjoint(d_e_bb, h, w, g);
                              const auto back_ab = filter_valid_adjoint(d_e_ab, h, w, g);
                              const Tensor<T>& av = a.value();
                              const Tensor<T>& bv = b.value();
                              if (a.requires_grad()) {
                                  Tensor<T>& ga = tape.grad(a);
                                  for (std::size_t i = 0; i < ga.size(); ++i) {
                                      ga[i] += static_cast<T>(scale_factor * (back_mu_a[i] + 2.0 * av[i] * back_aa[i] +
                                                                              bv[i] * back_ab[i]));
                                  }
                              }
                              if (b.requires_grad()) {
                                  Tensor<T>& gb = tape.grad(b);
                                  for (std::size_t i = 0; i < gb.size(); ++i) {
                                      gb[i] += static_cast<T>(scale_factor * (back_mu_b[i] + 2.0 * bv[i] * back_bb[i] +
                                                                              av[i] * back_ab[i]));
                                  }
                              }
                          });
}

#define CTDSR_INSTANTIATE_OPS(T)                                                  \
    template Var<T> conv2d(Var<T>, Var<T>, Var<T>, ConvGeometry);                 \
    template Var<T> conv_transpose2d(Var<T>, Var<T>, Var<T>, ConvGeometry);       \
    template Var<T> relu(Var<T>);                                                 \
    template Var<T> sigmoid(Var<T>);                                              \
    template Var<T> add(Var<T>, Var<T>);                                          \
    template Var<T> sub(Var<T>, Var<T>);                                          \
    template Var<T> mul(Var<T>, Var<T>);                                          \
    template Var<T> scale(Var<T>, T);                                             \
    template Var<T> gate(Var<T>, Var<T>);                                         \
    template Var<T> concat(Var<T>, Var<T>);                                       \
    template Var<T> avg_pool_to(Var<T>, int, int);                                \
    template Var<T> affinity(Var<T>);                                             \
    template Var<T> l1_mean(Var<T>, Var<T>);                                      \
    template Var<T> ssim(Var<T>, Var<T>, const SsimOptions&);

CTDSR_INSTANTIATE_OPS(float)
CTDSR_INSTANTIATE_OPS(double)

}  // namespace ops
}  // namespace ctdsr
