// Copyright (c) 2026 The ctdsr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <utility>

#include "ctdsr/tensor.hpp"

namespace ctdsr {

// A float raster with a fixed channel count. The tag keeps depth maps,
// structure maps and colour images from being passed for one another.
template <int Channels, class Tag>
class Raster {
public:
    static constexpr int kChannels = Channels;

    Raster() = default;
    Raster(int height, int width, float fill = 0.0f) : values_(Channels, height, width, fill) {
        if (height < 1 || width < 1) {
            throw ShapeError("raster extent must be at least 1x1, got " + std::to_string(height) + "x" +
                             std::to_string(width));
        }
    }
    explicit Raster(Tensor<float> values) : values_(std::move(values)) {
        if (values_.channels() != Channels) {
            throw ShapeError("expected " + std::to_string(Channels) + " channel(s), got tensor " +
                             to_string(values_.shape()));
        }
        if (values_.height() < 1 || values_.width() < 1) {
            throw ShapeError("raster extent must be at least 1x1, got " + to_string(values_.shape()));
        }
    }

    [[nodiscard]] int height() const noexcept { return values_.height(); }
    [[nodiscard]] int width() const noexcept { return values_.width(); }
    [[nodiscard]] bool empty() const noexcept { return values_.empty(); }

    [[nodiscard]] const Tensor<float>& tensor() const noexcept { return values_; }
    Tensor<float>& tensor() noexcept { return values_; }

    float& at(int y, int x) noexcept
        requires(Channels == 1)
    {
        return values_(0, y, x);
    }
    [[nodiscard]] float at(int y, int x) const noexcept
        requires(Channels == 1)
    {
        return values_(0, y, x);
    }
    float& at(int c, int y, int x) noexcept { return values_(c, y, x); }
    [[nodiscard]] float at(int c, int y, int x) const noexcept { return values_(c, y, x); }

    friend bool operator==(const Raster&, const Raster&) = default;

private:
    Tensor<float> values_;
};

struct DepthTag {};
struct RgbTag {};
struct StructureTag {};

// Depth normalised to [0, 1].
using DepthMap = Raster<1, DepthTag>;
// Colour in [0, 1], channels R, G, B.
using RgbImage = Raster<3, RgbTag>;
// High-frequency response of a depth map; signed.
using StructureMap = Raster<1, StructureTag>;

template <int C, class Tag>
bool same_extent(const Raster<C, Tag>& r, int height, int width) {
    return r.height() == height && r.width() == width;
}

}  // namespace ctdsr
