// Copyright (c) 2026 The ctdsr Authors
// SPDX-License-Identifier: Apache-2.0
//
// PNG (8/16-bit, via libpng) and PFM readers/writers. Values are returned
// raw (no normalisation): 0..255 or 0..65535 for PNG, stored floats for PFM.

#pragma once

#include <filesystem>
#include <stdexcept>

#include "ctdsr/tensor.hpp"

namespace ctdsr::io {

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct PngImage {
    Tensor<float> values;  // (channels, H, W), raw sample values
    int bit_depth = 8;
};

// Grey and grey+alpha decode to one channel; RGB(A) and palette to three.
PngImage read_png(const std::filesystem::path& path);

// Writes 1- or 3-channel data, rounding and clamping to the sample range.
void write_png(const std::filesystem::path& path, const Tensor<float>& values, int bit_depth);

// Single-channel ("Pf") or colour ("PF") PFM; rows stored bottom-to-top.
Tensor<float> read_pfm(const std::filesystem::path& path);
void write_pfm(const std::filesystem::path& path, const Tensor<float>& values);

}  // namespace ctdsr::io
