// Copyright (c) 2026 The ctdsr Authors
// SPDX-License-Identifier: Apache-2.0
//
// Named-tensor archive shared by checkpoints and sample shards.
//
//   "CTDSRAR1"            8-byte magic
//   u64 header_bytes      little-endian
//   header                UTF-8 JSON: {"meta": {...}, "tensors": [{name, shape}]}
//   tensor data           float32 little-endian, in header order
//   u32 crc32             over every preceding byte
//
// Writes go to "<path>.tmp" and are renamed into place.

#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ctdsr/tensor.hpp"

namespace ctdsr {

class ArchiveError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct NamedTensor {
    std::string name;
    Tensor<float> value;
};

struct Archive {
    std::string meta_json = "{}";  // free-form metadata object
    std::vector<NamedTensor> tensors;

    [[nodiscard]] const Tensor<float>* find(const std::string& name) const;
};

void write_archive(const std::filesystem::path& path, const Archive& archive);

// Verifies magic, framing and checksum before returning anything.
Archive read_archive(const std::filesystem::path& path);

std::uint32_t crc32_of(const void* data, std::size_t bytes, std::uint32_t seed = 0);
std::uint32_t crc32_of_file(const std::filesystem::path& path);

}  // namespace ctdsr
