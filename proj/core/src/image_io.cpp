// Copyright (c) 2026 The ctdsr Authors
// SPDX-License-Identifier: Apache-2.0

#include "ctdsr/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

namespace ctdsr::io {
namespace {

struct FileCloser {
    void operator()(std::FILE* f) const noexcept {
        if (f != nullptr) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) throw IoError("cannot open '" + path.string() + "': " + std::strerror(errno));
    return f;
}

[[noreturn]] void png_fail(png_structp png, png_const_charp msg) {
    auto* where = static_cast<std::string*>(png_get_error_ptr(png));
    if (where != nullptr) *where = msg;
    png_longjmp(png, 1);
}

}  // namespace

PngImage read_png(const std::filesystem::path& path) {
    FilePtr file = open_file(path, "rb");
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
        throw IoError("'" + path.string() + "' is not a PNG file");
    }
    std::string error;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &error, png_fail, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (png == nullptr || info == nullptr) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng initialisation failed for '" + path.string() + "'");
    }

    PngImage out;
    std::vector<png_bytep> rows;
    std::vector<unsigned char> buffer;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("failed to decode '" + path.string() + "': " + error);
    }
    png_init_io(png, file.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    const png_byte color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) {
        png_set_tRNS_to_alpha(png);
        png_set_strip_alpha(png);
    }
    if (depth == 16 && std::endian::native == std::endian::little) png_set_swap(png);
    png_read_update_info(png, info);

    depth = png_get_bit_depth(png, info);
    const int channels = png_get_channels(png, info);
    const int width = static_cast<int>(png_get_image_width(png, info));
    const int height = static_cast<int>(png_get_image_height(png, info));
    const std::size_t stride = png_get_rowbytes(png, info);
    buffer.resize(stride * height);
    rows.resize(height);
    for (int y = 0; y < height; ++y) rows[y] = buffer.data() + stride * y;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    if (channels != 1 && channels != 3) {
        throw IoError("'" + path.string() + "': unsupported channel layout (" + std::to_string(channels) + ")");
    }
    out.bit_depth = depth;
    out.values = Tensor<float>(channels, height, width);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            for (int c = 0; c < channels; ++c) {
                const std::size_t i = static_cast<std::size_t>(x) * channels + c;
                float v;
                if (depth == 16) {
                    std::uint16_t s;
                    std::memcpy(&s, rows[y] + 2 * i, 2);
                    v = static_cast<float>(s);
                } else {
                    v = static_cast<float>(rows[y][i]);
                }
                out.values(c, y, x) = v;
            }
        }
    }
    return out;
}

void write_png(const std::filesystem::path& path, const Tensor<float>& values, int bit_depth) {
    if (bit_depth != 8 && bit_depth != 16) throw IoError("PNG bit depth must be 8 or 16");
    const int channels = values.channels();
    if (channels != 1 && channels != 3) throw IoError("PNG output needs 1 or 3 channels");
    const int width = values.width();
    const int height = values.height();
    const int bytes = bit_depth / 8;
    const double max_value = bit_depth == 16 ? 65535.0 : 255.0;

    std::vector<unsigned char> buffer(static_cast<std::size_t>(width) * height * channels * bytes);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            for (int c = 0; c < channels; ++c) {
                const double v = std::clamp(std::round(static_cast<double>(values(c, y, x))), 0.0, max_value);
                const auto s = static_cast<unsigned>(v);
                const std::size_t i = ((static_cast<std::size_t>(y) * width + x) * channels + c) * bytes;
                if (bytes == 2) {
                    buffer[i] = static_cast<unsigned char>(s >> 8);
                    buffer[i + 1] = static_cast<unsigned char>(s & 0xff);
                } else {
                    buffer[i] = static_cast<unsigned char>(s);
                }
            }
        }
    }

    FilePtr file = open_file(path, "wb");
    std::string error;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &error, png_fail, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (png == nullptr || info == nullptr) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng initialisation failed for '" + path.string() + "'");
    }
    std::vector<png_bytep> rows(height);
    for (int y = 0; y < height; ++y) {
        rows[y] = buffer.data() + static_cast<std::size_t>(y) * width * channels * bytes;
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("failed to encode '" + path.string() + "': " + error);
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, width, height, bit_depth, channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Tensor<float> read_pfm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::string magic;
    int width = 0;
    int height = 0;
    double scale = 0;
    in >> magic >> width >> height >> scale;
    if (!in || (magic != "Pf" && magic != "PF") || width <= 0 || height <= 0 || scale == 0) {
        throw IoError("'" + path.string() + "' has a malformed PFM header");
    }
    in.get();  // single whitespace byte before the raster
    const int channels = magic == "PF" ? 3 : 1;
    const bool little = scale < 0;
    std::vector<float> raw(static_cast<std::size_t>(width) * height * channels);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(raw.size() * sizeof(float))) {
        throw IoError("'" + path.string() + "' is truncated");
    }
    if (little != (std::endian::native == std::endian::little)) {
        for (auto& v : raw) v = std::bit_cast<float>(__builtin_bswap32(std::bit_cast<std::uint32_t>(v)));
    }
    Tensor<float> out(channels, height, width);
    for (int y = 0; y < height; ++y) {
        const int src_row = height - 1 - y;
        for (int x = 0; x < width; ++x) {
            for (int c = 0; c < channels; ++c) {
                out(c, y, x) = raw[(static_cast<std::size_t>(src_row) * width + x) * channels + c];
            }
        }
    }
    return out;
}

void write_pfm(const std::filesystem::path& path, const Tensor<float>& values) {
    const int channels = values.channels();
    if (channels != 1 && channels != 3) throw IoError("PFM output needs 1 or 3 channels");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    const bool little = std::endian::native == std::endian::little;
    out << (channels == 3 ? "PF" : "Pf") << "\n"
        << values.width() << " " << values.height() << "\n"
        << (little ? "-1.0" : "1.0") << "\n";
    std::vector<float> raw(values.size());
    for (int y = 0; y < values.height(); ++y) {
        const int dst_row = values.height() - 1 - y;
        for (int x = 0; x < values.width(); ++x) {
            for (int c = 0; c < channels; ++c) {
                raw[(static_cast<std::size_t>(dst_row) * values.width() + x) * channels + c] = values(c, y, x);
            }
        }
    }
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size() * sizeof(float)));
    if (!out) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace ctdsr::io
