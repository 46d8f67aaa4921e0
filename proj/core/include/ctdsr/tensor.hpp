// Copyright (c) 2026 The ctdsr Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense channel-major rasters. Every image, feature map, weight and scalar in
// the library is a Tensor<T> of shape (channels, height, width).

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctdsr {

struct Shape {
    int channels = 0;
    int height = 0;
    int width = 0;

    [[nodiscard]] std::size_t size() const noexcept {
        return static_cast<std::size_t>(channels) * height * width;
    }
    [[nodiscard]] std::size_t plane() const noexcept {
        return static_cast<std::size_t>(height) * width;
    }
    friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

// Storage starts on a cache-line boundary so vectorised kernels take the same
// path, and round the same way, wherever a tensor happens to be allocated.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

    template <class U>
    bool operator==(const AlignedAllocator<U>&) const noexcept {
        return true;
    }
};

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.size(), fill) {
        if (shape.channels < 0 || shape.height < 0 || shape.width < 0) {
            throw ShapeError("negative tensor extent " + to_string(shape));
        }
    }
    Tensor(int channels, int height, int width, T fill = T(0))
        : Tensor(Shape{channels, height, width}, fill) {}

    static Tensor scalar(T v) { return Tensor(1, 1, 1, v); }

    [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
    [[nodiscard]] int channels() const noexcept { return shape_.channels; }
    [[nodiscard]] int height() const noexcept { return shape_.height; }
    [[nodiscard]] int width() const noexcept { return shape_.width; }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
    [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }

    T* channel(int c) noexcept { return data_.data() + static_cast<std::size_t>(c) * shape_.plane(); }
    const T* channel(int c) const noexcept {
        return data_.data() + static_cast<std::size_t>(c) * shape_.plane();
    }

    T& operator()(int c, int y, int x) noexcept { return data_[index(c, y, x)]; }
    const T& operator()(int c, int y, int x) const noexcept { return data_[index(c, y, x)]; }
    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    [[nodiscard]] T item() const {
        if (data_.size() != 1) throw ShapeError("item() on non-scalar tensor " + to_string(shape_));
        return data_[0];
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    // Same storage reinterpreted under a new shape of equal size.
    void reshape(Shape s) {
        if (s.size() != data_.size()) {
            throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(s));
        }
        shape_ = s;
    }

    template <class U>
    [[nodiscard]] Tensor<U> cast() const {
        Tensor<U> out(shape_);
        std::transform(data_.begin(), data_.end(), out.data(), [](T v) { return static_cast<U>(v); });
        return out;
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    [[nodiscard]] std::size_t index(int c, int y, int x) const noexcept {
        return (static_cast<std::size_t>(c) * shape_.height + y) * shape_.width + x;
    }

    Shape shape_{};
    std::vector<T, AlignedAllocator<T>> data_;
};

// FNV-1a over the raw bytes; used for parameter checksums in tests and logs.
template <class T>
std::uint64_t checksum(const Tensor<T>& t, std::uint64_t seed = 0xcbf29ce484222325ULL) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.data());
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < t.size() * sizeof(T); ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace ctdsr
