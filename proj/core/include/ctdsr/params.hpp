// Copyright (c) 2026 The ctdsr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctdsr/random.hpp"
#include "ctdsr/tensor.hpp"

namespace ctdsr {

template <class T>
struct Param {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;  // empty until a backward pass touches it
};

// Named parameter tensors keyed by layer path ("up1.deconv0.weight").
// Insertion order is stable and defines serialization order.
template <class T>
class ParamStore {
public:
    ParamStore() = default;
    ParamStore(const ParamStore& other) { *this = other; }
    ParamStore& operator=(const ParamStore& other) {
        if (this == &other) return *this;
        params_.clear();
        index_.clear();
        for (const auto& p : other.params_) add(p->name, p->value);
        return *this;
    }
    ParamStore(ParamStore&&) noexcept = default;
    ParamStore& operator=(ParamStore&&) noexcept = default;

    Param<T>& add(const std::string& name, Tensor<T> value) {
        if (index_.contains(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
        index_[name] = params_.size();
        params_.push_back(std::make_unique<Param<T>>(Param<T>{name, std::move(value), {}}));
        return *params_.back();
    }

    [[nodiscard]] bool contains(const std::string& name) const { return index_.contains(name); }

    Param<T>& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
        return *params_[it->second];
    }
    const Param<T>& at(const std::string& name) const {
        return const_cast<ParamStore*>(this)->at(name);
    }

    [[nodiscard]] std::size_t size() const noexcept { return params_.size(); }
    [[nodiscard]] std::size_t element_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p->value.size();
        return n;
    }

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.cbegin(); }
    auto end() const { return params_.cend(); }

    void zero_grad() {
        for (auto& p : params_) p->grad = Tensor<T>();
    }

    [[nodiscard]] std::uint64_t checksum() const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (const auto& p : params_) h = ctdsr::checksum(p->value, h);
        return h;
    }

    template <class U>
    [[nodiscard]] ParamStore<U> cast() const {
        ParamStore<U> out;
        for (const auto& p : params_) out.add(p->name, p->value.template cast<U>());
        return out;
    }

private:
    std::vector<std::unique_ptr<Param<T>>> params_;
    std::map<std::string, std::size_t> index_;
};

// Fan-in scaled normal weights (He), zero biases.
template <class T>
Tensor<T> he_normal(Shape shape, int fan_in, Rng& rng) {
    Tensor<T> t(shape);
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : t.values()) v = static_cast<T>(stddev * rng.normal());
    return t;
}

}  // namespace ctdsr
