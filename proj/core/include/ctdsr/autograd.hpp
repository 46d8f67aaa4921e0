// Copyright (c) 2026 The ctdsr Authors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation over a per-forward-pass tape.
//
// Nodes are appended in evaluation order; backward() walks them in reverse.
// A node only carries a backward closure when at least one of its inputs
// requires a gradient, so a forward pass over frozen parameters records no
// differentiable path at all. Gradients for trainable parameters are
// accumulated into Param::grad.

#pragma once

#include <deque>
#include <functional>
#include <initializer_list>

#include "ctdsr/params.hpp"
#include "ctdsr/tensor.hpp"

namespace ctdsr {

template <class T>
class Tape;

template <class T>
struct Var {
    Tape<T>* tape = nullptr;
    int id = -1;

    [[nodiscard]] bool valid() const noexcept { return tape != nullptr && id >= 0; }
    [[nodiscard]] const Tensor<T>& value() const { return tape->value(*this); }
    [[nodiscard]] const Shape& shape() const { return tape->value(*this).shape(); }
    [[nodiscard]] bool requires_grad() const { return tape->requires_grad(*this); }
};

template <class T>
class Tape {
public:
    using Backward = std::function<void(Tape&, int self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var<T> constant(Tensor<T> value) { return push(std::move(value), false, nullptr, nullptr); }

    // Differentiable input whose gradient can be read back with grad().
    Var<T> input(Tensor<T> value) { return push(std::move(value), true, nullptr, nullptr); }

    // Parameters read from a store; frozen ones behave as constants.
    Var<T> parameter(Param<T>& p, bool trainable) {
        return push(p.value, trainable, nullptr, trainable ? &p : nullptr);
    }

    Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, Backward backward) {
        bool needs = false;
        for (const auto& v : inputs) needs = needs || requires_grad(v);
        return push(std::move(value), needs, needs ? std::move(backward) : Backward{}, nullptr);
    }

    [[nodiscard]] const Tensor<T>& value(Var<T> v) const { return nodes_.at(v.id).value; }
    [[nodiscard]] bool requires_grad(Var<T> v) const { return nodes_.at(v.id).requires_grad; }

    // Gradient buffer of a node, allocated as zeros on first access.
    Tensor<T>& grad(Var<T> v) { return grad(v.id); }
    Tensor<T>& grad(int id) {
        Node& n = nodes_.at(id);
        if (n.grad.empty() && !n.value.empty()) n.grad = Tensor<T>(n.value.shape());
        return n.grad;
    }
    [[nodiscard]] bool has_grad(int id) const { return !nodes_.at(id).grad.empty(); }

    // Seeds d(root)/d(root) = 1 and propagates to every reachable input.
    void backward(Var<T> root) {
        if (root.value().size() != 1) {
            throw ShapeError("backward() root must be a scalar, got " + to_string(root.shape()));
        }
        if (!requires_grad(root)) return;
        grad(root)[0] += T(1);
        for (int id = root.id; id >= 0; --id) {
            Node& n = nodes_[id];
            if (!n.requires_grad || n.grad.empty()) continue;
            if (n.backward) n.backward(*this, id);
            if (n.param != nullptr) {
                auto& g = n.param->grad;
                if (g.empty()) g = Tensor<T>(n.param->value.shape());
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
            }
        }
    }

    [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }
    void clear() { nodes_.clear(); }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool requires_grad = false;
        Backward backward;
        Param<T>* param = nullptr;
    };

    Var<T> push(Tensor<T> value, bool requires_grad, Backward backward, Param<T>* param) {
        nodes_.push_back(Node{std::move(value), {}, requires_grad, std::move(backward), param});
        return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
    }

    std::deque<Node> nodes_;
};

}  // namespace ctdsr
