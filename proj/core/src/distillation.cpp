// Copyright (c) 2026 The ctdsr Authors
// SPDX-License-Identifier: Apache-2.0

#include "ctdsr/distillation.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "ctdsr/losses.hpp"
#include "ctdsr/ops.hpp"

namespace ctdsr {

const char* to_string(Role r) { return r == Role::dsr ? "DSR" : "DE"; }

double mean_abs_error(const DepthMap& pred, const DepthMap& gt) { return mad_metric(pred, gt, 1.0); }

RoleAssignment select_roles(double e_dsr, double e_de) {
    auto check = [](double e, const char* name) {
        if (std::isnan(e)) throw std::domain_error(std::string(name) + " is NaN; training has diverged");
        if (!std::isfinite(e) || e < 0) throw std::domain_error(std::string(name) + " must be finite and >= 0");
    };
    check(e_dsr, "e_dsr");
    check(e_de, "e_de");
    if (e_dsr <= e_de) return {Role::dsr, Role::de, e_dsr, e_de};
    return {Role::de, Role::dsr, e_dsr, e_de};
}

template <class T>
Var<T> affinity(Var<T> feature, int pool_size) {
    const Shape s = feature.shape();
    if (pool_size < 1 || pool_size > std::min(s.height, s.width)) {
        throw ShapeError("affinity: pool size " + std::to_string(pool_size) + " must be in [1, min(h, w)] for " +
                         to_string(s));
    }
    return ops::affinity(ops::avg_pool_to(feature, pool_size, pool_size));
}

template <class T>
Tensor<T> affinity(const Tensor<T>& feature, int pool_size) {
    Tape<T> tape;
    return affinity(tape.constant(feature), pool_size).value();
}

namespace {

template <class T>
void require_pairs(std::size_t a, std::size_t b, const char* what) {
    if (a != b) {
        throw ShapeError(std::string(what) + ": list lengths differ (" + std::to_string(a) + " vs " +
                         std::to_string(b) + ")");
    }
    if (a == 0) throw ShapeError(std::string(what) + ": empty lists");
}

}  // namespace

template <class T>
Var<T> output_space_loss(const std::vector<Var<T>>& sr_outputs, const std::vector<Var<T>>& de_outputs) {
    require_pairs<T>(sr_outputs.size(), de_outputs.size(), "output_space_loss");
    Var<T> sum = ops::l1_mean(sr_outputs[0], de_outputs[0]);
    for (std::size_t i = 1; i < sr_outputs.size(); ++i) sum = ops::add(sum, ops::l1_mean(sr_outputs[i], de_outputs[i]));
    return ops::scale(sum, T(1) / static_cast<T>(sr_outputs.size()));
}

template <class T>
Var<T> affinity_space_loss(const std::vector<Var<T>>& sr_features, const std::vector<Var<T>>& de_features,
                           int pool_size) {
    require_pairs<T>(sr_features.size(), de_features.size(), "affinity_space_loss");
    Var<T> sum;
    for (std::size_t i = 0; i < sr_features.size(); ++i) {
        if (sr_features[i].shape() != de_features[i].shape()) {
            throw ShapeError("affinity_space_loss: feature " + std::to_string(i + 1) + " shapes differ " +
                             to_string(sr_features[i].shape()) + " vs " + to_string(de_features[i].shape()));
        }
        Var<T> term = ops::l1_mean(affinity(sr_features[i], pool_size), affinity(de_features[i], pool_size));
        sum = sum.valid() ? ops::add(sum, term) : term;
    }
    return ops::scale(sum, T(1) / static_cast<T>(sr_features.size()));
}

template <class T>
Var<T> distill_loss(Var<T> l_o, Var<T> l_a, double gamma) {
    if (gamma == 0.0 || !l_a.valid()) return l_o;
    return ops::add(l_o, ops::scale(l_a, static_cast<T>(gamma)));
}

double distill_loss(double l_o, double l_a, double gamma) { return l_o + gamma * l_a; }

double output_space_loss(const std::vector<Tensor<double>>& sr_outputs, const std::vector<Tensor<double>>& de_outputs) {
    Tape<double> tape;
    std::vector<Var<double>> a;
    std::vector<Var<double>> b;
    for (const auto& t : sr_outputs) a.push_back(tape.constant(t));
    for (const auto& t : de_outputs) b.push_back(tape.constant(t));
    return output_space_loss(a, b).value().item();
}

double affinity_space_loss(const std::vector<Tensor<double>>& sr_features,
                           const std::vector<Tensor<double>>& de_features, int pool_size) {
    Tape<double> tape;
    std::vector<Var<double>> a;
    std::vector<Var<double>> b;
    for (const auto& t : sr_features) a.push_back(tape.constant(t));
    for (const auto& t : de_features) b.push_back(tape.constant(t));
    return affinity_space_loss(a, b, pool_size).value().item();
}

#define CTDSR_INSTANTIATE_DISTILL(T)                                                                  \
    template Var<T> affinity(Var<T>, int);                                                            \
    template Tensor<T> affinity(const Tensor<T>&, int);                                               \
    template Var<T> output_space_loss(const std::vector<Var<T>>&, const std::vector<Var<T>>&);        \
    template Var<T> affinity_space_loss(const std::vector<Var<T>>&, const std::vector<Var<T>>&, int); \
    template Var<T> distill_loss(Var<T>, Var<T>, double);

CTDSR_INSTANTIATE_DISTILL(float)
CTDSR_INSTANTIATE_DISTILL(double)

}  // namespace ctdsr
