// Copyright (c) 2026 The ctdsr Authors
// SPDX-License-Identifier: Apache-2.0
//
// Cross-task distillation between the depth super-resolution (DSR) and depth
// estimation (DE) networks. Each epoch the network with the lower mean
// recovery error becomes the teacher; the distillation terms below are only
// ever differentiated with respect to the student.

#pragma once

#include <vector>

#include "ctdsr/autograd.hpp"
#include "ctdsr/raster.hpp"

namespace ctdsr {

enum class Role { dsr, de };
const char* to_string(Role r);

struct RoleAssignment {
    Role teacher = Role::dsr;
    Role student = Role::de;
    double e_dsr = 0;
    double e_de = 0;
};

// (1 / HW) * sum |pred - gt|.
double mean_abs_error(const DepthMap& pred, const DepthMap& gt);

// DSR teaches when e_dsr <= e_de (ties included), DE otherwise. Throws
// std::domain_error on NaN, negative or infinite errors.
RoleAssignment select_roles(double e_dsr, double e_de);

// Row-stochastic pixel affinity of a feature after average pooling it to
// pool_size x pool_size. Returns a (1, n, n) tensor, n = pool_size^2.
template <class T>
Var<T> affinity(Var<T> feature, int pool_size);
template <class T>
Tensor<T> affinity(const Tensor<T>& feature, int pool_size);

// (1 / N) * sum_i mean |D_sr^i - D_de^i|.
template <class T>
Var<T> output_space_loss(const std::vector<Var<T>>& sr_outputs, const std::vector<Var<T>>& de_outputs);

// (1 / N) * sum_i mean |A(F_sr^i) - A(F_de^i)|.
template <class T>
Var<T> affinity_space_loss(const std::vector<Var<T>>& sr_features, const std::vector<Var<T>>& de_features,
                           int pool_size);

// l_o + gamma * l_a.
template <class T>
Var<T> distill_loss(Var<T> l_o, Var<T> l_a, double gamma);
double distill_loss(double l_o, double l_a, double gamma);

// Tape-free variants.
double output_space_loss(const std::vector<Tensor<double>>& sr_outputs, const std::vector<Tensor<double>>& de_outputs);
double affinity_space_loss(const std::vector<Tensor<double>>& sr_features,
                           const std::vector<Tensor<double>>& de_features, int pool_size);

}  // namespace ctdsr
