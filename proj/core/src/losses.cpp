// Copyright (c) 2026 The ctdsr Authors
// SPDX-License-Identifier: Apache-2.0

#include "ctdsr/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ctdsr {

void validate(const LossWeights& w) {
    std::string bad;
    if (!(w.gamma >= 0)) bad += " gamma";
    if (!(w.lambda >= 0 && w.lambda <= 1)) bad += " lambda";
    if (!(w.rho1 >= 0)) bad += " rho1";
    if (!(w.rho2 >= 0)) bad += " rho2";
    if (!bad.empty()) throw std::invalid_argument("invalid loss weight(s):" + bad);
}

template <class T>
Var<T> dsr_loss(Var<T> d_sr, Var<T> d_hr) {
    return ops::l1_mean(d_sr, d_hr);
}

template <class T>
Var<T> de_loss(Var<T> d_de, Var<T> d_hr, double lambda) {
    Var<T> l1 = ops::l1_mean(d_de, d_hr);
    if (lambda == 0.0) return l1;
    Var<T> s = ops::ssim(d_de, d_hr);
    // lambda * (1 - s) / 2 = lambda / 2 - (lambda / 2) * s
    Tape<T>& tape = *d_de.tape;
    Var<T> ssim_term = ops::sub(tape.constant(Tensor<T>::scalar(static_cast<T>(lambda / 2))),
                                ops::scale(s, static_cast<T>(lambda / 2)));
    return ops::add(ssim_term, ops::scale(l1, static_cast<T>(1.0 - lambda)));
}

template <class T>
Var<T> total_student_loss(Var<T> task_loss, Var<T> l_struc, Var<T> l_distill, const LossWeights& w) {
    Var<T> out = task_loss;
    if (l_struc.valid() && w.rho1 != 0.0) out = ops::add(out, ops::scale(l_struc, static_cast<T>(w.rho1)));
    if (l_distill.valid() && w.rho2 != 0.0) out = ops::add(out, ops::scale(l_distill, static_cast<T>(w.rho2)));
    return out;
}

namespace {

void require_same(const DepthMap& a, const DepthMap& b, const char* what) {
    if (a.height() != b.height() || a.width() != b.width()) {
        throw ShapeError(std::string(what) + ": dimension mismatch " + to_string(a.tensor().shape()) + " vs " +
                         to_string(b.tensor().shape()));
    }
}

}  // namespace

double dsr_loss(const DepthMap& d_sr, const DepthMap& d_hr) {
    require_same(d_sr, d_hr, "dsr_loss");
    return mad_metric(d_sr, d_hr, 1.0);
}

double ssim(const DepthMap& a, const DepthMap& b) {
    require_same(a, b, "ssim");
    Tape<double> tape;
    return ops::ssim(tape.constant(a.tensor().cast<double>()), tape.constant(b.tensor().cast<double>()))
        .value()
        .item();
}

double de_loss(const DepthMap& d_de, const DepthMap& d_hr, double lambda) {
    require_same(d_de, d_hr, "de_loss");
    Tape<double> tape;
    return de_loss(tape.constant(d_de.tensor().cast<double>()), tape.constant(d_hr.tensor().cast<double>()), lambda)
        .value()
        .item();
}

double total_student_loss(double task_loss, double l_struc, double l_distill, const LossWeights& w) {
    return task_loss + w.rho1 * l_struc + w.rho2 * l_distill;
}

double mad_metric(const DepthMap& pred, const DepthMap& gt, double unit_scale) {
    require_same(pred, gt, "mad_metric");
    double sum = 0;
    const auto& p = pred.tensor();
    const auto& g = gt.tensor();
    for (std::size_t i = 0; i < p.size(); ++i) {
        sum += std::abs(static_cast<double>(p[i]) * unit_scale - static_cast<double>(g[i]) * unit_scale);
    }
    return sum / static_cast<double>(p.size());
}

double rmse_metric(const DepthMap& pred, const DepthMap& gt, double unit_scale) {
    require_same(pred, gt, "rmse_metric");
    double sum = 0;
    const auto& p = pred.tensor();
    const auto& g = gt.tensor();
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double d = static_cast<double>(p[i]) * unit_scale - static_cast<double>(g[i]) * unit_scale;
        sum += d * d;
    }
    return std::sqrt(sum / static_cast<double>(p.size()));
}

#define CTDSR_INSTANTIATE_LOSSES(T)                                                      \
    template Var<T> dsr_loss(Var<T>, Var<T>);                                            \
    template Var<T> de_loss(Var<T>, Var<T>, double);                                     \
    template Var<T> total_student_loss(Var<T>, Var<T>, Var<T>, const LossWeights&);

CTDSR_INSTANTIATE_LOSSES(float)
CTDSR_INSTANTIATE_LOSSES(double)

}  // namespace ctdsr
