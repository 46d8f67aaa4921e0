// Copyright (c) 2026 The ctdsr Authors
// SPDX-License-Identifier: Apache-2.0

#include "ctdsr/evaluate.hpp"

#include <cstdio>
#include <sstream>

#include "ctdsr/losses.hpp"
#include "ctdsr/trainer.hpp"
#include "json.hpp"

namespace ctdsr {
namespace {

DepthMap crop_to_multiple(const DepthMap& d, int scale) {
    const int h = d.height() - d.height() % scale;
    const int w = d.width() - d.width() % scale;
    if (h == 0 || w == 0) {
        throw DataError("scene of " + std::to_string(d.height()) + "x" + std::to_string(d.width()) +
                        " is smaller than the scale x" + std::to_string(scale));
    }
    if (h == d.height() && w == d.width()) return d;
    DepthMap out(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) out.at(y, x) = d.at(y, x);
    }
    return out;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

}  // namespace

EvalReport evaluate(const std::vector<RgbdPair>& scenes, const DepthModel& model, int scale, double unit_scale) {
    if (!is_supported_scale(scale)) {
        throw DataError("unsupported scale " + std::to_string(scale) + " (supported: 2, 4, 8, 16)");
    }
    if (scenes.empty()) throw DataError("no scenes to evaluate");
    EvalReport report{scale, unit_scale, {}, {"mean", 0, 0, 0, 0}};
    for (const auto& scene : scenes) {
        const DepthMap hr = crop_to_multiple(scene.depth, scale);
        const DepthMap lr = bicubic_downsample(hr, scale);
        const DepthMap bic = bicubic_upsample(lr, scale);
        EvalRow row{scene.name, 0, 0, mad_metric(bic, hr, unit_scale), rmse_metric(bic, hr, unit_scale)};
        if (model) {
            const DepthMap pred = model(lr);
            row.mad = mad_metric(pred, hr, unit_scale);
            row.rmse = rmse_metric(pred, hr, unit_scale);
        } else {
            row.mad = row.bicubic_mad;
            row.rmse = row.bicubic_rmse;
        }
        report.rows.push_back(row);
    }
    const double n = static_cast<double>(report.rows.size());
    for (const auto& r : report.rows) {
        report.mean.mad += r.mad / n;
        report.mean.rmse += r.rmse / n;
        report.mean.bicubic_mad += r.bicubic_mad / n;
        report.mean.bicubic_rmse += r.bicubic_rmse / n;
    }
    return report;
}

EvalReport evaluate(const std::vector<RgbdPair>& scenes, const NetworkParams<float>* dsr, int scale,
                    double unit_scale) {
    if (dsr == nullptr) return evaluate(scenes, DepthModel{}, scale, unit_scale);
    if (dsr->arch.scale != scale) {
        throw ConfigError("scale mismatch: checkpoint is x" + std::to_string(dsr->arch.scale) +
                          ", evaluation asks for x" + std::to_string(scale));
    }
    return evaluate(scenes, [dsr, scale](const DepthMap& lr) { return infer(lr, *dsr, scale); }, scale, unit_scale);
}

std::string to_text_table(const EvalReport& report) {
    std::vector<std::vector<std::string>> cells{{"scene", "MAD", "RMSE", "bicubic MAD", "bicubic RMSE"}};
    auto add = [&](const EvalRow& r) {
        cells.push_back({r.scene, fmt(r.mad), fmt(r.rmse), fmt(r.bicubic_mad), fmt(r.bicubic_rmse)});
    };
    for (const auto& r : report.rows) add(r);
    add(report.mean);
    std::vector<std::size_t> width(cells[0].size(), 0);
    for (const auto& row : cells) {
        for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
    }
    std::ostringstream os;
    os << "x" << report.scale << " (unit scale " << report.unit_scale << ")\n";
    for (std::size_t r = 0; r < cells.size(); ++r) {
        if (r + 1 == cells.size()) {
            for (std::size_t i = 0; i < width.size(); ++i) os << (i ? "  " : "") << std::string(width[i], '-');
            os << '\n';
        }
        for (std::size_t i = 0; i < cells[r].size(); ++i) {
            const std::string& c = cells[r][i];
            if (i == 0) {
                os << c << std::string(width[i] - c.size(), ' ');
            } else {
                os << "  " << std::string(width[i] - c.size(), ' ') << c;
            }
        }
        os << '\n';
    }
    return os.str();
}

std::string to_json(const EvalReport& report) {
    auto row = [](const EvalRow& r) {
        return nlohmann::json{{"scene", r.scene},
                              {"mad", r.mad},
                              {"rmse", r.rmse},
                              {"bicubic_mad", r.bicubic_mad},
                              {"bicubic_rmse", r.bicubic_rmse}};
    };
    nlohmann::json j{{"scale", report.scale}, {"unit_scale", report.unit_scale}, {"rows", nlohmann::json::array()}};
    for (const auto& r : report.rows) j["rows"].push_back(row(r));
    j["mean"] = row(report.mean);
    return j.dump(2);
}

std::string to_csv(const EvalReport& report) {
    std::ostringstream os;
    os.precision(17);
    os << "scene,mad,rmse,bicubic_mad,bicubic_rmse\n";
    auto line = [&](const EvalRow& r) {
        os << r.scene << ',' << r.mad << ',' << r.rmse << ',' << r.bicubic_mad << ',' << r.bicubic_rmse << '\n';
    };
    for (const auto& r : report.rows) line(r);
    line(report.mean);
    return os.str();
}

}  // namespace ctdsr
