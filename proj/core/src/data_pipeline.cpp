// Copyright (c) 2026 The ctdsr Authors
// SPDX-License-Identifier: Apache-2.0

#include "ctdsr/data_pipeline.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <map>
#include <numbers>

#include "ctdsr/image_io.hpp"
#include "ctdsr/random.hpp"

namespace ctdsr {

bool is_supported_scale(int scale) noexcept {
    return std::find(std::begin(kSupportedScales), std::end(kSupportedScales), scale) != std::end(kSupportedScales);
}

void validate(const TrainingSample& s) {
    if (!is_supported_scale(s.scale)) {
        throw DataError("unsupported scale " + std::to_string(s.scale) + " (supported: 2, 4, 8, 16)");
    }
    if (s.d_hr.height() != s.d_lr.height() * s.scale || s.d_hr.width() != s.d_lr.width() * s.scale) {
        throw DataError("HR depth " + to_string(s.d_hr.tensor().shape()) + " is not LR depth " +
                        to_string(s.d_lr.tensor().shape()) + " x" + std::to_string(s.scale));
    }
    if (!same_extent(s.rgb, s.d_hr.height(), s.d_hr.width()) ||
        !same_extent(s.s_gt, s.d_hr.height(), s.d_hr.width())) {
        throw DataError("RGB / structure rasters do not match the HR depth extent");
    }
}

// ---------------------------------------------------------------------------
// Loading

namespace {

constexpr const char* kColorSuffix = "_color";
constexpr const char* kDepthSuffix = "_depth";

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

void fill_invalid_nearest(DepthMap& depth) {
    const int h = depth.height();
    const int w = depth.width();
    std::vector<int> owner(static_cast<std::size_t>(h) * w, -1);
    std::deque<int> frontier;
    for (int i = 0; i < h * w; ++i) {
        const float v = depth.tensor()[i];
        if (std::isfinite(v) && v > 0.0f) {
            owner[i] = i;
            frontier.push_back(i);
        }
    }
    if (frontier.empty()) return;
    constexpr std::array<std::array<int, 2>, 4> kSteps{{{-1, 0}, {0, -1}, {0, 1}, {1, 0}}};
    while (!frontier.empty()) {
        const int i = frontier.front();
        frontier.pop_front();
        const int y = i / w;
        const int x = i % w;
        for (const auto& [dy, dx] : kSteps) {
            const int ny = y + dy;
            const int nx = x + dx;
            if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
            const int j = ny * w + nx;
            if (owner[j] >= 0) continue;
            owner[j] = owner[i];
            frontier.push_back(j);
        }
    }
    for (int i = 0; i < h * w; ++i) depth.tensor()[i] = depth.tensor()[owner[i]];
}

LoadedDataset load_rgbd_pairs(const std::filesystem::path& dir, DepthFormat format) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw io::IoError("'" + dir.string() + "' is not a readable directory");
    const std::string depth_ext = format == DepthFormat::pfm ? ".pfm" : ".png";

    std::map<std::string, fs::path> colors;
    std::map<std::string, fs::path> depths;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const fs::path& p = entry.path();
        const std::string stem = p.stem().string();
        if (ends_with(stem, kColorSuffix) && p.extension() == ".png") {
            colors[stem.substr(0, stem.size() - 6)] = p;
        } else if (ends_with(stem, kDepthSuffix) && p.extension() == depth_ext) {
            depths[stem.substr(0, stem.size() - 6)] = p;
        }
    }
    for (const auto& [stem, path] : colors) {
        if (!depths.contains(stem)) {
            throw DataError("'" + path.filename().string() + "' has no partner: expected " + stem + kDepthSuffix +
                            depth_ext);
        }
    }
    for (const auto& [stem, path] : depths) {
        if (!colors.contains(stem)) {
            throw DataError("'" + path.filename().string() + "' has no partner: expected " + stem + kColorSuffix +
                            ".png");
        }
    }

    LoadedDataset out;
    std::vector<Tensor<float>> raw_depths;
    for (const auto& [stem, color_path] : colors) {
        const io::PngImage color = io::read_png(color_path);
        Tensor<float> depth = format == DepthFormat::pfm ? io::read_pfm(depths[stem])
                                                         : io::read_png(depths[stem]).values;
        if (depth.channels() != 1) {
            throw DataError("'" + depths[stem].string() + "' must be single-channel");
        }
        if (color.values.channels() != 3) {
            throw DataError("'" + color_path.string() + "' must be an RGB image");
        }
        if (color.values.height() != depth.height() || color.values.width() != depth.width()) {
            throw DataError("'" + stem + "': colour " + to_string(color.values.shape()) + " and depth " +
                            to_string(depth.shape()) + " extents differ");
        }
        Tensor<float> rgb = color.values;
        const float cmax = color.bit_depth == 16 ? 65535.0f : 255.0f;
        for (auto& v : rgb.values()) v /= cmax;
        for (float v : depth.values()) {
            if (std::isfinite(v)) out.depth_max = std::max(out.depth_max, v);
        }
        out.pairs.push_back(RgbdPair{stem, RgbImage(std::move(rgb)), DepthMap(1, 1)});
        raw_depths.push_back(std::move(depth));
    }
    for (std::size_t i = 0; i < out.pairs.size(); ++i) {
        Tensor<float>& d = raw_depths[i];
        for (auto& v : d.values()) {
            v = (std::isfinite(v) && v > 0.0f && out.depth_max > 0.0f) ? v / out.depth_max : 0.0f;
        }
        out.pairs[i].depth = DepthMap(std::move(d));
        fill_invalid_nearest(out.pairs[i].depth);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Resampling

namespace {

double bicubic_kernel(double x) {
    constexpr double a = -0.5;
    x = std::abs(x);
    if (x < 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    if (x < 2.0) return (((x - 5.0) * x + 8.0) * x - 4.0) * a;
    return 0.0;
}

struct Taps {
    std::vector<int> first;
    std::vector<std::vector<double>> weights;
};

Taps resample_taps(int in_size, int out_size) {
    const double scale = static_cast<double>(in_size) / out_size;
    const double filter_scale = std::max(scale, 1.0);
    const double support = 2.0 * filter_scale;
    Taps taps;
    taps.first.resize(out_size);
    taps.weights.resize(out_size);
    for (int o = 0; o < out_size; ++o) {
        const double center = (o + 0.5) * scale;
        const int lo = std::max(static_cast<int>(center - support + 0.5), 0);
        const int hi = std::min(static_cast<int>(center + support + 0.5), in_size);
        std::vector<double> w(std::max(hi - lo, 0));
        double total = 0;
        for (int i = 0; i < hi - lo; ++i) {
            w[i] = bicubic_kernel((i + lo - center + 0.5) / filter_scale);
            total += w[i];
        }
        if (total != 0.0) {
            for (auto& v : w) v /= total;
        }
        taps.first[o] = lo;
        taps.weights[o] = std::move(w);
    }
    return taps;
}

}  // namespace

Tensor<float> resample_bicubic(const Tensor<float>& src, int out_height, int out_width) {
    if (out_height < 1 || out_width < 1) throw DataError("resample target must be at least 1x1");
    const Taps tx = resample_taps(src.width(), out_width);
    const Taps ty = resample_taps(src.height(), out_height);
    Tensor<float> horizontal(src.channels(), src.height(), out_width);
    for (int c = 0; c < src.channels(); ++c) {
        for (int y = 0; y < src.height(); ++y) {
            for (int x = 0; x < out_width; ++x) {
                double s = 0;
                const auto& w = tx.weights[x];
                for (std::size_t i = 0; i < w.size(); ++i) s += src(c, y, tx.first[x] + static_cast<int>(i)) * w[i];
                horizontal(c, y, x) = static_cast<float>(s);
            }
        }
    }
    Tensor<float> out(src.channels(), out_height, out_width);
    for (int c = 0; c < src.channels(); ++c) {
        for (int y = 0; y < out_height; ++y) {
            const auto& w = ty.weights[y];
            for (int x = 0; x < out_width; ++x) {
                double s = 0;
                for (std::size_t i = 0; i < w.size(); ++i) {
                    s += horizontal(c, ty.first[y] + static_cast<int>(i), x) * w[i];
                }
                out(c, y, x) = static_cast<float>(s);
            }
        }
    }
    return out;
}

DepthMap bicubic_downsample(const DepthMap& d_hr, int scale) {
    if (scale < 1) throw DataError("scale must be positive");
    if (d_hr.height() % scale != 0 || d_hr.width() % scale != 0) {
        throw DataError("depth map " + std::to_string(d_hr.height()) + "x" + std::to_string(d_hr.width()) +
                        " is not divisible by scale " + std::to_string(scale) + "; crop it first");
    }
    return DepthMap(resample_bicubic(d_hr.tensor(), d_hr.height() / scale, d_hr.width() / scale));
}

DepthMap bicubic_upsample(const DepthMap& d_lr, int scale) {
    if (scale < 1) throw DataError("scale must be positive");
    return DepthMap(resample_bicubic(d_lr.tensor(), d_lr.height() * scale, d_lr.width() * scale));
}

StructureMap compute_structure_gt(const DepthMap& d_hr) {
    const int h = d_hr.height();
    const int w = d_hr.width();
    StructureMap out(h, w);
    auto at = [&](int y, int x) {
        return static_cast<double>(d_hr.at(std::clamp(y, 0, h - 1), std::clamp(x, 0, w - 1)));
    };
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double v = 4.0 * at(y, x) - at(y - 1, x) - at(y + 1, x) - at(y, x - 1) - at(y, x + 1);
            out.at(y, x) = static_cast<float>(v);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Samples

namespace {

template <int C, class Tag>
Raster<C, Tag> crop(const Raster<C, Tag>& src, int y0, int x0, int size) {
    Tensor<float> t(C, size, size);
    for (int c = 0; c < C; ++c) {
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) t(c, y, x) = src.at(c, y0 + y, x0 + x);
        }
    }
    return Raster<C, Tag>(std::move(t));
}

template <int C, class Tag>
Raster<C, Tag> rotate180(const Raster<C, Tag>& src) {
    Tensor<float> t = src.tensor();
    for (int c = 0; c < C; ++c) {
        float* p = t.channel(c);
        std::reverse(p, p + t.shape().plane());
    }
    return Raster<C, Tag>(std::move(t));
}

}  // namespace

TrainingSample make_sample(const RgbImage& rgb, const DepthMap& d_hr, int scale, PatchOrigin origin) {
    if (!is_supported_scale(scale)) {
        throw DataError("unsupported scale " + std::to_string(scale) + " (supported: 2, 4, 8, 16)");
    }
    if (!same_extent(rgb, d_hr.height(), d_hr.width())) {
        throw DataError("RGB and depth extents differ for '" + origin.source + "'");
    }
    TrainingSample s{bicubic_downsample(d_hr, scale), d_hr, rgb, compute_structure_gt(d_hr), scale,
                     std::move(origin)};
    return s;
}

std::vector<TrainingSample> extract_patches(const std::vector<RgbdPair>& pairs, int patch_size, int count,
                                            int scale, std::uint64_t seed) {
    if (count < 0) throw DataError("patch count must be non-negative");
    if (!is_supported_scale(scale)) {
        throw DataError("unsupported scale " + std::to_string(scale) + " (supported: 2, 4, 8, 16)");
    }
    if (patch_size < scale || patch_size % scale != 0) {
        throw DataError("patch size " + std::to_string(patch_size) + " must be a multiple of scale " +
                        std::to_string(scale));
    }
    for (const auto& p : pairs) {
        if (p.depth.height() < patch_size || p.depth.width() < patch_size) {
            throw DataError("image '" + p.name + "' (" + std::to_string(p.depth.height()) + "x" +
                            std::to_string(p.depth.width()) + ") is smaller than patch size " +
                            std::to_string(patch_size));
        }
    }
    std::vector<TrainingSample> out;
    if (count == 0) return out;
    if (pairs.empty()) throw DataError("cannot extract patches from an empty dataset");
    out.reserve(count);
    Rng rng(seed);
    for (int i = 0; i < count; ++i) {
        const auto& pair = pairs[rng.integer(0, static_cast<int>(pairs.size()) - 1)];
        const int y = rng.integer(0, pair.depth.height() - patch_size);
        const int x = rng.integer(0, pair.depth.width() - patch_size);
        out.push_back(make_sample(crop(pair.rgb, y, x, patch_size), crop(pair.depth, y, x, patch_size), scale,
                                  PatchOrigin{pair.name, y, x, false}));
    }
    return out;
}

TrainingSample augment_rotate180(const TrainingSample& s) {
    PatchOrigin origin = s.origin;
    origin.rotated = !origin.rotated;
    return TrainingSample{rotate180(s.d_lr), rotate180(s.d_hr), rotate180(s.rgb), rotate180(s.s_gt), s.scale,
                          std::move(origin)};
}

// ---------------------------------------------------------------------------
// Toy scenes

namespace {

// Jet-like colour map; injective on [0, 1] so colour determines depth.
std::array<float, 3> depth_colour(double d) {
    auto ramp = [](double v) { return static_cast<float>(std::clamp(1.5 - std::abs(v), 0.0, 1.0)); };
    return {ramp(4.0 * d - 3.0), ramp(4.0 * d - 2.0), ramp(4.0 * d - 1.0)};
}

struct Shape2d {
    bool disc = false;
    double cy = 0, cx = 0;
    double ry = 0, rx = 0;  // half extents, or radius in ry for discs
    double depth = 0;
    bool camouflaged = false;
    double stripe_freq = 0, stripe_angle = 0, stripe_phase = 0;
    [[nodiscard]] bool contains(double y, double x) const {
        if (disc) return (y - cy) * (y - cy) + (x - cx) * (x - cx) <= ry * ry;
        return std::abs(y - cy) <= ry && std::abs(x - cx) <= rx;
    }
};

}  // namespace

ToyScene generate_toy_scene(std::uint64_t seed, int size) {
    if (size < 32) throw DataError("toy scene size must be at least 32, got " + std::to_string(size));
    Rng rng(mix_seed(seed, 0x70795c3e));
    const double s = size;

    const double base = rng.uniform(0.72, 0.82);
    const double slope_x = rng.uniform(-0.12, 0.12);
    const double slope_y = rng.uniform(-0.12, 0.12);

    // Distinct depth planes, painted far to near.
    std::vector<double> levels;
    for (int i = 0; i < 10; ++i) levels.push_back(0.10 + 0.05 * i);
    const int n = rng.integer(3, 8);
    for (int i = 0; i < n; ++i) std::swap(levels[i], levels[rng.integer(i, 9)]);
    std::vector<Shape2d> shapes(n);
    for (int i = 0; i < n; ++i) {
        Shape2d& sh = shapes[i];
        sh.depth = levels[i];
        sh.disc = rng.uniform() < 0.5;
        sh.cy = rng.uniform(0.1, 0.9) * s;
        sh.cx = rng.uniform(0.1, 0.9) * s;
        if (sh.disc) {
            sh.ry = rng.uniform(0.10, 0.25) * s;
        } else {
            sh.ry = rng.uniform(0.08, 0.25) * s;
            sh.rx = rng.uniform(0.08, 0.25) * s;
        }
        sh.camouflaged = rng.uniform() < 0.1;
        sh.stripe_freq = rng.uniform(0.15, 0.45);
        sh.stripe_angle = rng.uniform(0.0, std::numbers::pi);
        sh.stripe_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
    std::sort(shapes.begin(), shapes.end(), [](const Shape2d& a, const Shape2d& b) { return a.depth > b.depth; });
    const double texture_amplitude = 0.06;
    const double noise_amplitude = 0.02;

    ToyScene scene{RgbImage(size, size), DepthMap(size, size), n};
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const double background = std::clamp(base + slope_x * (x / s - 0.5) + slope_y * (y / s - 0.5), 0.0, 1.0);
            double depth = background;
            const Shape2d* top = nullptr;
            for (const auto& sh : shapes) {
                if (sh.contains(y + 0.5, x + 0.5)) {
                    depth = sh.depth;
                    top = &sh;
                }
            }
            auto colour = depth_colour(top != nullptr && top->camouflaged ? background : depth);
            double texture = 0;
            if (top != nullptr) {
                const double u = std::cos(top->stripe_angle) * x + std::sin(top->stripe_angle) * y;
                texture = std::sin(top->stripe_freq * u + top->stripe_phase) > 0.0 ? texture_amplitude
                                                                                    : -texture_amplitude;
            }
            for (int c = 0; c < 3; ++c) {
                const double noise = noise_amplitude * (2.0 * rng.uniform() - 1.0);
                scene.rgb.at(c, y, x) = static_cast<float>(std::clamp(colour[c] + texture + noise, 0.0, 1.0));
            }
            scene.depth.at(y, x) = static_cast<float>(depth);
        }
    }
    return scene;
}

std::vector<TrainingSample> make_toy_samples(std::uint64_t seed, int count, int size, int scale) {
    std::vector<TrainingSample> out;
    out.reserve(std::max(count, 0));
    for (int i = 0; i < count; ++i) {
        ToyScene scene = generate_toy_scene(mix_seed(seed, static_cast<std::uint64_t>(i)), size);
        out.push_back(make_sample(scene.rgb, scene.depth, scale,
                                  PatchOrigin{"toy-" + std::to_string(seed) + "-" + std::to_string(i), 0, 0, false}));
    }
    return out;
}

}  // namespace ctdsr
