// Copyright (c) 2026 The ctdsr Authors
// SPDX-License-Identifier: Apache-2.0

#include "ctdsr/networks.hpp"

#include <cmath>

#include "ctdsr/random.hpp"

namespace ctdsr {

void validate(const ArchConfig& arch) {
    if (arch.scale != 2 && arch.scale != 4 && arch.scale != 8 && arch.scale != 16) {
        throw ConfigError("unsupported scale " + std::to_string(arch.scale) + " (supported: 2, 4, 8, 16)");
    }
    if (arch.stages < 1) throw ConfigError("stage count must be at least 1");
    if (arch.channels < 2) throw ConfigError("feature channels must be at least 2");
    if (arch.residual_units < 1) throw ConfigError("residual units per stage must be at least 1");
    if (arch.sp_width < 0) throw ConfigError("SPNet width must be non-negative");
}

const char* to_string(NetworkKind kind) {
    switch (kind) {
        case NetworkKind::dsr: return "dsr";
        case NetworkKind::de: return "de";
        case NetworkKind::sp: return "sp";
        case NetworkKind::uncertainty: return "uncertainty";
    }
    return "?";
}

std::vector<ops::ConvGeometry> projection_steps(int scale) {
    switch (scale) {
        case 2: return {{6, 2, 2}};
        case 4: return {{8, 4, 2}};
        case 8: return {{12, 8, 2}};
        case 16: return {{8, 4, 2}, {8, 4, 2}};
        default: throw ConfigError("unsupported scale " + std::to_string(scale) + " (supported: 2, 4, 8, 16)");
    }
}

namespace {

constexpr ops::ConvGeometry k3{3, 1, 1};
constexpr ops::ConvGeometry k1{1, 1, 0};

template <class T>
void add_conv(ParamStore<T>& store, const std::string& name, int cin, int cout, int kernel, Rng& rng) {
    store.add(name + ".weight", he_normal<T>({cout, cin, kernel * kernel}, cin * kernel * kernel, rng));
    store.add(name + ".bias", Tensor<T>(cout, 1, 1));
}

template <class T>
void add_deconv(ParamStore<T>& store, const std::string& name, int cin, int cout, const ops::ConvGeometry& g,
                Rng& rng) {
    // Each output pixel sees about (k / s)^2 taps per input channel.
    const int fan_in = std::max(1, cin * (g.kernel / g.stride) * (g.kernel / g.stride));
    store.add(name + ".weight", he_normal<T>({cin, cout, g.kernel * g.kernel}, fan_in, rng));
    store.add(name + ".bias", Tensor<T>(cout, 1, 1));
}

std::string step_name(const std::string& base, std::size_t i, std::size_t n) {
    return n == 1 ? base : base + "." + std::to_string(i);
}

template <class T>
void add_upsampler(ParamStore<T>& store, const std::string& name, int channels, int scale, Rng& rng) {
    const auto steps = projection_steps(scale);
    for (std::size_t i = 0; i < steps.size(); ++i) {
        add_deconv(store, step_name(name, i, steps.size()), channels, channels, steps[i], rng);
    }
}

template <class T>
void add_downsampler(ParamStore<T>& store, const std::string& name, int channels, int scale, Rng& rng) {
    const auto steps = projection_steps(scale);
    for (std::size_t i = 0; i < steps.size(); ++i) {
        add_conv(store, step_name(name, i, steps.size()), channels, channels, steps[i].kernel, rng);
    }
}

template <class T>
void add_side_heads(ParamStore<T>& store, const ArchConfig& arch, Rng& rng) {
    const int half = std::max(1, arch.channels / 2);
    for (int n = 1; n <= arch.stages; ++n) {
        add_conv(store, "side" + std::to_string(n) + ".0", arch.channels, half, 3, rng);
        add_conv(store, "side" + std::to_string(n) + ".1", half, 1, 1, rng);
    }
}

template <class T>
struct Binder {
    NetworkParams<T>& params;
    Tape<T>& tape;
    bool trainable;

    Var<T> get(const std::string& name) { return tape.parameter(params.store.at(name), trainable); }

    Var<T> conv(Var<T> x, const std::string& name, ops::ConvGeometry g) {
        return ops::conv2d(x, get(name + ".weight"), get(name + ".bias"), g);
    }
    Var<T> deconv(Var<T> x, const std::string& name, ops::ConvGeometry g) {
        return ops::conv_transpose2d(x, get(name + ".weight"), get(name + ".bias"), g);
    }
    Var<T> up(Var<T> x, const std::string& name) {
        const auto steps = projection_steps(params.arch.scale);
        for (std::size_t i = 0; i < steps.size(); ++i) {
            if (i > 0) x = ops::relu(x);
            x = deconv(x, step_name(name, i, steps.size()), steps[i]);
        }
        return x;
    }
    Var<T> down(Var<T> x, const std::string& name) {
        const auto steps = projection_steps(params.arch.scale);
        for (std::size_t i = 0; i < steps.size(); ++i) {
            if (i > 0) x = ops::relu(x);
            x = conv(x, step_name(name, i, steps.size()), steps[i]);
        }
        return x;
    }
};

void check_kind(NetworkKind have, NetworkKind want) {
    if (have != want) {
        throw ConfigError(std::string("expected ") + to_string(want) + " parameters, got " + to_string(have));
    }
}

}  // namespace

template <class T>
NetworkParams<T> init_dsrnet(const ArchConfig& arch, std::uint64_t seed) {
    validate(arch);
    Rng rng(mix_seed(seed, 0xd5));
    NetworkParams<T> p{NetworkKind::dsr, arch, {}};
    const int c = arch.channels;
    add_conv(p.store, "shallow.0", 1, c, 3, rng);
    add_conv(p.store, "shallow.1", c, c, 3, rng);
    add_conv(p.store, "shallow.2", c, c, 1, rng);
    for (int n = 1; n <= arch.stages; ++n) {
        const std::string up = "up" + std::to_string(n);
        add_upsampler(p.store, up + ".deconv0", c, arch.scale, rng);
        add_downsampler(p.store, up + ".conv0", c, arch.scale, rng);
        add_upsampler(p.store, up + ".deconv1", c, arch.scale, rng);
        if (n < arch.stages) {
            const std::string down = "down" + std::to_string(n);
            add_downsampler(p.store, down + ".conv0", c, arch.scale, rng);
            add_upsampler(p.store, down + ".deconv0", c, arch.scale, rng);
            add_downsampler(p.store, down + ".conv1", c, arch.scale, rng);
        }
    }
    add_conv(p.store, "recon", c, 1, 3, rng);
    add_side_heads(p.store, arch, rng);
    return p;
}

template <class T>
NetworkParams<T> init_denet(const ArchConfig& arch, std::uint64_t seed) {
    validate(arch);
    Rng rng(mix_seed(seed, 0xde));
    NetworkParams<T> p{NetworkKind::de, arch, {}};
    const int c = arch.channels;
    add_conv(p.store, "shallow.0", 3, c, 3, rng);
    add_conv(p.store, "shallow.1", c, c, 3, rng);
    add_conv(p.store, "shallow.2", c, c, 3, rng);
    for (int n = 1; n <= arch.stages; ++n) {
        for (int u = 0; u < arch.residual_units; ++u) {
            const std::string unit = "stage" + std::to_string(n) + ".unit" + std::to_string(u);
            add_conv(p.store, unit + ".conv0", c, c, 3, rng);
            add_conv(p.store, unit + ".conv1", c, c, 3, rng);
            // Residual branches start small so each stage begins near identity.
            for (auto& v : p.store.at(unit + ".conv1.weight").value.values()) v *= T(0.1);
        }
    }
    add_conv(p.store, "recon", c, 1, 3, rng);
    add_side_heads(p.store, arch, rng);
    return p;
}

template <class T>
NetworkParams<T> init_spnet(const ArchConfig& arch, std::uint64_t seed) {
    validate(arch);
    Rng rng(mix_seed(seed, 0x5b));
    NetworkParams<T> p{NetworkKind::sp, arch, {}};
    const int w = arch.structure_width();
    add_conv(p.store, "sp.0", 2 * arch.channels, w, 3, rng);
    for (int i = 1; i <= 4; ++i) add_conv(p.store, "sp." + std::to_string(i), w, w, 3, rng);
    add_conv(p.store, "sp.5", w, 1, 3, rng);
    return p;
}

template <class T>
NetworkParams<T> init_uncertainty(const ArchConfig& arch) {
    validate(arch);
    NetworkParams<T> p{NetworkKind::uncertainty, arch, {}};
    for (const char* branch : {"sr", "de"}) {
        p.store.add(std::string(branch) + ".weight", Tensor<T>(1, 1, 1, T(1)));
        p.store.add(std::string(branch) + ".bias", Tensor<T>(1, 1, 1, T(0)));
    }
    return p;
}

template <class T>
Var<T> side_output_head(Var<T> feature, NetworkParams<T>& params, int stage, bool trainable) {
    if (stage < 1 || stage > params.arch.stages) {
        throw ConfigError("side-output stage " + std::to_string(stage) + " out of range");
    }
    Binder<T> b{params, *feature.tape, trainable};
    const std::string name = "side" + std::to_string(stage);
    Var<T> h = ops::relu(b.conv(feature, name + ".0", k3));
    return b.conv(h, name + ".1", k1);
}

template <class T>
FeatureStack<T> dsrnet_forward(Var<T> d_lr, NetworkParams<T>& params, bool trainable) {
    check_kind(params.kind, NetworkKind::dsr);
    if (d_lr.shape().channels != 1) {
        throw ShapeError("DSRNet expects a single-channel depth map, got " + to_string(d_lr.shape()));
    }
    Binder<T> b{params, *d_lr.tape, trainable};
    Var<T> lr = ops::relu(b.conv(d_lr, "shallow.0", k3));
    lr = ops::relu(b.conv(lr, "shallow.1", k3));
    lr = ops::relu(b.conv(lr, "shallow.2", k1));

    FeatureStack<T> out;
    const int n_stages = params.arch.stages;
    for (int n = 1; n <= n_stages; ++n) {
        // Up-projection: LR -> HR, back-project the LR residual.
        const std::string up = "up" + std::to_string(n);
        Var<T> h0 = ops::relu(b.up(lr, up + ".deconv0"));
        Var<T> l0 = ops::relu(b.down(h0, up + ".conv0"));
        Var<T> h1 = ops::relu(b.up(ops::sub(l0, lr), up + ".deconv1"));
        Var<T> hr = ops::add(h0, h1);
        out.features.push_back(hr);
        out.side_outputs.push_back(side_output_head(hr, params, n, trainable));
        if (n == n_stages) break;
        // Down-projection: HR -> LR, back-project the HR residual.
        const std::string down = "down" + std::to_string(n);
        Var<T> dl0 = ops::relu(b.down(hr, down + ".conv0"));
        Var<T> dh0 = ops::relu(b.up(dl0, down + ".deconv0"));
        Var<T> dl1 = ops::relu(b.down(ops::sub(dh0, hr), down + ".conv1"));
        lr = ops::add(dl0, dl1);
    }
    out.final_output = b.conv(out.features.back(), "recon", k3);
    return out;
}

template <class T>
FeatureStack<T> denet_forward(Var<T> rgb, NetworkParams<T>& params, bool trainable) {
    check_kind(params.kind, NetworkKind::de);
    if (rgb.shape().channels != 3) {
        throw ShapeError("DENet expects a 3-channel colour image, got " + to_string(rgb.shape()));
    }
    Binder<T> b{params, *rgb.tape, trainable};
    Var<T> x = ops::relu(b.conv(rgb, "shallow.0", k3));
    x = ops::relu(b.conv(x, "shallow.1", k3));
    x = b.conv(x, "shallow.2", k3);

    FeatureStack<T> out;
    for (int n = 1; n <= params.arch.stages; ++n) {
        for (int u = 0; u < params.arch.residual_units; ++u) {
            const std::string unit = "stage" + std::to_string(n) + ".unit" + std::to_string(u);
            Var<T> r = b.conv(ops::relu(x), unit + ".conv0", k3);
            r = b.conv(ops::relu(r), unit + ".conv1", k3);
            x = ops::add(x, r);
        }
        out.features.push_back(x);
        out.side_outputs.push_back(side_output_head(x, params, n, trainable));
    }
    out.final_output = b.conv(ops::relu(x), "recon", k3);
    return out;
}

template <class T>
Var<T> spnet_forward(Var<T> fused, NetworkParams<T>& params, bool trainable) {
    check_kind(params.kind, NetworkKind::sp);
    if (fused.shape().channels != 2 * params.arch.channels) {
        throw ShapeError("SPNet expects " + std::to_string(2 * params.arch.channels) + " fused channels, got " +
                         to_string(fused.shape()));
    }
    Binder<T> b{params, *fused.tape, trainable};
    Var<T> x = fused;
    for (int i = 0; i <= 4; ++i) x = ops::relu(b.conv(x, "sp." + std::to_string(i), k3));
    return b.conv(x, "sp.5", k3);
}

int spnet_conv_layer_count(const NetworkParams<float>& params) {
    int n = 0;
    for (const auto& p : params.store) {
        const auto& name = p->name;
        if (name.size() > 7 && name.compare(name.size() - 7, 7, ".weight") == 0) ++n;
    }
    return n;
}

namespace {

FeatureStackValues collect(const FeatureStack<float>& fs) {
    FeatureStackValues out{{}, {}, DepthMap(fs.final_output.value())};
    for (const auto& f : fs.features) out.features.push_back(f.value());
    for (const auto& d : fs.side_outputs) out.side_outputs.push_back(d.value());
    return out;
}

}  // namespace

// The const_casts below are safe: frozen binding never writes to a parameter.
FeatureStackValues dsrnet_forward(const DepthMap& d_lr, const NetworkParams<float>& params) {
    Tape<float> tape;
    auto fs = dsrnet_forward(tape.constant(d_lr.tensor()), const_cast<NetworkParams<float>&>(params), false);
    return collect(fs);
}

FeatureStackValues denet_forward(const RgbImage& rgb, const NetworkParams<float>& params) {
    Tape<float> tape;
    auto fs = denet_forward(tape.constant(rgb.tensor()), const_cast<NetworkParams<float>&>(params), false);
    return collect(fs);
}

#define CTDSR_INSTANTIATE_NETWORKS(T)                                                      \
    template NetworkParams<T> init_dsrnet<T>(const ArchConfig&, std::uint64_t);            \
    template NetworkParams<T> init_denet<T>(const ArchConfig&, std::uint64_t);             \
    template NetworkParams<T> init_spnet<T>(const ArchConfig&, std::uint64_t);             \
    template NetworkParams<T> init_uncertainty<T>(const ArchConfig&);                      \
    template FeatureStack<T> dsrnet_forward(Var<T>, NetworkParams<T>&, bool);              \
    template FeatureStack<T> denet_forward(Var<T>, NetworkParams<T>&, bool);               \
    template Var<T> side_output_head(Var<T>, NetworkParams<T>&, int, bool);                \
    template Var<T> spnet_forward(Var<T>, NetworkParams<T>&, bool);

CTDSR_INSTANTIATE_NETWORKS(float)
CTDSR_INSTANTIATE_NETWORKS(double)

}  // namespace ctdsr
