// Copyright (c) 2026 The ctdsr Authors
// SPDX-License-Identifier: Apache-2.0

#include "config_file.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "CLI11.hpp"

namespace ctdsr::cli {
namespace {

bool parse(const std::string& s, int& out) {
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && p == s.data() + s.size();
}

bool parse(const std::string& s, std::uint64_t& out) {
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && p == s.data() + s.size();
}

bool parse(const std::string& s, double& out) {
    try {
        std::size_t used = 0;
        out = std::stod(s, &used);
        return used == s.size();
    } catch (const std::exception&) {
        return false;
    }
}

bool parse(const std::string& s, bool& out) {
    if (s == "true" || s == "1" || s == "yes" || s == "on") {
        out = true;
        return true;
    }
    if (s == "false" || s == "0" || s == "no" || s == "off") {
        out = false;
        return true;
    }
    return false;
}

using Setter = std::function<bool(RunConfig&, const std::string&)>;

template <class V>
Setter field(V TrainConfig::*member) {
    return [member](RunConfig& c, const std::string& s) { return parse(s, c.train.*member); };
}
template <class V>
Setter arch(V ArchConfig::*member) {
    return [member](RunConfig& c, const std::string& s) { return parse(s, c.train.arch.*member); };
}
Setter loss(double LossWeights::*member) {
    return [member](RunConfig& c, const std::string& s) { return parse(s, c.train.weights.*member); };
}
Setter optim(double OptimizerConfig::*member) {
    return [member](RunConfig& c, const std::string& s) { return parse(s, c.train.optimizer.*member); };
}

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table{
        {"model.scale", arch(&ArchConfig::scale)},
        {"model.stages", arch(&ArchConfig::stages)},
        {"model.channels", arch(&ArchConfig::channels)},
        {"model.residual_units", arch(&ArchConfig::residual_units)},
        {"model.sp_width", arch(&ArchConfig::sp_width)},
        {"train.batch_size", field(&TrainConfig::batch_size)},
        {"train.step1_epochs", field(&TrainConfig::step1_epochs)},
        {"train.max_epochs", field(&TrainConfig::max_epochs)},
        {"train.initial_lr", field(&TrainConfig::initial_lr)},
        {"train.lr_decay_factor", field(&TrainConfig::lr_decay_factor)},
        {"train.lr_decay_period", field(&TrainConfig::lr_decay_period)},
        {"train.seed", field(&TrainConfig::seed)},
        {"train.pool_size", field(&TrainConfig::pool_size)},
        {"train.augment", field(&TrainConfig::augment)},
        {"train.side_probe", field(&TrainConfig::side_probe)},
        {"train.student",
         [](RunConfig& c, const std::string& s) {
             if (s == "auto") c.train.student.reset();
             else if (s == "dsr") c.train.student = Role::dsr;
             else if (s == "de") c.train.student = Role::de;
             else return false;
             return true;
         }},
        {"loss.gamma", loss(&LossWeights::gamma)},
        {"loss.lambda", loss(&LossWeights::lambda)},
        {"loss.rho1", loss(&LossWeights::rho1)},
        {"loss.rho2", loss(&LossWeights::rho2)},
        {"optimizer.beta1", optim(&OptimizerConfig::beta1)},
        {"optimizer.beta2", optim(&OptimizerConfig::beta2)},
        {"optimizer.epsilon", optim(&OptimizerConfig::epsilon)},
        {"paths.data", [](RunConfig& c, const std::string& s) { c.data = s; return true; }},
        {"paths.output", [](RunConfig& c, const std::string& s) { c.output = s; return true; }},
    };
    return table;
}

std::string num(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace

void apply_setting(RunConfig& config, const std::string& key, const std::string& value,
                   std::vector<std::string>& errors) {
    const std::string k = key == "optimizer.momentum" ? "optimizer.beta1" : key;
    auto it = setters().find(k);
    if (it == setters().end()) {
        errors.push_back("unknown setting '" + key + "'");
        return;
    }
    if (!it->second(config, value)) errors.push_back("cannot parse " + key + " = '" + value + "'");
}

void apply_file(RunConfig& config, const std::filesystem::path& path, std::vector<std::string>& errors) {
    if (!std::filesystem::exists(path)) {
        errors.push_back("config file '" + path.string() + "' not found");
        return;
    }
    std::vector<CLI::ConfigItem> items;
    try {
        items = CLI::ConfigINI().from_file(path.string());
    } catch (const CLI::Error& e) {
        errors.push_back("cannot read '" + path.string() + "': " + e.what());
        return;
    }
    std::optional<double> momentum;
    std::optional<double> beta1;
    for (const auto& item : items) {
        if (item.name == "++" || item.name == "--") continue;  // section markers
        const std::string key = item.fullname();
        if (item.inputs.size() != 1) {
            errors.push_back(key + " needs exactly one value");
            continue;
        }
        apply_setting(config, key, item.inputs[0], errors);
        double v = 0;
        if (key == "optimizer.momentum" && parse(item.inputs[0], v)) momentum = v;
        if (key == "optimizer.beta1" && parse(item.inputs[0], v)) beta1 = v;
    }
    if (momentum && beta1 && *momentum != *beta1) {
        errors.push_back("optimizer.momentum and optimizer.beta1 name the same quantity but differ");
        return;
    }
}

std::string to_ini(const RunConfig& c) {
    const TrainConfig& t = c.train;
    std::ostringstream os;
    os << "[model]\n"
       << "scale = " << t.arch.scale << "\n"
       << "stages = " << t.arch.stages << "\n"
       << "channels = " << t.arch.channels << "\n"
       << "residual_units = " << t.arch.residual_units << "\n"
       << "sp_width = " << t.arch.sp_width << "\n\n"
       << "[train]\n"
       << "batch_size = " << t.batch_size << "\n"
       << "step1_epochs = " << t.step1_epochs << "\n"
       << "max_epochs = " << t.max_epochs << "\n"
       << "initial_lr = " << num(t.initial_lr) << "\n"
       << "lr_decay_factor = " << num(t.lr_decay_factor) << "\n"
       << "lr_decay_period = " << t.lr_decay_period << "\n"
       << "seed = " << t.seed << "\n"
       << "pool_size = " << t.pool_size << "\n"
       << "augment = " << (t.augment ? "true" : "false") << "\n"
       << "side_probe = " << (t.side_probe ? "true" : "false") << "\n"
       << "student = " << (!t.student ? "auto" : *t.student == Role::dsr ? "dsr" : "de") << "\n\n"
       << "[loss]\n"
       << "gamma = " << num(t.weights.gamma) << "\n"
       << "lambda = " << num(t.weights.lambda) << "\n"
       << "rho1 = " << num(t.weights.rho1) << "\n"
       << "rho2 = " << num(t.weights.rho2) << "\n\n"
       << "[optimizer]\n"
       << "beta1 = " << num(t.optimizer.beta1) << "\n"
       << "beta2 = " << num(t.optimizer.beta2) << "\n"
       << "epsilon = " << num(t.optimizer.epsilon) << "\n\n"
       << "[paths]\n"
       << "data = " << c.data.string() << "\n"
       << "output = " << c.output.string() << "\n";
    return os.str();
}

std::string config_hash(const RunConfig& config) {
    const std::string text = to_ini(config);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace ctdsr::cli
