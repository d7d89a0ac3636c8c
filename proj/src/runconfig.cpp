// Copyright 2026 The vipformer Authors
//
// Licensed under the Apache License, Version 2.0

#include "vipformer/runconfig.hpp"

#include <Eigen/Core>
#include <omp.h>

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace vip {

namespace {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return "";
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

int to_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const int x = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (...) {
        throw ParamError("config key '" + key + "': expected integer, got '" + v + "'");
    }
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (...) {
        throw ParamError("config key '" + key + "': expected number, got '" + v + "'");
    }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const unsigned long long x = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return static_cast<std::uint64_t>(x);
    } catch (...) {
        throw ParamError("config key '" + key + "': expected unsigned integer, got '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ParamError("config key '" + key + "': expected boolean, got '" + v + "'");
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
    // model
    if (key == "model.layers") model.layers = to_int(key, value);
    else if (key == "model.heads") model.heads = to_int(key, value);
    else if (key == "model.dim") model.dim = to_int(key, value);
    else if (key == "model.mlp_ratio") model.mlp_ratio = to_int(key, value);
    else if (key == "model.length") model.point_tokens = to_int(key, value);
    else if (key == "model.neighbors") model.neighbors = to_int(key, value);
    else if (key == "model.patch") model.patch = to_int(key, value);
    else if (key == "model.image_size") model.image_size = to_int(key, value);
    else if (key == "model.image_channels") model.image_channels = to_int(key, value);
    else if (key == "model.point_channels") model.point_channels = to_int(key, value);
    else if (key == "model.pretrain_points") model.pretrain_points = to_int(key, value);
    else if (key == "model.eval_points") model.eval_points = to_int(key, value);
    else if (key == "model.adapter_hidden") model.adapter_hidden = to_int(key, value);
    else if (key == "model.dropout") model.dropout = to_double(key, value);
    else if (key == "model.out_dim") model.out_dim = to_int(key, value);
    // contrast
    else if (key == "contrast.mode") contrast.mode = ContrastConfig::parse_mode(value);
    else if (key == "contrast.tau") contrast.tau = to_double(key, value);
    else if (key == "contrast.alpha") contrast.alpha = to_double(key, value);
    // augmentation
    else if (key == "augment.rotation_axis") {
        if (value == "up") augment.rotation_axis = AugmentationSpec::RotationAxis::UpAxis;
        else if (value == "arbitrary") augment.rotation_axis = AugmentationSpec::RotationAxis::Arbitrary;
        else throw ParamError("config key 'augment.rotation_axis': expected up|arbitrary, got '" + value + "'");
    } else if (key == "augment.rotation_min") augment.rotation_min = to_double(key, value);
    else if (key == "augment.rotation_max") augment.rotation_max = to_double(key, value);
    else if (key == "augment.translation_min") augment.translation_min = to_double(key, value);
    else if (key == "augment.translation_max") augment.translation_max = to_double(key, value);
    else if (key == "augment.jitter_sigma") augment.jitter_sigma = to_double(key, value);
    else if (key == "augment.jitter_clip") augment.jitter_clip = to_double(key, value);
    else if (key == "augment.scale_min") augment.scale_min = to_double(key, value);
    else if (key == "augment.scale_max") augment.scale_max = to_double(key, value);
    else if (key == "augment.image_hflip") image_hflip = to_bool(key, value);
    // scheduler
    else if (key == "train.lr_peak") sched.base_peak = to_double(key, value);
    else if (key == "train.peak_decay") sched.peak_decay = to_double(key, value);
    else if (key == "train.cycle_epochs") sched.cycle_len = to_double(key, value);
    else if (key == "train.warmup_epochs") sched.warmup_len = to_double(key, value);
    else if (key == "train.lr_per_step") lr_per_step = to_bool(key, value);
    // optimizer
    else if (key == "train.beta1") adamw.beta1 = to_double(key, value);
    else if (key == "train.beta2") adamw.beta2 = to_double(key, value);
    else if (key == "train.eps") adamw.eps = to_double(key, value);
    else if (key == "train.weight_decay") adamw.weight_decay = to_double(key, value);
    // probe
    else if (key == "probe.iters") probe.iters = to_int(key, value);
    else if (key == "probe.lr") probe.lr = to_double(key, value);
    else if (key == "probe.weight_decay") probe.weight_decay = to_double(key, value);
    else if (key == "probe.hinge") probe.hinge = to_bool(key, value);
    // run
    else if (key == "train.epochs") epochs = to_int(key, value);
    else if (key == "train.batch_size") batch_size = to_int(key, value);
    else if (key == "train.freeze_encoder") freeze_encoder = to_bool(key, value);
    else if (key == "seed") seed = to_u64(key, value);
    else if (key == "strict") strict = to_bool(key, value);
    else if (key == "workers") workers = to_int(key, value);
    else if (key == "data.dir") data_dir = value;
    else if (key == "out_dir") out_dir = value;
    else if (key == "from_checkpoint") from_checkpoint = value;
    else throw ParamError("unknown config key '" + key + "'");
}

void RunConfig::load_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ParamError("cannot open config file '" + path + "'");
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ParamError("config file '" + path + "' line " + std::to_string(line_no) +
                             ": expected key=value, got '" + line + "'");
        set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

std::map<std::string, std::string> RunConfig::to_map() const {
    std::map<std::string, std::string> m;
    m["model.layers"] = std::to_string(model.layers);
    m["model.heads"] = std::to_string(model.heads);
    m["model.dim"] = std::to_string(model.dim);
    m["model.mlp_ratio"] = std::to_string(model.mlp_ratio);
    m["model.length"] = std::to_string(model.point_tokens);
    m["model.neighbors"] = std::to_string(model.neighbors);
    m["model.patch"] = std::to_string(model.patch);
    m["model.image_size"] = std::to_string(model.image_size);
    m["model.image_channels"] = std::to_string(model.image_channels);
    m["model.point_channels"] = std::to_string(model.point_channels);
    m["model.pretrain_points"] = std::to_string(model.pretrain_points);
    m["model.eval_points"] = std::to_string(model.eval_points);
    m["model.adapter_hidden"] = std::to_string(model.adapter_hidden);
    m["model.dropout"] = fmt(model.dropout);
    m["model.out_dim"] = std::to_string(model.out_dim);
    m["contrast.mode"] = ContrastConfig::mode_token(contrast.mode);
    m["contrast.tau"] = fmt(contrast.tau);
    m["contrast.alpha"] = fmt(contrast.alpha);
    m["augment.rotation_axis"] =
        augment.rotation_axis == AugmentationSpec::RotationAxis::UpAxis ? "up" : "arbitrary";
    m["augment.rotation_min"] = fmt(augment.rotation_min);
    m["augment.rotation_max"] = fmt(augment.rotation_max);
    m["augment.translation_min"] = fmt(augment.translation_min);
    m["augment.translation_max"] = fmt(augment.translation_max);
    m["augment.jitter_sigma"] = fmt(augment.jitter_sigma);
    m["augment.jitter_clip"] = fmt(augment.jitter_clip);
    m["augment.scale_min"] = fmt(augment.scale_min);
    m["augment.scale_max"] = fmt(augment.scale_max);
    m["augment.image_hflip"] = image_hflip ? "true" : "false";
    m["train.lr_peak"] = fmt(sched.base_peak);
    m["train.peak_decay"] = fmt(sched.peak_decay);
    m["train.cycle_epochs"] = fmt(sched.cycle_len);
    m["train.warmup_epochs"] = fmt(sched.warmup_len);
    m["train.lr_per_step"] = lr_per_step ? "true" : "false";
    m["train.beta1"] = fmt(adamw.beta1);
    m["train.beta2"] = fmt(adamw.beta2);
    m["train.eps"] = fmt(adamw.eps);
    m["train.weight_decay"] = fmt(adamw.weight_decay);
    m["probe.iters"] = std::to_string(probe.iters);
    m["probe.lr"] = fmt(probe.lr);
    m["probe.weight_decay"] = fmt(probe.weight_decay);
    m["probe.hinge"] = probe.hinge ? "true" : "false";
    m["train.epochs"] = std::to_string(epochs);
    m["train.batch_size"] = std::to_string(batch_size);
    m["train.freeze_encoder"] = freeze_encoder ? "true" : "false";
    m["seed"] = std::to_string(seed);
    m["strict"] = strict ? "true" : "false";
    m["workers"] = std::to_string(workers);
    m["data.dir"] = data_dir;
    m["out_dir"] = out_dir;
    m["from_checkpoint"] = from_checkpoint;
    return m;
}

void RunConfig::write_resolved(const std::string& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw FormatError("cannot write resolved config to '" + path + "'");
    for (const auto& [k, v] : to_map()) os << k << " = " << v << '\n';
}

void RunConfig::validate() const {
    model.validate();
    contrast.validate();
    augment.validate();
    sched.validate();
    if (epochs < 0) throw ParamError("config: train.epochs must be >= 0");
    if (batch_size < 1) throw ParamError("config: train.batch_size must be >= 1");
    if (workers < 0) throw ParamError("config: workers must be >= 0");
}

void configure_threads(const RunConfig& cfg) {
    int n = cfg.strict ? 1 : cfg.workers;
    if (n <= 0) n = omp_get_num_procs();
    omp_set_num_threads(n);
    Eigen::setNbThreads(n);
}

}  // namespace vip
