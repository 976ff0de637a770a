#include "dsadapt/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dsadapt {

namespace {

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string fmt_triple(const std::array<double, 3>& a) {
    return fmt_double(a[0]) + "," + fmt_double(a[1]) + "," + fmt_double(a[2]);
}

std::array<double, 3> parse_triple(const std::string& s) {
    std::array<double, 3> out{};
    if (std::sscanf(s.c_str(), "%lf,%lf,%lf", &out[0], &out[1], &out[2]) != 3)
        throw std::invalid_argument("expected three comma-separated numbers: " + s);
    return out;
}

}  // namespace

void TrainConfig::validate() const {
    if (config_version != 1) throw std::invalid_argument("unsupported config_version");
    if (optimizer_main.lr <= 0 || optimizer_disc.lr <= 0)
        throw std::invalid_argument("learning rates must be positive");
    if (lambda < 0 || beta < 0) throw std::invalid_argument("lambda and beta must be >= 0");
    if (alpha < 0 || alpha > 1) throw std::invalid_argument("alpha must be in [0,1]");
    if (max_iters < 0) throw std::invalid_argument("max_iters must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (patch_size < 1) throw std::invalid_argument("patch_size must be >= 1");
    if (ema_interval < 1) throw std::invalid_argument("ema_interval must be >= 1");
    if (variant != "full" && variant != "source_only")
        throw std::invalid_argument("variant must be 'full' or 'source_only'");
    if (soft_vote != "probs" && soft_vote != "logits")
        throw std::invalid_argument("soft_vote must be 'probs' or 'logits'");
    if (paradigm != "decoder_only" && paradigm != "single_target")
        throw std::invalid_argument("paradigm must be 'decoder_only' or 'single_target'");
    if (lr_schedule != "none" && lr_schedule != "poly")
        throw std::invalid_argument("lr_schedule must be 'none' or 'poly'");
    for (int i = 0; i < 3; ++i)
        if (normalization.std[i] <= 0) throw std::invalid_argument("norm_std must be positive");
}

std::map<std::string, std::string> config_to_map(const TrainConfig& c) {
    std::map<std::string, std::string> kv;
    kv["config_version"] = std::to_string(c.config_version);
    kv["backbone_kind"] = c.backbone_kind;
    kv["decoder_kind"] = c.decoder_kind;
    kv["feature_channels"] = std::to_string(c.feature_channels);
    kv["backbone_width"] = std::to_string(c.backbone_width);
    kv["downsample"] = std::to_string(c.downsample);
    kv["ddm_reduction"] = std::to_string(c.ddm_reduction);
    kv["optimizer_main.kind"] = c.optimizer_main.kind;
    kv["optimizer_main.lr"] = fmt_double(c.optimizer_main.lr);
    kv["optimizer_main.momentum"] = fmt_double(c.optimizer_main.momentum);
    kv["optimizer_main.weight_decay"] = fmt_double(c.optimizer_main.weight_decay);
    kv["optimizer_disc.kind"] = c.optimizer_disc.kind;
    kv["optimizer_disc.lr"] = fmt_double(c.optimizer_disc.lr);
    kv["lambda"] = fmt_double(c.lambda);
    kv["beta"] = fmt_double(c.beta);
    kv["alpha"] = fmt_double(c.alpha);
    kv["paradigm"] = c.paradigm;
    kv["variant"] = c.variant;
    kv["soft_vote"] = c.soft_vote;
    kv["max_iters"] = std::to_string(c.max_iters);
    kv["batch_size"] = std::to_string(c.batch_size);
    kv["patch_size"] = std::to_string(c.patch_size);
    kv["seed"] = std::to_string(c.seed);
    kv["checkpoint_interval"] = std::to_string(c.checkpoint_interval);
    kv["st_burn_in"] = std::to_string(c.st_burn_in);
    kv["ema_interval"] = std::to_string(c.ema_interval);
    kv["lr_schedule"] = c.lr_schedule;
    kv["lr_poly_power"] = fmt_double(c.lr_poly_power);
    kv["norm_mean"] = fmt_triple(c.normalization.mean);
    kv["norm_std"] = fmt_triple(c.normalization.std);
    return kv;
}

TrainConfig config_from_map(const std::map<std::string, std::string>& kv) {
    TrainConfig c;
    for (const auto& [key, value] : kv) {
        if (key == "config_version") c.config_version = std::stoi(value);
        else if (key == "backbone_kind") c.backbone_kind = value;
        else if (key == "decoder_kind") c.decoder_kind = value;
        else if (key == "feature_channels") c.feature_channels = std::stoi(value);
        else if (key == "backbone_width") c.backbone_width = std::stoi(value);
        else if (key == "downsample") c.downsample = std::stoi(value);
        else if (key == "ddm_reduction") c.ddm_reduction = std::stoi(value);
        else if (key == "optimizer_main.kind") c.optimizer_main.kind = value;
        else if (key == "optimizer_main.lr") c.optimizer_main.lr = std::stod(value);
        else if (key == "optimizer_main.momentum") c.optimizer_main.momentum = std::stod(value);
        else if (key == "optimizer_main.weight_decay")
            c.optimizer_main.weight_decay = std::stod(value);
        else if (key == "optimizer_disc.kind") c.optimizer_disc.kind = value;
        else if (key == "optimizer_disc.lr") c.optimizer_disc.lr = std::stod(value);
        else if (key == "lambda") c.lambda = std::stod(value);
        else if (key == "beta") c.beta = std::stod(value);
        else if (key == "alpha") c.alpha = std::stod(value);
        else if (key == "paradigm") c.paradigm = value;
        else if (key == "variant") c.variant = value;
        else if (key == "soft_vote") c.soft_vote = value;
        else if (key == "max_iters") c.max_iters = std::stol(value);
        else if (key == "batch_size") c.batch_size = std::stoi(value);
        else if (key == "patch_size") c.patch_size = std::stoi(value);
        else if (key == "seed") c.seed = std::stoull(value);
        else if (key == "checkpoint_interval") c.checkpoint_interval = std::stol(value);
        else if (key == "st_burn_in") c.st_burn_in = std::stol(value);
        else if (key == "ema_interval") c.ema_interval = std::stol(value);
        else if (key == "lr_schedule") c.lr_schedule = value;
        else if (key == "lr_poly_power") c.lr_poly_power = std::stod(value);
        else if (key == "norm_mean") c.normalization.mean = parse_triple(value);
        else if (key == "norm_std") c.normalization.std = parse_triple(value);
        else throw std::invalid_argument("unknown config key: " + key);
    }
    c.validate();
    return c;
}

TrainConfig parse_config_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": expected 'key = value'");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (kv.count(key))
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": duplicate key '" + key + "'");
        kv[key] = value;
    }
    return config_from_map(kv);
}

std::string config_to_text(const TrainConfig& c) {
    std::string out;
    for (const auto& [key, value] : config_to_map(c)) out += key + " = " + value + "\n";
    return out;
}

TrainConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read config: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

void save_config(const TrainConfig& c, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write config: " + path);
    out << config_to_text(c);
}

}  // namespace dsadapt
