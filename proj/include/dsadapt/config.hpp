#pragma once

#include <map>
#include <string>

#include "dsadapt/data.hpp"

namespace dsadapt {

struct OptimizerConfig {
    std::string kind = "sgd";
    double lr = 0.001;
    double momentum = 0.9;
    double weight_decay = 0.0001;
};

// Flat key-value training configuration (schema version 1). See
// config_to_text for the full key list; unknown keys are rejected.
struct TrainConfig {
    int config_version = 1;

    // model
    std::string backbone_kind = "small_cnn";
    std::string decoder_kind = "small_conv";
    int feature_channels = 16;
    int backbone_width = 16;
    int downsample = 4;
    int ddm_reduction = 4;

    // optimization
    OptimizerConfig optimizer_main{"sgd", 0.001, 0.9, 0.0001};
    OptimizerConfig optimizer_disc{"adam", 0.00025, 0.0, 0.0};
    double lambda = 0.25;  // self-training weight
    double beta = 0.005;   // adversarial weight
    double alpha = 0.99;   // EMA decay
    std::string paradigm = "decoder_only";
    std::string variant = "full";     // "full" or "source_only" (single-path baseline)
    std::string soft_vote = "probs";  // pseudo-label averaging operand: "probs" or "logits"
    long max_iters = 100;
    int batch_size = 2;
    int patch_size = 64;
    std::uint64_t seed = 0;
    long checkpoint_interval = 0;  // 0: only the final checkpoint
    long st_burn_in = 0;           // steps before the st term activates
    long ema_interval = 1;
    std::string lr_schedule = "none";  // "none" or "poly"
    double lr_poly_power = 0.9;

    Normalization normalization;

    void validate() const;
};

TrainConfig config_from_map(const std::map<std::string, std::string>& kv);
std::map<std::string, std::string> config_to_map(const TrainConfig& c);

// "key = value" lines, '#' comments.
TrainConfig parse_config_text(const std::string& text);
std::string config_to_text(const TrainConfig& c);
TrainConfig load_config(const std::string& path);
void save_config(const TrainConfig& c, const std::string& path);

}  // namespace dsadapt
