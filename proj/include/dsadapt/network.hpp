#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dsadapt/ddm.hpp"
#include "dsadapt/nn.hpp"

namespace dsadapt {

struct EnsembleConfig {
    std::string backbone_kind = "small_cnn";
    std::string decoder_kind = "small_conv";
    int in_channels = 3;
    int feature_channels = 16;  // C at the backbone output
    int downsample = 4;         // spatial reduction, power of two
    int backbone_width = 16;    // width of intermediate backbone stages
    int num_classes = 0;
    int ddm_reduction = 4;
};

// Feature extractor: [3,H,W] -> [C, H/s, W/s]. Implementations register in
// the backbone registry; heavyweight externals plug in the same way.
class Backbone {
public:
    virtual ~Backbone() = default;
    virtual Var forward(const Var& image) const = 0;
    virtual int out_channels() const = 0;
    virtual int downsample() const = 0;
    virtual void collect(std::vector<Var>& out) const = 0;
};

// Classifier head: [C,h,w] -> logits [K, out_h, out_w] at patch resolution.
class Decoder {
public:
    virtual ~Decoder() = default;
    virtual Var forward(const Var& features, int out_h, int out_w) const = 0;
    virtual int in_channels() const = 0;
    virtual int num_classes() const = 0;
    virtual void collect(std::vector<Var>& out) const = 0;
};

using BackboneFactory =
    std::function<std::shared_ptr<Backbone>(const std::string& prefix, const EnsembleConfig&, Rng&)>;
using DecoderFactory =
    std::function<std::shared_ptr<Decoder>(const std::string& prefix, const EnsembleConfig&, Rng&)>;

void register_backbone(const std::string& kind, BackboneFactory factory);
void register_decoder(const std::string& kind, DecoderFactory factory);
std::shared_ptr<Backbone> make_backbone(const std::string& kind, const std::string& prefix,
                                        const EnsembleConfig& config, Rng& rng);
std::shared_ptr<Decoder> make_decoder(const std::string& kind, const std::string& prefix,
                                      const EnsembleConfig& config, Rng& rng);
std::vector<std::string> registered_backbones();
std::vector<std::string> registered_decoders();

struct DiscriminatorBlockSpec {
    int kernel;
    int stride;
    int out_channels;
};

// Patch discriminator: four 4x4 conv blocks, strides 2,2,1,1, channels
// 64,128,256,1, leaky rectifier (slope 0.2) between blocks, raw logits out.
class Discriminator {
public:
    Discriminator() = default;
    Discriminator(const std::string& prefix, int in_channels, Rng& rng);

    Var forward(const Var& features) const;
    int in_channels() const { return in_channels_; }
    const std::vector<Conv2dLayer>& blocks() const { return blocks_; }
    void collect(std::vector<Var>& out) const;

    static const std::vector<DiscriminatorBlockSpec>& architecture();

private:
    int in_channels_ = 0;
    std::vector<Conv2dLayer> blocks_;
};

// The four student nets plus discriminators and DDM parameters.
class StudentEnsemble {
public:
    StudentEnsemble(const EnsembleConfig& config, Rng& rng);

    EnsembleConfig config;
    std::shared_ptr<Backbone> backbone_s, backbone_t;
    std::shared_ptr<Decoder> decoder_s, decoder_t;
    std::shared_ptr<Discriminator> disc_s, disc_t;
    DdmParams ddm;

    // backbones + decoders + DDM (the student-step parameter group)
    std::vector<Var> main_params() const;
    std::vector<Var> disc_params() const;
    std::vector<Var> all_params() const;
};

struct StyleFeatures {
    Var f_ss, f_st;  // source student backbone on x_s / x_t
    Var f_ts, f_tt;  // target student backbone on x_s / x_t
};

StyleFeatures extract_features(const StudentEnsemble& ensemble, const Var& x_s, const Var& x_t);
Var segment(const Decoder& decoder, const Var& features, int out_h, int out_w);
Var discriminate(const Discriminator& disc, const Var& features);

struct FullForward {
    StyleFeatures features;
    Var fp_ss, fp_ts;  // disentangled pair for the source image
    Var fp_st, fp_tt;  // disentangled pair for the target image
    Var logits_src_s, logits_src_t;
    Var logits_tgt_s, logits_tgt_t;
};

FullForward forward_full(const StudentEnsemble& ensemble, const Var& x_s, const Var& x_t);

// Soft voting: mean of the two per-pixel class-probability maps, then argmax.
Tensor ensemble_predict(const Tensor& logits_a, const Tensor& logits_b);

}  // namespace dsadapt
