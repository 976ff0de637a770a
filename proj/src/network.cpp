#include "dsadapt/network.hpp"

#include <map>
#include <stdexcept>

namespace dsadapt {

namespace {

constexpr double kLeakySlope = 0.2;

// Strided 3x3 conv chain: one stride-2 block per factor of two of downsample,
// then a stride-1 block at the output width.
class SmallCnnBackbone final : public Backbone {
public:
    SmallCnnBackbone(const std::string& prefix, const EnsembleConfig& cfg, Rng& rng)
        : out_channels_(cfg.feature_channels), downsample_(cfg.downsample) {
        if (downsample_ < 1 || (downsample_ & (downsample_ - 1)) != 0)
            throw std::invalid_argument("small_cnn: downsample must be a power of two");
        int cin = cfg.in_channels;
        int idx = 0;
        for (int s = downsample_; s > 1; s /= 2) {
            int cout = (s > 2) ? cfg.backbone_width : cfg.feature_channels;
            layers_.emplace_back(prefix + ".block" + std::to_string(idx++), cin, cout, 3, 2, 1,
                                 rng);
            cin = cout;
        }
        layers_.emplace_back(prefix + ".block" + std::to_string(idx), cin, cfg.feature_channels, 3,
                             1, 1, rng);
    }

    Var forward(const Var& image) const override {
        const Tensor& v = image->value;
        if (v.rank() != 3) throw std::invalid_argument("backbone: image must be [3,H,W]");
        if (v.dim(1) % downsample_ != 0 || v.dim(2) % downsample_ != 0)
            throw std::invalid_argument("backbone: spatial dims " + Tensor::shape_str(v.shape()) +
                                        " not divisible by downsample " +
                                        std::to_string(downsample_));
        Var x = image;
        // per-channel instance norm keeps feature magnitudes bounded, which
        // the adversarial alignment needs (an unnormalized generator can
        // inflate features until the discriminator saturates)
        for (const auto& layer : layers_) x = leaky_relu(instance_norm(layer.forward(x)), kLeakySlope);
        return x;
    }

    int out_channels() const override { return out_channels_; }
    int downsample() const override { return downsample_; }
    void collect(std::vector<Var>& out) const override {
        for (const auto& l : layers_) l.collect(out);
    }

private:
    int out_channels_, downsample_;
    std::vector<Conv2dLayer> layers_;
};

// Conv head + 1x1 classifier + bilinear upsample to patch resolution.
class SmallConvDecoder final : public Decoder {
public:
    SmallConvDecoder(const std::string& prefix, const EnsembleConfig& cfg, Rng& rng)
        : in_channels_(cfg.feature_channels), num_classes_(cfg.num_classes) {
        if (num_classes_ < 2) throw std::invalid_argument("decoder: need at least 2 classes");
        head_ = Conv2dLayer(prefix + ".head", in_channels_, in_channels_, 3, 1, 1, rng);
        classifier_ = Conv2dLayer(prefix + ".classifier", in_channels_, num_classes_, 1, 1, 0, rng);
    }

    Var forward(const Var& features, int out_h, int out_w) const override {
        if (features->value.dim(0) != in_channels_)
            throw std::invalid_argument("decoder: expected " + std::to_string(in_channels_) +
                                        " channels, got " +
                                        std::to_string(features->value.dim(0)));
        Var x = leaky_relu(head_.forward(features), kLeakySlope);
        x = classifier_.forward(x);
        return upsample_bilinear(x, out_h, out_w);
    }

    int in_channels() const override { return in_channels_; }
    int num_classes() const override { return num_classes_; }
    void collect(std::vector<Var>& out) const override {
        head_.collect(out);
        classifier_.collect(out);
    }

private:
    int in_channels_ = 0, num_classes_ = 0;
    Conv2dLayer head_, classifier_;
};

std::map<std::string, BackboneFactory>& backbone_registry() {
    static std::map<std::string, BackboneFactory> reg = {
        {"small_cnn",
         [](const std::string& prefix, const EnsembleConfig& cfg, Rng& rng) {
             return std::make_shared<SmallCnnBackbone>(prefix, cfg, rng);
         }},
    };
    return reg;
}

std::map<std::string, DecoderFactory>& decoder_registry() {
    static std::map<std::string, DecoderFactory> reg = {
        {"small_conv",
         [](const std::string& prefix, const EnsembleConfig& cfg, Rng& rng) {
             return std::make_shared<SmallConvDecoder>(prefix, cfg, rng);
         }},
    };
    return reg;
}

}  // namespace

void register_backbone(const std::string& kind, BackboneFactory factory) {
    backbone_registry()[kind] = std::move(factory);
}

void register_decoder(const std::string& kind, DecoderFactory factory) {
    decoder_registry()[kind] = std::move(factory);
}

std::shared_ptr<Backbone> make_backbone(const std::string& kind, const std::string& prefix,
                                        const EnsembleConfig& config, Rng& rng) {
    auto it = backbone_registry().find(kind);
    if (it == backbone_registry().end())
        throw std::invalid_argument("unknown backbone kind: " + kind);
    return it->second(prefix, config, rng);
}

std::shared_ptr<Decoder> make_decoder(const std::string& kind, const std::string& prefix,
                                      const EnsembleConfig& config, Rng& rng) {
    auto it = decoder_registry().find(kind);
    if (it == decoder_registry().end())
        throw std::invalid_argument("unknown decoder kind: " + kind);
    return it->second(prefix, config, rng);
}

std::vector<std::string> registered_backbones() {
    std::vector<std::string> names;
    for (const auto& [k, v] : backbone_registry()) names.push_back(k);
    return names;
}

std::vector<std::string> registered_decoders() {
    std::vector<std::string> names;
    for (const auto& [k, v] : decoder_registry()) names.push_back(k);
    return names;
}

const std::vector<DiscriminatorBlockSpec>& Discriminator::architecture() {
    static const std::vector<DiscriminatorBlockSpec> arch = {
        {4, 2, 64}, {4, 2, 128}, {4, 1, 256}, {4, 1, 1}};
    return arch;
}

Discriminator::Discriminator(const std::string& prefix, int in_channels, Rng& rng)
    : in_channels_(in_channels) {
    int cin = in_channels;
    int idx = 0;
    for (const auto& spec : architecture()) {
        blocks_.emplace_back(prefix + ".block" + std::to_string(idx++), cin, spec.out_channels,
                             spec.kernel, spec.stride, 1, rng);
        cin = spec.out_channels;
    }
}

Var Discriminator::forward(const Var& features) const {
    if (features->value.dim(0) != in_channels_)
        throw std::invalid_argument("discriminator: expected " + std::to_string(in_channels_) +
                                    " channels, got " + std::to_string(features->value.dim(0)));
    Var x = features;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        x = blocks_[i].forward(x);
        if (i + 1 < blocks_.size()) x = leaky_relu(x, kLeakySlope);
    }
    return x;
}

void Discriminator::collect(std::vector<Var>& out) const {
    for (const auto& b : blocks_) b.collect(out);
}

StudentEnsemble::StudentEnsemble(const EnsembleConfig& cfg, Rng& rng) : config(cfg) {
    backbone_s = make_backbone(cfg.backbone_kind, "backbone_s", cfg, rng);
    backbone_t = make_backbone(cfg.backbone_kind, "backbone_t", cfg, rng);
    decoder_s = make_decoder(cfg.decoder_kind, "decoder_s", cfg, rng);
    decoder_t = make_decoder(cfg.decoder_kind, "decoder_t", cfg, rng);
    disc_s = std::make_shared<Discriminator>("disc_s", backbone_s->out_channels(), rng);
    disc_t = std::make_shared<Discriminator>("disc_t", backbone_t->out_channels(), rng);
    ddm = DdmParams("ddm", backbone_s->out_channels(), cfg.ddm_reduction, rng);
}

std::vector<Var> StudentEnsemble::main_params() const {
    std::vector<Var> out;
    backbone_s->collect(out);
    backbone_t->collect(out);
    decoder_s->collect(out);
    decoder_t->collect(out);
    ddm.collect(out);
    return out;
}

std::vector<Var> StudentEnsemble::disc_params() const {
    std::vector<Var> out;
    disc_s->collect(out);
    disc_t->collect(out);
    return out;
}

std::vector<Var> StudentEnsemble::all_params() const {
    std::vector<Var> out = main_params();
    auto d = disc_params();
    out.insert(out.end(), d.begin(), d.end());
    return out;
}

StyleFeatures extract_features(const StudentEnsemble& ensemble, const Var& x_s, const Var& x_t) {
    StyleFeatures f;
    f.f_ss = ensemble.backbone_s->forward(x_s);
    f.f_st = ensemble.backbone_s->forward(x_t);
    f.f_ts = ensemble.backbone_t->forward(x_s);
    f.f_tt = ensemble.backbone_t->forward(x_t);
    return f;
}

Var segment(const Decoder& decoder, const Var& features, int out_h, int out_w) {
    return decoder.forward(features, out_h, out_w);
}

Var discriminate(const Discriminator& disc, const Var& features) {
    return disc.forward(features);
}

FullForward forward_full(const StudentEnsemble& ensemble, const Var& x_s, const Var& x_t) {
    check_same_shape(x_s->value, x_t->value, "forward_full");
    int h = x_s->value.dim(1), w = x_s->value.dim(2);
    FullForward out;
    out.features = extract_features(ensemble, x_s, x_t);
    std::tie(out.fp_ss, out.fp_ts) = ddm_forward(out.features.f_ss, out.features.f_ts, ensemble.ddm);
    std::tie(out.fp_st, out.fp_tt) = ddm_forward(out.features.f_st, out.features.f_tt, ensemble.ddm);
    out.logits_src_s = segment(*ensemble.decoder_s, out.fp_ss, h, w);
    out.logits_src_t = segment(*ensemble.decoder_t, out.fp_ts, h, w);
    out.logits_tgt_s = segment(*ensemble.decoder_s, out.fp_st, h, w);
    out.logits_tgt_t = segment(*ensemble.decoder_t, out.fp_tt, h, w);
    return out;
}

Tensor ensemble_predict(const Tensor& logits_a, const Tensor& logits_b) {
    check_same_shape(logits_a, logits_b, "ensemble_predict");
    Tensor pa = softmax_channels(logits_a);
    Tensor pb = softmax_channels(logits_b);
    for (std::size_t i = 0; i < pa.numel(); ++i) pa[i] = 0.5 * (pa[i] + pb[i]);
    return argmax_channels(pa);
}

}  // namespace dsadapt
