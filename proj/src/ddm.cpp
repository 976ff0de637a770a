#include "dsadapt/ddm.hpp"

#include <algorithm>
#include <stdexcept>

namespace dsadapt {

DdmParams::DdmParams(const std::string& name, int channels, int reduction, Rng& rng)
    : channels(channels), reduced(std::max(1, channels / reduction)) {
    if (channels < 1 || reduction < 1) throw std::invalid_argument("DdmParams: bad sizes");
    reduce = DenseLayer(name + ".reduce", channels, reduced, rng);
    expand_s = DenseLayer(name + ".expand_s", reduced, channels, rng);
    expand_t = DenseLayer(name + ".expand_t", reduced, channels, rng);
    fuse_conv = Conv2dLayer(name + ".fuse_conv", channels, channels, 3, 1, 1, rng);
    project_s = Conv2dLayer(name + ".project_s", 2 * channels, channels, 1, 1, 0, rng);
    project_t = Conv2dLayer(name + ".project_t", 2 * channels, channels, 1, 1, 0, rng);
}

void DdmParams::collect(std::vector<Var>& out) const {
    reduce.collect(out);
    expand_s.collect(out);
    expand_t.collect(out);
    fuse_conv.collect(out);
    project_s.collect(out);
    project_t.collect(out);
}

namespace {

void check_pair(const Var& f_s, const Var& f_t, int channels) {
    check_same_shape(f_s->value, f_t->value, "ddm");
    if (f_s->value.rank() != 3) throw std::invalid_argument("ddm: feature maps must be [C,h,w]");
    if (channels > 0 && f_s->value.dim(0) != channels)
        throw std::invalid_argument("ddm: channel count mismatch with parameters");
}

}  // namespace

FusedPair ddm_fuse(const Var& f_s, const Var& f_t, const DdmParams& params) {
    check_pair(f_s, f_t, params.channels);
    Var fused = add(f_s, f_t);
    FusedPair out;
    out.prototype = params.reduce.forward(global_avg_pool(fused));
    out.feature = params.fuse_conv.forward(fused);
    return out;
}

ChannelGates ddm_unique_gates(const Var& prototype, const DdmParams& params) {
    Var z_s = params.expand_s.forward(prototype);
    Var z_t = params.expand_t.forward(prototype);
    // exp(z_s)/(exp(z_s)+exp(z_t)) computed in its overflow-free sigmoid form
    ChannelGates gates;
    gates.v_s = sigmoid(sub(z_s, z_t));
    gates.v_t = sigmoid(sub(z_t, z_s));
    return gates;
}

std::pair<Var, Var> ddm_apply_gates(const Var& f_s, const Var& f_t, const ChannelGates& gates) {
    check_pair(f_s, f_t, 0);
    return {channel_scale(f_s, gates.v_s), channel_scale(f_t, gates.v_t)};
}

RelationMasks ddm_relation_masks(const Var& f_s, const Var& f_t, const Var& fused_feature) {
    check_pair(f_s, f_t, 0);
    check_same_shape(f_s->value, fused_feature->value, "ddm_relation_masks");
    int c = f_s->value.dim(0);
    int n = f_s->value.dim(1) * f_s->value.dim(2);
    Var fs_flat = reshape(f_s, {c, n});
    Var ft_flat = reshape(f_t, {c, n});
    Var z_flat = reshape(fused_feature, {c, n});

    RelationMasks masks;
    masks.m_s = row_softmax(matmul(z_flat, fs_flat, false, true));
    masks.m_t = row_softmax(matmul(z_flat, ft_flat, false, true));
    masks.m_st = scale(add(masks.m_s, masks.m_t), 0.5);
    return masks;
}

std::pair<Var, Var> ddm_invariant_features(const Var& f_s, const Var& f_t, const Var& m_st) {
    check_pair(f_s, f_t, 0);
    int c = f_s->value.dim(0);
    int h = f_s->value.dim(1), w = f_s->value.dim(2);
    if (m_st->value.rank() != 2 || m_st->value.dim(0) != c || m_st->value.dim(1) != c)
        throw std::invalid_argument("ddm_invariant_features: mask must be [C,C]");
    Var inv_s = reshape(matmul(m_st, reshape(f_s, {c, h * w})), {c, h, w});
    Var inv_t = reshape(matmul(m_st, reshape(f_t, {c, h * w})), {c, h, w});
    return {inv_s, inv_t};
}

std::pair<Var, Var> ddm_forward(const Var& f_s, const Var& f_t, const DdmParams& params) {
    check_pair(f_s, f_t, params.channels);
    FusedPair fused = ddm_fuse(f_s, f_t, params);
    ChannelGates gates = ddm_unique_gates(fused.prototype, params);
    auto [unique_s, unique_t] = ddm_apply_gates(f_s, f_t, gates);
    RelationMasks masks = ddm_relation_masks(f_s, f_t, fused.feature);
    auto [inv_s, inv_t] = ddm_invariant_features(f_s, f_t, masks.m_st);
    Var out_s = params.project_s.forward(concat_channels(unique_s, inv_s));
    Var out_t = params.project_t.forward(concat_channels(unique_t, inv_t));
    return {out_s, out_t};
}

}  // namespace dsadapt
