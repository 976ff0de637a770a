#pragma once

#include <string>
#include <vector>

#include "dsadapt/nn.hpp"

namespace dsadapt {

// Domain disentangled module. Fuses a source-style / target-style feature
// pair from one image, splits unique and invariant parts, and re-emits one
// refreshed map per style at the original [C,h,w] shape.
struct DdmParams {
    int channels = 0;
    int reduced = 0;

    DenseLayer reduce;              // C -> C/r, applied to the pooled fused vector
    DenseLayer expand_s, expand_t;  // C/r -> C, style-specific gate logits
    Conv2dLayer fuse_conv;          // 3x3 same-pad, fused feature map
    Conv2dLayer project_s, project_t;  // 1x1, 2C -> C after concatenation

    DdmParams() = default;
    DdmParams(const std::string& name, int channels, int reduction, Rng& rng);
    void collect(std::vector<Var>& out) const;
};

struct ChannelGates {
    Var v_s, v_t;  // [C] each, elementwise complementary
};

struct RelationMasks {
    Var m_s, m_t, m_st;  // [C,C], row-stochastic
};

struct FusedPair {
    Var prototype;  // z_ST [C/r]
    Var feature;    // Z_ST [C,h,w]
};

// z_ST = reduce(avg(F_S + F_T)), Z_ST = fuse_conv(F_S + F_T)
FusedPair ddm_fuse(const Var& f_s, const Var& f_t, const DdmParams& params);

// two-way softmax of the style-expanded prototypes
ChannelGates ddm_unique_gates(const Var& prototype, const DdmParams& params);

// F_U-S[i] = F_S[i] * v_s[i], F_U-T[i] = F_T[i] * v_t[i]
std::pair<Var, Var> ddm_apply_gates(const Var& f_s, const Var& f_t, const ChannelGates& gates);

// M[j,i] = softmax_i(<F[i], Z[j]>) over flattened channels; m_st is the mean mask
RelationMasks ddm_relation_masks(const Var& f_s, const Var& f_t, const Var& fused_feature);

// F_I[j] = sum_i M_ST[j,i] * F[i]
std::pair<Var, Var> ddm_invariant_features(const Var& f_s, const Var& f_t, const Var& m_st);

// Full pipeline: fuse, gate, mask, mix, concat, project back to C channels.
std::pair<Var, Var> ddm_forward(const Var& f_s, const Var& f_t, const DdmParams& params);

}  // namespace dsadapt
