#pragma once

#include <memory>
#include <string>
#include <utility>

#include "dsadapt/network.hpp"

namespace dsadapt {

enum class Paradigm { decoder_only, single_target };

Paradigm parse_paradigm(const std::string& s);
std::string to_string(Paradigm p);

struct PseudoLabel {
    Tensor labels;  // [H,W] class index map, no ignore values
    long source_step = 0;
};

// EMA copies of the student components named by the paradigm. decoder_only
// carries both teacher decoders; single_target carries the target backbone
// and target decoder. Mutually exclusive by construction.
class TeacherState {
public:
    Paradigm paradigm = Paradigm::decoder_only;
    double alpha = 0.99;
    long step = 0;
    bool average_probabilities = true;  // soft voting on probs (default) or raw logits

    std::shared_ptr<Decoder> decoder_s;    // decoder_only only
    std::shared_ptr<Decoder> decoder_t;    // both paradigms
    std::shared_ptr<Backbone> backbone_t;  // single_target only

    std::vector<Var> params() const;
    // (teacher, student) parameter pairs driven by the EMA recurrence
    std::vector<std::pair<Var, Var>> ema_pairs(const StudentEnsemble& ensemble) const;
};

TeacherState make_teacher(Paradigm paradigm, const StudentEnsemble& ensemble, double alpha,
                          bool average_probabilities = true);

// phi_t = alpha * phi_{t-1} + (1 - alpha) * theta_t, step += 1
void ema_update(TeacherState& teacher, const StudentEnsemble& ensemble, double alpha);
inline void ema_update(TeacherState& teacher, const StudentEnsemble& ensemble) {
    ema_update(teacher, ensemble, teacher.alpha);
}

// argmax of the soft-voted teacher decoder outputs on the disentangled
// target features; gradient-free by construction.
PseudoLabel pseudo_label_decoder_only(const TeacherState& teacher, const Var& fp_st,
                                      const Var& fp_tt, int out_h, int out_w);

// Single-target path: student B_S and teacher B_T feed the student DDM; the
// teacher target decoder alone provides the labels.
PseudoLabel pseudo_label_single_target(const TeacherState& teacher, const Var& x_t,
                                       const StudentEnsemble& ensemble);

// EMA update, then the paradigm-appropriate pseudo-label generation.
PseudoLabel self_training_round(TeacherState& teacher, const StudentEnsemble& ensemble,
                                const Var& x_t);

}  // namespace dsadapt
