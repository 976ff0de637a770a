#include "dsadapt/selftrain.hpp"

#include <stdexcept>

namespace dsadapt {

Paradigm parse_paradigm(const std::string& s) {
    if (s == "decoder_only") return Paradigm::decoder_only;
    if (s == "single_target") return Paradigm::single_target;
    throw std::invalid_argument("unknown self-training paradigm: " + s);
}

std::string to_string(Paradigm p) {
    return p == Paradigm::decoder_only ? "decoder_only" : "single_target";
}

std::vector<Var> TeacherState::params() const {
    std::vector<Var> out;
    if (decoder_s) decoder_s->collect(out);
    if (decoder_t) decoder_t->collect(out);
    if (backbone_t) backbone_t->collect(out);
    return out;
}

std::vector<std::pair<Var, Var>> TeacherState::ema_pairs(const StudentEnsemble& ensemble) const {
    auto pair_up = [](std::vector<std::pair<Var, Var>>& out, const std::vector<Var>& te,
                      const std::vector<Var>& st) {
        if (te.size() != st.size())
            throw std::runtime_error("teacher/student parameter lists diverge");
        for (std::size_t i = 0; i < te.size(); ++i) {
            check_same_shape(te[i]->value, st[i]->value, "ema_pairs");
            out.emplace_back(te[i], st[i]);
        }
    };
    std::vector<std::pair<Var, Var>> pairs;
    std::vector<Var> te, st;
    if (paradigm == Paradigm::decoder_only) {
        decoder_s->collect(te);
        ensemble.decoder_s->collect(st);
        decoder_t->collect(te);
        ensemble.decoder_t->collect(st);
    } else {
        backbone_t->collect(te);
        ensemble.backbone_t->collect(st);
        decoder_t->collect(te);
        ensemble.decoder_t->collect(st);
    }
    pair_up(pairs, te, st);
    return pairs;
}

TeacherState make_teacher(Paradigm paradigm, const StudentEnsemble& ensemble, double alpha,
                          bool average_probabilities) {
    if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("teacher alpha must be in [0,1]");
    TeacherState t;
    t.paradigm = paradigm;
    t.alpha = alpha;
    t.average_probabilities = average_probabilities;

    Rng scratch(0);  // structure only; every weight is overwritten below
    if (paradigm == Paradigm::decoder_only) {
        t.decoder_s =
            make_decoder(ensemble.config.decoder_kind, "te_decoder_s", ensemble.config, scratch);
        t.decoder_t =
            make_decoder(ensemble.config.decoder_kind, "te_decoder_t", ensemble.config, scratch);
    } else {
        t.backbone_t =
            make_backbone(ensemble.config.backbone_kind, "te_backbone_t", ensemble.config, scratch);
        t.decoder_t =
            make_decoder(ensemble.config.decoder_kind, "te_decoder_t", ensemble.config, scratch);
    }
    for (auto& [te, st] : t.ema_pairs(ensemble)) te->value = st->value;  // init as copy
    for (auto& p : t.params()) p->requires_grad = false;
    return t;
}

void ema_update(TeacherState& teacher, const StudentEnsemble& ensemble, double alpha) {
    if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("ema_update: alpha out of [0,1]");
    for (auto& [te, st] : teacher.ema_pairs(ensemble)) {
        for (std::size_t i = 0; i < te->value.numel(); ++i)
            te->value[i] = alpha * te->value[i] + (1.0 - alpha) * st->value[i];
    }
    ++teacher.step;
}

namespace {

Tensor vote(const Tensor& logits_a, const Tensor& logits_b, bool average_probabilities) {
    check_same_shape(logits_a, logits_b, "pseudo_label vote");
    if (average_probabilities) return ensemble_predict(logits_a, logits_b);
    Tensor mean = logits_a;
    for (std::size_t i = 0; i < mean.numel(); ++i) mean[i] = 0.5 * (mean[i] + logits_b[i]);
    return argmax_channels(mean);
}

}  // namespace

PseudoLabel pseudo_label_decoder_only(const TeacherState& teacher, const Var& fp_st,
                                      const Var& fp_tt, int out_h, int out_w) {
    if (teacher.paradigm != Paradigm::decoder_only)
        throw std::invalid_argument("pseudo_label_decoder_only: teacher paradigm is " +
                                    to_string(teacher.paradigm));
    NoGradGuard ng;
    Var la = teacher.decoder_s->forward(fp_st, out_h, out_w);
    Var lb = teacher.decoder_t->forward(fp_tt, out_h, out_w);
    return {vote(la->value, lb->value, teacher.average_probabilities), teacher.step};
}

PseudoLabel pseudo_label_single_target(const TeacherState& teacher, const Var& x_t,
                                       const StudentEnsemble& ensemble) {
    if (teacher.paradigm != Paradigm::single_target)
        throw std::invalid_argument("pseudo_label_single_target: teacher paradigm is " +
                                    to_string(teacher.paradigm));
    NoGradGuard ng;
    int h = x_t->value.dim(1), w = x_t->value.dim(2);
    Var f_st = ensemble.backbone_s->forward(x_t);
    Var f_tt = teacher.backbone_t->forward(x_t);
    auto [fp_st, fp_tt] = ddm_forward(f_st, f_tt, ensemble.ddm);
    Var logits = teacher.decoder_t->forward(fp_tt, h, w);
    return {argmax_channels(logits->value), teacher.step};
}

PseudoLabel self_training_round(TeacherState& teacher, const StudentEnsemble& ensemble,
                                const Var& x_t) {
    ema_update(teacher, ensemble, teacher.alpha);
    if (teacher.paradigm == Paradigm::single_target)
        return pseudo_label_single_target(teacher, x_t, ensemble);

    NoGradGuard ng;
    int h = x_t->value.dim(1), w = x_t->value.dim(2);
    Var f_st = ensemble.backbone_s->forward(x_t);
    Var f_tt = ensemble.backbone_t->forward(x_t);
    auto [fp_st, fp_tt] = ddm_forward(f_st, f_tt, ensemble.ddm);
    return pseudo_label_decoder_only(teacher, fp_st, fp_tt, h, w);
}

}  // namespace dsadapt
