#include <doctest.h>

#include <cmath>
#include <random>

#include "dsadapt/selftrain.hpp"
#include "test_util.hpp"

using namespace dsadapt;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

EnsembleConfig tiny_config() {
    EnsembleConfig cfg;
    cfg.feature_channels = 6;
    cfg.backbone_width = 6;
    cfg.downsample = 2;
    cfg.num_classes = 4;
    return cfg;
}

void randomize(const std::vector<Var>& params, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, 0.5);
    for (const auto& p : params)
        for (std::size_t i = 0; i < p->value.numel(); ++i) p->value[i] = dist(rng);
}

}  // namespace

TEST_CASE("paradigm construction is mutually exclusive") {
    Rng rng(60);
    StudentEnsemble ensemble(tiny_config(), rng);

    TeacherState dec = make_teacher(Paradigm::decoder_only, ensemble, 0.99);
    CHECK(dec.decoder_s != nullptr);
    CHECK(dec.decoder_t != nullptr);
    CHECK(dec.backbone_t == nullptr);

    TeacherState st = make_teacher(Paradigm::single_target, ensemble, 0.99);
    CHECK(st.decoder_s == nullptr);
    CHECK(st.decoder_t != nullptr);
    CHECK(st.backbone_t != nullptr);

    CHECK_THROWS_AS(make_teacher(Paradigm::decoder_only, ensemble, 1.5), std::invalid_argument);
    CHECK(parse_paradigm("decoder_only") == Paradigm::decoder_only);
    CHECK(parse_paradigm("single_target") == Paradigm::single_target);
    CHECK_THROWS_AS(parse_paradigm("both"), std::invalid_argument);
}

TEST_CASE("ema_update endpoints and closed form") {
    Rng rng(61);
    StudentEnsemble ensemble(tiny_config(), rng);
    std::mt19937_64 drng(62);

    SUBCASE("alpha 0 copies the student exactly") {
        TeacherState teacher = make_teacher(Paradigm::decoder_only, ensemble, 0.0);
        std::vector<Var> student;
        ensemble.decoder_s->collect(student);
        randomize(student, drng);
        ema_update(teacher, ensemble, 0.0);
        for (auto& [te, st] : teacher.ema_pairs(ensemble))
            CHECK(max_abs_diff(te->value, st->value) == 0.0);
        CHECK(teacher.step == 1);
    }

    SUBCASE("alpha 1 leaves the teacher untouched") {
        TeacherState teacher = make_teacher(Paradigm::decoder_only, ensemble, 1.0);
        std::vector<Tensor> before;
        for (const auto& p : teacher.params()) before.push_back(p->value);
        std::vector<Var> student;
        ensemble.decoder_s->collect(student);
        ensemble.decoder_t->collect(student);
        randomize(student, drng);
        ema_update(teacher, ensemble, 1.0);
        std::size_t i = 0;
        for (const auto& p : teacher.params()) CHECK(max_abs_diff(p->value, before[i++]) == 0.0);
    }

    SUBCASE("iterated recurrence matches alpha^t phi0 + (1-alpha^t) theta") {
        for (double alpha : {0.0, 0.5, 0.99, 1.0}) {
            TeacherState teacher = make_teacher(Paradigm::single_target, ensemble, alpha);
            // teacher starts as a copy; make it distinct first
            for (const auto& p : teacher.params())
                for (std::size_t i = 0; i < p->value.numel(); ++i) p->value[i] += 0.37;
            std::vector<Tensor> phi0;  // snapshot in ema-pair order
            for (auto& [te, st] : teacher.ema_pairs(ensemble)) phi0.push_back(te->value);
            const int t = 50;
            for (int it = 0; it < t; ++it) ema_update(teacher, ensemble, alpha);
            double at = std::pow(alpha, t);
            std::size_t idx = 0;
            double worst = 0;
            for (auto& [te, st] : teacher.ema_pairs(ensemble)) {
                for (std::size_t i = 0; i < te->value.numel(); ++i) {
                    double expect = at * phi0[idx][i] + (1.0 - at) * st->value[i];
                    worst = std::max(worst, std::abs(expect - te->value[i]));
                }
                ++idx;
            }
            CHECK(worst < 1e-10);
            CHECK(teacher.step == t);
        }
    }

    SUBCASE("shape mismatch rejected") {
        TeacherState teacher = make_teacher(Paradigm::decoder_only, ensemble, 0.9);
        EnsembleConfig other_cfg = tiny_config();
        other_cfg.num_classes = 5;
        Rng rng2(63);
        StudentEnsemble other(other_cfg, rng2);
        CHECK_THROWS(ema_update(teacher, other, 0.9));
    }
}

TEST_CASE("pseudo_label_decoder_only") {
    Rng rng(64);
    StudentEnsemble ensemble(tiny_config(), rng);
    TeacherState teacher = make_teacher(Paradigm::decoder_only, ensemble, 0.99);
    std::mt19937_64 drng(65);
    Var fp_st = constant(random_tensor({6, 4, 4}, drng));
    Var fp_tt = constant(random_tensor({6, 4, 4}, drng));

    SUBCASE("identical teacher decoders reduce to a single-decoder argmax") {
        std::vector<Var> a, b;
        teacher.decoder_s->collect(a);
        teacher.decoder_t->collect(b);
        for (std::size_t i = 0; i < a.size(); ++i) b[i]->value = a[i]->value;
        PseudoLabel pl = pseudo_label_decoder_only(teacher, fp_st, fp_st, 8, 8);
        Tensor direct;
        {
            NoGradGuard ng;
            direct = argmax_channels(teacher.decoder_s->forward(fp_st, 8, 8)->value);
        }
        CHECK(max_abs_diff(pl.labels, direct) == 0.0);
    }

    SUBCASE("swapping the two teacher decoders leaves the vote unchanged") {
        PseudoLabel ab = pseudo_label_decoder_only(teacher, fp_st, fp_tt, 8, 8);
        TeacherState swapped = teacher;
        std::swap(swapped.decoder_s, swapped.decoder_t);
        PseudoLabel ba = pseudo_label_decoder_only(swapped, fp_tt, fp_st, 8, 8);
        CHECK(max_abs_diff(ab.labels, ba.labels) == 0.0);
    }

    SUBCASE("labels are valid class ids") {
        PseudoLabel pl = pseudo_label_decoder_only(teacher, fp_st, fp_tt, 8, 8);
        for (std::size_t i = 0; i < pl.labels.numel(); ++i) {
            CHECK(pl.labels[i] >= 0.0);
            CHECK(pl.labels[i] <= 3.0);
        }
    }

    SUBCASE("wrong paradigm is a hard error") {
        TeacherState st = make_teacher(Paradigm::single_target, ensemble, 0.99);
        CHECK_THROWS_AS(pseudo_label_decoder_only(st, fp_st, fp_tt, 8, 8),
                        std::invalid_argument);
        CHECK_THROWS_AS(pseudo_label_single_target(teacher, fp_st, ensemble),
                        std::invalid_argument);
    }

    SUBCASE("hand-built two-class soft vote follows the per-pixel winner") {
        Tensor la({2, 2, 2}, {2.0, -1.0, 0.0, 0.0, -2.0, 1.0, 0.0, 0.0});
        Tensor lb({2, 2, 2}, {0.5, 0.5, 1.0, -1.0, -0.5, -0.5, -1.0, 1.0});
        Tensor vote = ensemble_predict(la, lb);
        for (int y = 0; y < 2; ++y)
            for (int x = 0; x < 2; ++x) {
                auto p = [&](const Tensor& l, int c) {
                    double e0 = std::exp(l.at(0, y, x)), e1 = std::exp(l.at(1, y, x));
                    return (c == 0 ? e0 : e1) / (e0 + e1);
                };
                int expect = 0.5 * (p(la, 0) + p(lb, 0)) >= 0.5 * (p(la, 1) + p(lb, 1)) ? 0 : 1;
                CHECK(vote.at(y, x) == expect);
            }
    }
}

TEST_CASE("pseudo_label_single_target matches the manual composition") {
    Rng rng(66);
    StudentEnsemble ensemble(tiny_config(), rng);
    TeacherState teacher = make_teacher(Paradigm::single_target, ensemble, 0.99);
    std::mt19937_64 drng(67);
    Var x_t = constant(random_tensor({3, 8, 8}, drng, 0.5));

    SUBCASE("teacher initialized as a student copy equals the student target path") {
        PseudoLabel pl = pseudo_label_single_target(teacher, x_t, ensemble);
        NoGradGuard ng;
        Var f_st = ensemble.backbone_s->forward(x_t);
        Var f_tt = ensemble.backbone_t->forward(x_t);
        auto [fp_st, fp_tt] = ddm_forward(f_st, f_tt, ensemble.ddm);
        Tensor direct = argmax_channels(ensemble.decoder_t->forward(fp_tt, 8, 8)->value);
        CHECK(max_abs_diff(pl.labels, direct) == 0.0);
    }

    SUBCASE("composition with a diverged student") {
        std::vector<Var> student;
        ensemble.backbone_t->collect(student);
        randomize(student, drng);  // teacher backbone now differs from the student's
        PseudoLabel pl = pseudo_label_single_target(teacher, x_t, ensemble);
        NoGradGuard ng;
        Var f_st = ensemble.backbone_s->forward(x_t);
        Var f_tt = teacher.backbone_t->forward(x_t);
        auto [fp_st, fp_tt] = ddm_forward(f_st, f_tt, ensemble.ddm);
        Tensor direct = argmax_channels(teacher.decoder_t->forward(fp_tt, 8, 8)->value);
        CHECK(max_abs_diff(pl.labels, direct) == 0.0);
    }
}

TEST_CASE("self_training_round") {
    Rng rng(68);
    StudentEnsemble ensemble(tiny_config(), rng);
    std::mt19937_64 drng(69);
    Var x_t = constant(random_tensor({3, 8, 8}, drng, 0.5));

    SUBCASE("round equals ema_update followed by label generation") {
        TeacherState a = make_teacher(Paradigm::decoder_only, ensemble, 0.7);
        TeacherState b = make_teacher(Paradigm::decoder_only, ensemble, 0.7);
        // diverge teachers from students so the EMA update matters
        for (const auto& p : a.params())
            for (std::size_t i = 0; i < p->value.numel(); ++i) p->value[i] += 0.2;
        for (const auto& p : b.params())
            for (std::size_t i = 0; i < p->value.numel(); ++i) p->value[i] += 0.2;

        PseudoLabel via_round = self_training_round(a, ensemble, x_t);

        ema_update(b, ensemble, b.alpha);
        NoGradGuard ng;
        Var f_st = ensemble.backbone_s->forward(x_t);
        Var f_tt = ensemble.backbone_t->forward(x_t);
        auto [fp_st, fp_tt] = ddm_forward(f_st, f_tt, ensemble.ddm);
        PseudoLabel direct = pseudo_label_decoder_only(b, fp_st, fp_tt, 8, 8);

        CHECK(max_abs_diff(via_round.labels, direct.labels) == 0.0);
        CHECK(a.step == b.step);
    }

    SUBCASE("frozen teacher (alpha 1) gives identical labels across rounds") {
        TeacherState teacher = make_teacher(Paradigm::decoder_only, ensemble, 1.0);
        PseudoLabel first = self_training_round(teacher, ensemble, x_t);
        PseudoLabel second = self_training_round(teacher, ensemble, x_t);
        CHECK(max_abs_diff(first.labels, second.labels) == 0.0);
        CHECK(second.source_step == first.source_step + 1);
    }

    SUBCASE("step counter increments by exactly one per round") {
        TeacherState teacher = make_teacher(Paradigm::single_target, ensemble, 0.9);
        long before = teacher.step;
        self_training_round(teacher, ensemble, x_t);
        CHECK(teacher.step == before + 1);
    }
}

TEST_CASE("teacher evaluation produces no gradients") {
    Rng rng(70);
    StudentEnsemble ensemble(tiny_config(), rng);
    TeacherState teacher = make_teacher(Paradigm::decoder_only, ensemble, 0.9);
    std::mt19937_64 drng(71);
    Var x_t = constant(random_tensor({3, 8, 8}, drng, 0.5));

    auto params = ensemble.all_params();
    zero_grads(params);
    self_training_round(teacher, ensemble, x_t);
    for (const auto& p : params) {
        if (p->grad.empty()) continue;
        for (std::size_t i = 0; i < p->grad.numel(); ++i) CHECK(p->grad[i] == 0.0);
    }
    for (const auto& p : teacher.params()) CHECK_FALSE(p->requires_grad);
}
