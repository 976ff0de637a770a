#include <doctest.h>

#include <cmath>
#include <random>

#include "dsadapt/data.hpp"
#include "dsadapt/losses.hpp"
#include "test_util.hpp"

using namespace dsadapt;
using testutil::gradcheck;
using testutil::random_tensor;

TEST_CASE("seg_loss") {
    SUBCASE("confident correct logits drive the loss to zero") {
        Tensor logits({3, 2, 2});
        Tensor label({2, 2}, {0, 1, 2, 1});
        for (int y = 0; y < 2; ++y)
            for (int x = 0; x < 2; ++x)
                logits.at(static_cast<int>(label.at(y, x)), y, x) = 50.0;
        CHECK(seg_loss(constant(logits), label, 255)->value[0] < 1e-12);
    }

    SUBCASE("uniform logits over K classes cost ln K per pixel") {
        for (int k : {2, 3, 6}) {
            Tensor logits = Tensor::full({k, 3, 3}, 0.42);
            Tensor label({3, 3});
            double loss = seg_loss(constant(logits), label, 255)->value[0];
            CHECK(loss == doctest::Approx(std::log(k)).epsilon(1e-12));
        }
    }

    SUBCASE("random 2x2 three-class case matches a per-pixel oracle") {
        std::mt19937_64 rng(80);
        Var logits = parameter(random_tensor({3, 2, 2}, rng), "logits");
        Tensor label({2, 2}, {2, 0, 1, 2});
        double expect = 0;
        for (int y = 0; y < 2; ++y)
            for (int x = 0; x < 2; ++x) {
                int cls = static_cast<int>(label.at(y, x));
                double z = 0;
                for (int c = 0; c < 3; ++c) z += std::exp(logits->value.at(c, y, x));
                expect -= std::log(std::exp(logits->value.at(cls, y, x)) / z);
            }
        expect /= 4;
        CHECK(seg_loss(logits, label, 255)->value[0] == doctest::Approx(expect).epsilon(1e-12));
    }

    SUBCASE("ignored pixels are excluded from the mean") {
        Tensor logits({2, 1, 2});
        logits.at(0, 0, 0) = 10.0;  // pixel 0 confidently class 0, correct
        Tensor label({1, 2}, {0, 255});
        double solo = seg_loss(constant(logits), label, 255)->value[0];
        Tensor label_both({1, 2}, {0, 0});
        double both = seg_loss(constant(logits), label_both, 255)->value[0];
        CHECK(solo < both);  // the uniform pixel no longer dilutes the mean
    }

    SUBCASE("all-ignored label yields zero and a counted warning") {
        long warnings = 0;
        Tensor logits({2, 2, 2});
        Tensor label = Tensor::full({2, 2}, 255);
        CHECK(seg_loss(constant(logits), label, 255, &warnings)->value[0] == 0.0);
        CHECK(warnings == 1);
    }

    SUBCASE("invariant to per-pixel constant shifts across class logits") {
        std::mt19937_64 rng(81);
        Tensor logits = random_tensor({4, 3, 3}, rng);
        Tensor label({3, 3});
        for (std::size_t i = 0; i < label.numel(); ++i) label[i] = static_cast<double>(i % 4);
        double base = seg_loss(constant(logits), label, 255)->value[0];
        Tensor shifted = logits;
        for (int y = 0; y < 3; ++y)
            for (int x = 0; x < 3; ++x)
                for (int c = 0; c < 4; ++c) shifted.at(c, y, x) += 0.1 * (y * 3 + x) - 1.3;
        double moved = seg_loss(constant(shifted), label, 255)->value[0];
        CHECK(moved == doctest::Approx(base).epsilon(1e-10));
    }
}

TEST_CASE("st_loss") {
    std::mt19937_64 rng(82);
    Var logits = parameter(random_tensor({3, 4, 4}, rng), "logits");

    SUBCASE("equals seg_loss on the same targets") {
        PseudoLabel pseudo{Tensor({4, 4}), 0};
        for (std::size_t i = 0; i < pseudo.labels.numel(); ++i)
            pseudo.labels[i] = static_cast<double>(i % 3);
        CHECK(st_loss(logits, pseudo)->value[0] ==
              seg_loss(logits, pseudo.labels, kIgnoreIndex)->value[0]);
    }

    SUBCASE("self-labeled loss is the prediction self-entropy, below ln K") {
        PseudoLabel pseudo{argmax_channels(logits->value), 0};
        double loss = st_loss(logits, pseudo)->value[0];
        CHECK(loss < std::log(3.0));
        CHECK(loss > 0.0);
    }

    SUBCASE("one-hot-like logits matching the pseudo-label cost nothing") {
        Tensor sharp({2, 2, 2});
        Tensor labels({2, 2}, {1, 0, 0, 1});
        for (int y = 0; y < 2; ++y)
            for (int x = 0; x < 2; ++x) sharp.at(static_cast<int>(labels.at(y, x)), y, x) = 60.0;
        CHECK(st_loss(constant(sharp), {labels, 0})->value[0] < 1e-12);
    }
}

TEST_CASE("adversarial_losses") {
    SUBCASE("zero logits put both terms at ln 2") {
        Var real = constant(Tensor({1, 3, 3}));
        Var fake = constant(Tensor({1, 3, 3}));
        auto pair = adversarial_losses(real, fake);
        CHECK(pair.generator_term->value[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
        CHECK(pair.discriminator_term->value[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }

    SUBCASE("a perfect discriminator zeroes its term and saturates the generator's") {
        Var real = constant(Tensor::full({1, 2, 2}, 40.0));
        Var fake = constant(Tensor::full({1, 2, 2}, -40.0));
        auto pair = adversarial_losses(real, fake);
        CHECK(pair.discriminator_term->value[0] < 1e-12);
        CHECK(pair.generator_term->value[0] > 10.0);
        CHECK(std::isfinite(pair.generator_term->value[0]));
    }

    SUBCASE("random patch maps match the scalar BCE oracle") {
        std::mt19937_64 rng(83);
        Tensor real_t = random_tensor({1, 3, 3}, rng, 2.0);
        Tensor fake_t = random_tensor({1, 3, 3}, rng, 2.0);
        auto pair = adversarial_losses(constant(real_t), constant(fake_t));
        double d = 0, g = 0;
        for (int i = 0; i < 9; ++i) {
            double pr = 1.0 / (1.0 + std::exp(-real_t[i]));
            double pf = 1.0 / (1.0 + std::exp(-fake_t[i]));
            d += -std::log(pr) - std::log(1 - pf);
            g += -std::log(pf);
        }
        CHECK(pair.discriminator_term->value[0] == doctest::Approx(d / 18).epsilon(1e-10));
        CHECK(pair.generator_term->value[0] == doctest::Approx(g / 9).epsilon(1e-10));
    }

    SUBCASE("shape mismatch rejected") {
        CHECK_THROWS_AS(
            adversarial_losses(constant(Tensor({1, 2, 2})), constant(Tensor({1, 3, 3}))),
            std::invalid_argument);
    }
}

TEST_CASE("combine") {
    SUBCASE("zero weights reduce to the segmentation terms") {
        LossBundle parts;
        parts.seg_s = 0.8;
        parts.seg_t = 1.1;
        parts.st_s = parts.st_t = 5.0;
        parts.adv_s = parts.adv_t = 7.0;
        LossBundle out = combine(parts, 0.0, 0.0);
        CHECK(out.combined == doctest::Approx(1.9).epsilon(1e-14));
    }

    SUBCASE("unit parts with the published weights") {
        LossBundle parts;
        parts.seg_s = parts.seg_t = 1.0;
        parts.st_s = parts.st_t = 1.0;
        parts.adv_s = parts.adv_t = 1.0;
        LossBundle out = combine(parts, 0.25, 0.005);
        CHECK(out.combined == doctest::Approx(2.51).epsilon(1e-12));
    }

    SUBCASE("random parts match an independent recomputation") {
        std::mt19937_64 rng(84);
        std::uniform_real_distribution<double> u(0.0, 3.0);
        for (int trial = 0; trial < 20; ++trial) {
            LossBundle parts;
            parts.seg_s = u(rng);
            parts.seg_t = u(rng);
            parts.st_s = u(rng);
            parts.st_t = u(rng);
            parts.adv_s = u(rng);
            parts.adv_t = u(rng);
            double lambda = u(rng), beta = u(rng);
            LossBundle out = combine(parts, lambda, beta);
            double expect = parts.seg_s + parts.seg_t + lambda * (parts.st_s + parts.st_t) +
                            beta * (parts.adv_s + parts.adv_t);
            CHECK(std::abs(out.combined - expect) < 1e-8);
        }
    }

    SUBCASE("combined responds linearly to part perturbations") {
        LossBundle parts;
        parts.seg_s = 1.0;
        parts.st_s = 2.0;
        parts.adv_s = 3.0;
        double base = combine(parts, 0.25, 0.005).combined;
        LossBundle bumped = parts;
        bumped.st_s += 1.0;
        CHECK(combine(bumped, 0.25, 0.005).combined - base ==
              doctest::Approx(0.25).epsilon(1e-12));
        bumped = parts;
        bumped.adv_t += 2.0;
        CHECK(combine(bumped, 0.25, 0.005).combined - base ==
              doctest::Approx(0.01).epsilon(1e-12));
    }

    SUBCASE("non-finite parts abort with diagnostics") {
        LossBundle parts;
        parts.seg_s = std::numeric_limits<double>::quiet_NaN();
        CHECK_THROWS_AS(combine(parts, 0.25, 0.005), std::runtime_error);
        LossBundle parts2;
        parts2.adv_t = std::numeric_limits<double>::infinity();
        CHECK_THROWS_AS(combine(parts2, 0.25, 0.005), std::runtime_error);
    }
}

TEST_CASE("weighted-sum gradient equals the sum of per-term gradients") {
    std::mt19937_64 rng(85);
    Var logits = parameter(random_tensor({3, 2, 2}, rng), "logits");
    Tensor label({2, 2}, {0, 1, 2, 0});
    PseudoLabel pseudo{Tensor({2, 2}, {1, 1, 0, 2}), 0};
    const double lambda = 0.25, beta = 0.005;

    auto build = [&] {
        Var seg = seg_loss(logits, label, 255);
        Var st = st_loss(logits, pseudo);
        Var adv = bce_logits_mean(logits, 1.0);
        return add(seg, add(scale(st, lambda), scale(adv, beta)));
    };
    CHECK(gradcheck(build, {logits}) < 1e-6);

    // grad(combined) = grad(seg) + lambda grad(st) + beta grad(adv)
    auto grad_of = [&](const std::function<Var()>& f) {
        logits->zero_grad();
        backward(f());
        return logits->grad;
    };
    Tensor g_all = grad_of(build);
    Tensor g_seg = grad_of([&] { return seg_loss(logits, label, 255); });
    Tensor g_st = grad_of([&] { return st_loss(logits, pseudo); });
    Tensor g_adv = grad_of([&] { return bce_logits_mean(logits, 1.0); });
    for (std::size_t i = 0; i < g_all.numel(); ++i)
        CHECK(g_all[i] ==
              doctest::Approx(g_seg[i] + lambda * g_st[i] + beta * g_adv[i]).epsilon(1e-10));
}
