#include "dsadapt/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace dsadapt {

Var seg_loss(const Var& logits, const Tensor& label, int ignore_index,
             long* all_ignored_warnings) {
    bool any_scored = false;
    for (std::size_t i = 0; i < label.numel() && !any_scored; ++i)
        any_scored = static_cast<int>(label[i]) != ignore_index;
    if (!any_scored && all_ignored_warnings) ++*all_ignored_warnings;
    return softmax_xent_mean(logits, label, ignore_index);
}

Var st_loss(const Var& logits, const PseudoLabel& pseudo) {
    return seg_loss(logits, pseudo.labels, /*ignore_index=*/-1);
}

AdvPair adversarial_losses(const Var& disc_out_real, const Var& disc_out_fake) {
    check_same_shape(disc_out_real->value, disc_out_fake->value, "adversarial_losses");
    AdvPair out;
    out.generator_term = bce_logits_mean(disc_out_fake, 1.0);
    out.discriminator_term = scale(
        add(bce_logits_mean(disc_out_real, 1.0), bce_logits_mean(disc_out_fake, 0.0)), 0.5);
    return out;
}

LossBundle combine(LossBundle parts, double lambda, double beta) {
    parts.lambda = lambda;
    parts.beta = beta;
    parts.combined = (parts.seg_s + parts.seg_t) + lambda * (parts.st_s + parts.st_t) +
                     beta * (parts.adv_s + parts.adv_t);
    const double all[] = {parts.seg_s, parts.seg_t,  parts.st_s,   parts.st_t, parts.adv_s,
                          parts.adv_t, parts.disc_s, parts.disc_t, parts.combined};
    for (double v : all)
        if (!std::isfinite(v))
            throw std::runtime_error(
                "non-finite loss component: seg=(" + std::to_string(parts.seg_s) + "," +
                std::to_string(parts.seg_t) + ") st=(" + std::to_string(parts.st_s) + "," +
                std::to_string(parts.st_t) + ") adv=(" + std::to_string(parts.adv_s) + "," +
                std::to_string(parts.adv_t) + ") disc=(" + std::to_string(parts.disc_s) + "," +
                std::to_string(parts.disc_t) + ")");
    return parts;
}

}  // namespace dsadapt
