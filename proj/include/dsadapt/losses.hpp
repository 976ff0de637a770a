#pragma once

#include "dsadapt/selftrain.hpp"

namespace dsadapt {

// Per-step loss components. Parts are stored unweighted; combined applies
// the weighting combined = seg + lambda*st + beta*adv.
struct LossBundle {
    double seg_s = 0, seg_t = 0;
    double st_s = 0, st_t = 0;
    double adv_s = 0, adv_t = 0;    // generator terms (enter combined)
    double disc_s = 0, disc_t = 0;  // discriminator terms (logged only)
    double lambda = 0, beta = 0;
    double combined = 0;
};

// Mean cross-entropy over non-ignored pixels. An all-ignored label map gives
// loss 0 and bumps *all_ignored_warnings when provided.
Var seg_loss(const Var& logits, const Tensor& label, int ignore_index,
             long* all_ignored_warnings = nullptr);

// Same arithmetic with the teacher's pseudo-label as target; pseudo-labels
// cover every pixel so nothing is ignored.
Var st_loss(const Var& logits, const PseudoLabel& pseudo);

struct AdvPair {
    Var generator_term;      // drives the backbone: fake features toward "real"
    Var discriminator_term;  // drives the discriminator: real->1, fake->0
};

// Binary cross-entropy realization of the min-max criterion on patch logit
// maps. The discriminator term averages over both maps; the generator term is
// the non-saturating flipped-label objective on the fake map only.
AdvPair adversarial_losses(const Var& disc_out_real, const Var& disc_out_fake);

// Fills lambda/beta/combined on a bundle of parts; throws if any part is
// non-finite.
LossBundle combine(LossBundle parts, double lambda, double beta);

}  // namespace dsadapt
