#pragma once

#include <cstddef>
#include <vector>

#include "htune/graph.hpp"

namespace htune {

struct DiceCeWeights {
    double dice = 0.5;
    double ce = 0.5;
    double smooth = 1.0;
};

/// logits: B x C x H x W (C >= 2); mask: B x H x W holding integer class ids.
/// Soft Dice is averaged over the foreground classes 1..C-1 of every sample;
/// cross-entropy is averaged over all pixels.
Var dice_ce_loss(Var logits, const Tensor& mask, const DiceCeWeights& w = {});

struct FocalParams {
    double alpha = 0.25;
    double gamma = 2.0;
};

/// logits: B x C. alpha applies to class 1, 1 - alpha to every other class.
Var focal_loss(Var logits, const std::vector<std::size_t>& labels, const FocalParams& p = {});

/// Symmetric InfoNCE over the B x B similarity matrix img * txt^T / tau,
/// row i matching column i.
Var info_nce(Var img, Var txt, double tau = 0.07);

}  // namespace htune
