#pragma once

#include <array>
#include <optional>

#include "dsmcd/autograd.hpp"
#include "dsmcd/grid.hpp"

namespace dsmcd::objective {

/// Fixed multitask loss weights (pseudo, height, semantic).
struct LossWeights {
    double lambda_pseudo = 0.2;
    double lambda_height = 0.2;
    double lambda_semantic = 0.6;

    void validate() const;
};

/// Per-class cross-entropy weights (background, demolished, newly-built).
struct ClassWeights {
    double background = 0.05;
    double demolished = 0.95;
    double newly_built = 0.95;

    std::array<double, 3> as_array() const { return {background, demolished, newly_built}; }
    void validate() const;
};

/// Mean over pixels of w_label * (-log p_label), probabilities clamped to
/// [1e-7, 1]. Softmax is applied internally on the logits path.
nn::VarPtr weighted_ce(const nn::VarPtr& logits_or_probs, const LabelMap& labels,
                       const ClassWeights& weights, bool inputs_are_probs);

/// Mean squared error over the full map (background included); both sides in
/// normalized height space.
nn::VarPtr mse_height(const nn::VarPtr& pred_norm, const std::vector<double>& gt_norm);

/// Channel pairing between pseudo (unchanged, positive, negative) and
/// semantic (background, demolished, newly-built) class probabilities:
/// semantic channel c pairs with pseudo channel kSemToPseudo[c].
inline constexpr std::array<int, 3> kSemToPseudo = {0, 2, 1};

/// Mean L1 distance between the paired per-pixel probability vectors over
/// overlap pixels; 0 on an empty mask. Default training keeps this as a
/// logged diagnostic; an opt-in weight adds it to the total.
nn::VarPtr consistency(const nn::VarPtr& pseudo_probs, const nn::VarPtr& sem_probs,
                       const MaskU8& gt_overlap);

/// Softmax over the 3 channels of a [3,H,W] logit map.
nn::VarPtr softmax_channels(const nn::VarPtr& logits);

/// lambda1*L_pseudo + lambda2*L_height + lambda3*L_semantic; absent
/// components contribute zero.
nn::VarPtr total_loss(const nn::VarPtr& l_pseudo, const nn::VarPtr& l_height,
                      const nn::VarPtr& l_semantic, const LossWeights& lw);

} // namespace dsmcd::objective
