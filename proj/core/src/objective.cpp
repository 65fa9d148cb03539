#include "dsmcd/objective.hpp"

#include <cmath>
#include <stdexcept>

namespace dsmcd::objective {

using namespace nn;

void LossWeights::validate() const {
    if (lambda_pseudo < 0.0 || lambda_height < 0.0 || lambda_semantic < 0.0)
        throw std::invalid_argument("LossWeights: weights must be non-negative");
    if (lambda_pseudo == 0.0 && lambda_height == 0.0 && lambda_semantic == 0.0)
        throw std::invalid_argument("LossWeights: at least one weight must be positive");
}

void ClassWeights::validate() const {
    if (background < 0.0 || demolished < 0.0 || newly_built < 0.0)
        throw std::invalid_argument("ClassWeights: weights must be non-negative");
    if (background == 0.0 && demolished == 0.0 && newly_built == 0.0)
        throw std::invalid_argument("ClassWeights: all weights are zero");
}

VarPtr weighted_ce(const VarPtr& logits_or_probs, const LabelMap& labels,
                   const ClassWeights& weights, bool inputs_are_probs) {
    weights.validate();
    if (inputs_are_probs)
        return weighted_ce_probs(logits_or_probs, labels, weights.as_array());
    return weighted_ce_logits(logits_or_probs, labels, weights.as_array());
}

VarPtr mse_height(const VarPtr& pred_norm, const std::vector<double>& gt_norm) {
    return mse_to_target(pred_norm, gt_norm);
}

VarPtr softmax_channels(const VarPtr& logits) {
    if (logits->shape.size() != 3)
        throw std::invalid_argument("softmax_channels: expected [C,H,W]");
    const int h = logits->dim(1), w = logits->dim(2);
    return tokens_to_chw(softmax_rows(chw_to_tokens(logits)), h, w);
}

VarPtr consistency(const VarPtr& pseudo_probs, const VarPtr& sem_probs,
                   const MaskU8& gt_overlap) {
    return masked_pair_l1(pseudo_probs, sem_probs, gt_overlap, kSemToPseudo);
}

VarPtr total_loss(const VarPtr& l_pseudo, const VarPtr& l_height, const VarPtr& l_semantic,
                  const LossWeights& lw) {
    lw.validate();
    for (const VarPtr& l : {l_pseudo, l_height, l_semantic})
        if (l && !std::isfinite(l->value[0]))
            throw std::runtime_error("total_loss: non-finite loss component");
    VarPtr total;
    auto accumulate = [&total](const VarPtr& term, double weight) {
        if (!term) return;
        VarPtr scaled = scale(term, weight);
        total = total ? add(total, scaled) : scaled;
    };
    accumulate(l_pseudo, lw.lambda_pseudo);
    accumulate(l_height, lw.lambda_height);
    accumulate(l_semantic, lw.lambda_semantic);
    if (!total) total = constant_scalar(0.0);
    return total;
}

} // namespace dsmcd::objective
