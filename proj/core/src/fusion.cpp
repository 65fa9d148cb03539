#include "dsmcd/fusion.hpp"

#include <stdexcept>

namespace dsmcd::model {

using namespace nn;

CfmLevel::CfmLevel(ParamStore& ps, const std::string& prefix, int dim, int heads, int prev_dim,
                   Rng& rng)
    : norm_h_(ps, prefix + ".norm_h", dim, rng),
      norm_i_(ps, prefix + ".norm_i", dim, rng),
      attn_h2i_(ps, prefix + ".attn_h2i", dim, heads, rng),
      attn_i2h_(ps, prefix + ".attn_i2h", dim, heads, rng),
      merge_fc1_(ps, prefix + ".merge_fc1", 2 * dim, dim, rng),
      merge_fc2_(ps, prefix + ".merge_fc2", dim, dim, rng),
      merge_conv_(ps, prefix + ".merge_conv", dim, dim, 3, 1, 1, rng),
      conv_norm_(ps, prefix + ".conv_norm", dim, rng) {
    if (prev_dim > 0) {
        prev_proj_ = Conv2d(ps, prefix + ".prev_proj", prev_dim, dim, 1, 1, 0, rng);
        has_prev_ = true;
    }
}

CfmLevel::AttentionPair CfmLevel::attention_pair(const PyramidLevel& x_h,
                                                 const PyramidLevel& x_i) const {
    if (x_h.h != x_i.h || x_h.w != x_i.w || x_h.feat->dim(0) != x_i.feat->dim(0))
        throw std::invalid_argument("CfmLevel: misaligned modal inputs");
    VarPtr th = norm_h_.forward(chw_to_tokens(x_h.feat));
    VarPtr ti = norm_i_.forward(chw_to_tokens(x_i.feat));
    return {attn_h2i_.attend(th, ti), attn_i2h_.attend(ti, th)};
}

PyramidLevel CfmLevel::forward(const PyramidLevel& x_h, const PyramidLevel& x_i,
                               const std::optional<PyramidLevel>& f_prev) const {
    auto [a, b] = attention_pair(x_h, x_i);
    VarPtr cat = concat_cols({a, b});
    VarPtr m = merge_fc2_.forward(gelu(merge_fc1_.forward(cat)));
    VarPtr merged = tokens_to_chw(m, x_h.h, x_h.w);
    merged = gelu(conv_norm_.forward(merge_conv_.forward(merged)));

    if (f_prev) {
        if (!has_prev_) throw std::invalid_argument("CfmLevel: unexpected residual input");
        if (f_prev->h != 2 * x_h.h || f_prev->w != 2 * x_h.w)
            throw std::invalid_argument("CfmLevel: residual must come from the next finer level");
        VarPtr resid = avg_pool2(prev_proj_.forward(f_prev->feat));
        merged = add(merged, resid);
    }
    return {merged, x_h.h, x_h.w};
}

Cfm::Cfm(ParamStore& ps, const BackboneConfig& config, Rng& rng) {
    for (int n = 0; n < 4; ++n) {
        const int prev_dim = n == 0 ? 0 : config.embed_dims[n - 1];
        levels_[n] = CfmLevel(ps, "cfm.level" + std::to_string(n + 1), config.embed_dims[n],
                              config.num_heads[n], prev_dim, rng);
    }
}

FusedPyramid Cfm::forward(const FeaturePyramid& dsm, const FeaturePyramid& image) const {
    FusedPyramid fused;
    std::optional<PyramidLevel> prev;
    for (int n = 0; n < 4; ++n) {
        fused[n] = levels_[n].forward(dsm[n], image[n], prev);
        prev = fused[n];
    }
    return fused;
}

} // namespace dsmcd::model
