#pragma once

#include <optional>
#include <string>

#include "dsmcd/backbone.hpp"

namespace dsmcd::model {

/// Cross-modal fusion at one pyramid level: two symmetric cross-attention
/// operators (DSM queries over image keys/values and vice versa), merged by
/// an MLP plus 3x3 convolution unit, with a projected residual from the
/// previous (finer) fused level.
class CfmLevel {
public:
    CfmLevel() = default;
    CfmLevel(nn::ParamStore& ps, const std::string& prefix, int dim, int heads, int prev_dim,
             Rng& rng);

    struct AttentionPair {
        nn::VarPtr a;  // DSM queries attending to image keys/values
        nn::VarPtr b;  // image queries attending to DSM keys/values
    };
    AttentionPair attention_pair(const PyramidLevel& x_h, const PyramidLevel& x_i) const;

    PyramidLevel forward(const PyramidLevel& x_h, const PyramidLevel& x_i,
                         const std::optional<PyramidLevel>& f_prev) const;

    const nn::MultiHeadAttention& attn_h_to_i() const { return attn_h2i_; }
    const nn::MultiHeadAttention& attn_i_to_h() const { return attn_i2h_; }

private:
    nn::LayerNorm norm_h_, norm_i_;
    nn::MultiHeadAttention attn_h2i_, attn_i2h_;
    nn::Linear merge_fc1_, merge_fc2_;
    nn::Conv2d merge_conv_;
    nn::ChannelNorm conv_norm_;
    nn::Conv2d prev_proj_;  // 1x1, previous level width -> this width
    bool has_prev_ = false;
};

using FusedPyramid = FeaturePyramid;

/// Full fusion stack over the four pyramid levels.
class Cfm {
public:
    Cfm() = default;
    Cfm(nn::ParamStore& ps, const BackboneConfig& config, Rng& rng);

    FusedPyramid forward(const FeaturePyramid& dsm, const FeaturePyramid& image) const;
    const CfmLevel& level(int n) const { return levels_[n]; }

private:
    std::array<CfmLevel, 4> levels_;
};

} // namespace dsmcd::model
