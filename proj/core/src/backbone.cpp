#include "dsmcd/backbone.hpp"

#include <stdexcept>

namespace dsmcd::model {

using namespace nn;

void BackboneConfig::validate() const {
    for (int i = 0; i < 4; ++i) {
        if (embed_dims[i] <= 0 || depths[i] <= 0 || num_heads[i] <= 0)
            throw std::invalid_argument("BackboneConfig: dims, depths, heads must be positive");
        if (embed_dims[i] % num_heads[i] != 0)
            throw std::invalid_argument("BackboneConfig: embed_dims must divide by num_heads");
        if (sr_ratios[i] < 1) throw std::invalid_argument("BackboneConfig: sr_ratios must be >= 1");
        if (patch_strides[i] < 1)
            throw std::invalid_argument("BackboneConfig: patch_strides must be >= 1");
    }
    if (mlp_ratio < 1) throw std::invalid_argument("BackboneConfig: mlp_ratio must be >= 1");
}

BranchEncoder::BranchEncoder(ParamStore& ps, const std::string& prefix, int in_channels,
                             const BackboneConfig& config, Rng& rng)
    : config_(config) {
    config.validate();
    int cin = in_channels;
    for (int s = 0; s < 4; ++s) {
        const std::string sp = prefix + ".stage" + std::to_string(s + 1);
        // stage 1 uses a wide overlapped stem, later stages a 3x3 reduction
        const int k = s == 0 ? 7 : 3;
        stages_[s].embed = PatchEmbed(ps, sp + ".embed", cin, config.embed_dims[s], k,
                                      config.patch_strides[s], rng);
        for (int b = 0; b < config.depths[s]; ++b)
            stages_[s].blocks.emplace_back(ps, sp + ".block" + std::to_string(b),
                                           config.embed_dims[s], config.num_heads[s],
                                           config.sr_ratios[s], config.mlp_ratio, rng);
        stages_[s].out_norm = LayerNorm(ps, sp + ".out_norm", config.embed_dims[s], rng);
        cin = config.embed_dims[s];
    }
}

FeaturePyramid BranchEncoder::forward(const VarPtr& input_chw) const {
    if (input_chw->shape.size() != 3)
        throw std::invalid_argument("BranchEncoder: expected [C,H,W] input");
    const int stride = config_.total_stride();
    if (input_chw->dim(1) % stride != 0 || input_chw->dim(2) % stride != 0)
        throw std::invalid_argument("BranchEncoder: input size not divisible by total stride");

    FeaturePyramid pyramid;
    VarPtr x = input_chw;
    for (int s = 0; s < 4; ++s) {
        int h = 0, w = 0;
        VarPtr tokens = stages_[s].embed.forward(x, h, w);
        for (const auto& block : stages_[s].blocks) tokens = block.forward(tokens, h, w);
        tokens = stages_[s].out_norm.forward(tokens);
        x = tokens_to_chw(tokens, h, w);
        pyramid[s] = {x, h, w};
    }
    return pyramid;
}

DualBackbone::DualBackbone(ParamStore& ps, const BackboneConfig& config, bool share_weights,
                           Rng& rng)
    : share_weights_(share_weights) {
    if (share_weights_) {
        dsm_branch_ = BranchEncoder(ps, "backbone.shared", 3, config, rng);
    } else {
        dsm_branch_ = BranchEncoder(ps, "backbone.dsm", 1, config, rng);
        image_branch_ = BranchEncoder(ps, "backbone.image", 3, config, rng);
    }
}

VarPtr replicate_channels(const VarPtr& x, int channels) {
    if (x->shape.size() != 3 || x->dim(0) != 1)
        throw std::invalid_argument("replicate_channels: expected [1,H,W]");
    const int h = x->dim(1), w = x->dim(2);
    const size_t plane = static_cast<size_t>(h) * w;
    auto out = std::make_shared<Variable>();
    out->shape = {channels, h, w};
    out->value.resize(plane * channels);
    out->requires_grad = x->requires_grad;
    if (out->requires_grad) out->grad.assign(out->value.size(), 0.0);
    for (int c = 0; c < channels; ++c)
        std::copy(x->value.begin(), x->value.end(), out->value.begin() + c * plane);
    out->parents = {x};
    out->backward_fn = [channels, plane](Variable& self) {
        Variable& x = *self.parents[0];
        if (!x.requires_grad) return;
        for (int c = 0; c < channels; ++c)
            for (size_t i = 0; i < plane; ++i) x.grad[i] += self.grad[c * plane + i];
    };
    return out;
}

FeaturePyramid DualBackbone::forward_dsm(const VarPtr& dsm_chw) const {
    if (share_weights_) return dsm_branch_.forward(replicate_channels(dsm_chw, 3));
    return dsm_branch_.forward(dsm_chw);
}

FeaturePyramid DualBackbone::forward_image(const VarPtr& image_chw) const {
    if (share_weights_) return dsm_branch_.forward(image_chw);
    return image_branch_.forward(image_chw);
}

} // namespace dsmcd::model
