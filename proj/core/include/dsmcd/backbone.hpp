#pragma once

#include <array>
#include <string>
#include <vector>

#include "dsmcd/grid.hpp"
#include "dsmcd/nn.hpp"

namespace dsmcd::model {

/// Four-stage pyramid Transformer encoder configuration.
struct BackboneConfig {
    std::array<int, 4> embed_dims = {32, 64, 160, 256};
    std::array<int, 4> depths = {2, 2, 2, 2};
    std::array<int, 4> num_heads = {1, 2, 5, 8};
    std::array<int, 4> sr_ratios = {8, 4, 2, 1};
    std::array<int, 4> patch_strides = {4, 2, 2, 2};
    int mlp_ratio = 4;

    int total_stride() const {
        return patch_strides[0] * patch_strides[1] * patch_strides[2] * patch_strides[3];
    }
    void validate() const;
};

/// One pyramid level: feature map plus its grid size.
struct PyramidLevel {
    nn::VarPtr feat;  // [C, h, w]
    int h = 0, w = 0;
};

using FeaturePyramid = std::array<PyramidLevel, 4>;

/// Single modality branch: four stages of overlapped patch embedding plus
/// sequence-reduced Transformer blocks, emitting strides {4, 8, 16, 32}.
class BranchEncoder {
public:
    BranchEncoder() = default;
    BranchEncoder(nn::ParamStore& ps, const std::string& prefix, int in_channels,
                  const BackboneConfig& config, Rng& rng);

    FeaturePyramid forward(const nn::VarPtr& input_chw) const;
    const BackboneConfig& config() const { return config_; }

private:
    struct Stage {
        nn::PatchEmbed embed;
        std::vector<nn::TransformerBlock> blocks;
        nn::LayerNorm out_norm;
    };
    BackboneConfig config_;
    std::array<Stage, 4> stages_;
};

/// Two encoders over heterogeneous inputs (1-channel DSM, 3-channel image).
/// With share_weights the single parameter set is reused and the DSM is
/// lifted to 3 channels by replication.
class DualBackbone {
public:
    DualBackbone() = default;
    DualBackbone(nn::ParamStore& ps, const BackboneConfig& config, bool share_weights,
                 Rng& rng);

    FeaturePyramid forward_dsm(const nn::VarPtr& dsm_chw) const;
    FeaturePyramid forward_image(const nn::VarPtr& image_chw) const;
    bool shared() const { return share_weights_; }

private:
    bool share_weights_ = false;
    BranchEncoder dsm_branch_;
    BranchEncoder image_branch_;  // unused when shared
};

/// Lifts a 1-channel map to `channels` by replication (for shared stems).
nn::VarPtr replicate_channels(const nn::VarPtr& x, int channels);

} // namespace dsmcd::model
