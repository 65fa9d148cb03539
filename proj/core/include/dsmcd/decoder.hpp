#pragma once

#include <string>

#include "dsmcd/fusion.hpp"

namespace dsmcd::model {

struct DecoderConfig {
    int decode_dim = 64;
    int head_hidden = 16;
    double temperature = 0.5;

    void validate() const;
};

/// Differentiable sign surrogate 2*sigmoid(x/t) - 1 (== tanh(x/(2t))).
/// Odd, strictly increasing, slope 1/(2t) at the origin.
double soft_threshold(double x, double t);
double soft_threshold_grad(double x, double t);
/// Hard sign: -1 / 0 / +1.
int hard_threshold(double x);

/// Unifies the fused pyramid into a single stride-4 decode feature:
/// per-level linear projection, non-parameterized bilinear upsampling to the
/// stride-4 grid, summation, then residual convolution refinement.
class MlpDecoder {
public:
    MlpDecoder() = default;
    MlpDecoder(nn::ParamStore& ps, const BackboneConfig& backbone, const DecoderConfig& config,
               Rng& rng);

    PyramidLevel forward(const FusedPyramid& fused) const;

private:
    std::array<nn::Linear, 4> proj_;
    nn::ResidualConvBlock refine_;
};

/// Shared head trunk: bilinear x4 to full resolution, channel reduction,
/// one residual convolution block, then a 3x3 output convolution.
class OutputHead {
public:
    OutputHead() = default;
    OutputHead(nn::ParamStore& ps, const std::string& prefix, int in_dim, int hidden,
               int out_channels, Rng& rng);

    nn::VarPtr forward(const PyramidLevel& decode_feat, int out_h, int out_w) const;

private:
    nn::Conv2d reduce_;
    nn::ResidualConvBlock block_;
    nn::Conv2d out_;
};

} // namespace dsmcd::model
