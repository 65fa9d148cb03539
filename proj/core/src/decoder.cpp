#include "dsmcd/decoder.hpp"

#include <cmath>
#include <stdexcept>

namespace dsmcd::model {

using namespace nn;

void DecoderConfig::validate() const {
    if (decode_dim <= 0 || head_hidden <= 0)
        throw std::invalid_argument("DecoderConfig: channel widths must be positive");
    if (!(temperature > 0.0))
        throw std::invalid_argument("DecoderConfig: temperature must be positive");
}

double soft_threshold(double x, double t) {
    if (!(t > 0.0)) throw std::invalid_argument("soft_threshold: t must be positive");
    return std::tanh(x / (2.0 * t));
}

double soft_threshold_grad(double x, double t) {
    if (!(t > 0.0)) throw std::invalid_argument("soft_threshold_grad: t must be positive");
    const double y = std::tanh(x / (2.0 * t));
    return (1.0 - y * y) / (2.0 * t);
}

int hard_threshold(double x) { return x > 0.0 ? 1 : (x < 0.0 ? -1 : 0); }

MlpDecoder::MlpDecoder(ParamStore& ps, const BackboneConfig& backbone,
                       const DecoderConfig& config, Rng& rng) {
    config.validate();
    for (int n = 0; n < 4; ++n)
        proj_[n] = Linear(ps, "decoder.proj" + std::to_string(n + 1), backbone.embed_dims[n],
                          config.decode_dim, rng);
    refine_ = ResidualConvBlock(ps, "decoder.refine", config.decode_dim, rng);
}

PyramidLevel MlpDecoder::forward(const FusedPyramid& fused) const {
    for (const auto& level : fused)
        if (!level.feat) throw std::invalid_argument("MlpDecoder: missing pyramid level");
    const int oh = fused[0].h, ow = fused[0].w;
    VarPtr sum;
    for (int n = 0; n < 4; ++n) {
        VarPtr tokens = chw_to_tokens(fused[n].feat);
        VarPtr projected = tokens_to_chw(proj_[n].forward(tokens), fused[n].h, fused[n].w);
        if (n > 0) projected = bilinear_resize(projected, oh, ow);
        sum = sum ? add(sum, projected) : projected;
    }
    return {refine_.forward(sum), oh, ow};
}

OutputHead::OutputHead(ParamStore& ps, const std::string& prefix, int in_dim, int hidden,
                       int out_channels, Rng& rng)
    : reduce_(ps, prefix + ".reduce", in_dim, hidden, 1, 1, 0, rng),
      block_(ps, prefix + ".block", hidden, rng),
      out_(ps, prefix + ".out", hidden, out_channels, 3, 1, 1, rng) {}

VarPtr OutputHead::forward(const PyramidLevel& decode_feat, int out_h, int out_w) const {
    VarPtr up = bilinear_resize(decode_feat.feat, out_h, out_w);
    VarPtr x = block_.forward(reduce_.forward(up));
    return out_.forward(x);
}

} // namespace dsmcd::model
