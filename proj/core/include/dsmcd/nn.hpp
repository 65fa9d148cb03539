#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "dsmcd/autograd.hpp"
#include "dsmcd/rng.hpp"

namespace dsmcd::nn {

enum class Init { TruncNormal002, Zero, One };

/// Owns all learnable parameters of a model as named leaves. Registration
/// order is deterministic; names are the stable checkpoint identity.
class ParamStore {
public:
    VarPtr create(const std::string& name, std::vector<int> shape, Init init, Rng& rng);
    VarPtr find(const std::string& name) const;

    const std::vector<std::pair<std::string, VarPtr>>& entries() const { return entries_; }
    size_t total_scalars() const;
    size_t count_with_prefix(const std::string& prefix) const;
    void zero_grads();

private:
    std::vector<std::pair<std::string, VarPtr>> entries_;
    std::unordered_map<std::string, size_t> index_;
};

struct Linear {
    VarPtr w, b;  // w: [in, out]
    Linear() = default;
    Linear(ParamStore& ps, const std::string& prefix, int in, int out, Rng& rng);
    VarPtr forward(const VarPtr& x) const { return linear(x, w, b); }
};

struct LayerNorm {
    VarPtr gamma, beta;
    LayerNorm() = default;
    LayerNorm(ParamStore& ps, const std::string& prefix, int dim, Rng& rng);
    VarPtr forward(const VarPtr& x) const { return layer_norm(x, gamma, beta); }
};

struct Conv2d {
    VarPtr w, b;  // w: [cout, cin*kh*kw]
    int kh = 0, kw = 0, stride = 1, pad = 0;
    Conv2d() = default;
    Conv2d(ParamStore& ps, const std::string& prefix, int cin, int cout, int k, int stride,
           int pad, Rng& rng);
    VarPtr forward(const VarPtr& x) const { return conv2d(x, w, b, kh, kw, stride, pad); }
};

/// LayerNorm over channels at each spatial position of a [C,H,W] map.
struct ChannelNorm {
    LayerNorm norm;
    ChannelNorm() = default;
    ChannelNorm(ParamStore& ps, const std::string& prefix, int channels, Rng& rng)
        : norm(ps, prefix, channels, rng) {}
    VarPtr forward(const VarPtr& x) const {
        return tokens_to_chw(norm.forward(chw_to_tokens(x)), x->dim(1), x->dim(2));
    }
};

/// Multi-head scaled dot-product attention core. Queries come from one token
/// sequence, keys/values from another; the two coincide for self-attention.
struct MultiHeadAttention {
    Linear wq, wk, wv, wo;
    int dim = 0, heads = 1;
    MultiHeadAttention() = default;
    MultiHeadAttention(ParamStore& ps, const std::string& prefix, int dim, int heads, Rng& rng);
    VarPtr attend(const VarPtr& q_tokens, const VarPtr& kv_tokens) const;
};

/// Self-attention with optional spatial reduction of keys/values: a strided
/// sr x sr linear projection over the token grid followed by normalization.
struct SelfAttention {
    MultiHeadAttention mha;
    Conv2d sr_conv;
    LayerNorm sr_norm;
    int sr = 1;
    SelfAttention() = default;
    SelfAttention(ParamStore& ps, const std::string& prefix, int dim, int heads, int sr,
                  Rng& rng);
    VarPtr forward(const VarPtr& tokens, int h, int w) const;
};

struct Mlp {
    Linear fc1, fc2;
    Mlp() = default;
    Mlp(ParamStore& ps, const std::string& prefix, int dim, int hidden, Rng& rng);
    VarPtr forward(const VarPtr& x) const { return fc2.forward(gelu(fc1.forward(x))); }
};

/// Pre-norm Transformer block: x += attn(LN(x)); x += mlp(LN(x)).
struct TransformerBlock {
    LayerNorm norm1, norm2;
    SelfAttention attn;
    Mlp mlp;
    TransformerBlock() = default;
    TransformerBlock(ParamStore& ps, const std::string& prefix, int dim, int heads, int sr,
                     int mlp_ratio, Rng& rng);
    VarPtr forward(const VarPtr& tokens, int h, int w) const;
};

/// Overlapped patch embedding: strided convolution + token normalization.
struct PatchEmbed {
    Conv2d proj;
    LayerNorm norm;
    PatchEmbed() = default;
    PatchEmbed(ParamStore& ps, const std::string& prefix, int cin, int cout, int k, int stride,
               Rng& rng);
    // returns tokens plus the embedded grid size
    VarPtr forward(const VarPtr& chw, int& oh, int& ow) const;
};

/// Residual convolution block on [C,H,W]: x + norm(conv(act(norm(conv(x))))).
struct ResidualConvBlock {
    Conv2d conv1, conv2;
    ChannelNorm norm1, norm2;
    ResidualConvBlock() = default;
    ResidualConvBlock(ParamStore& ps, const std::string& prefix, int channels, Rng& rng);
    VarPtr forward(const VarPtr& x) const;
};

} // namespace dsmcd::nn
