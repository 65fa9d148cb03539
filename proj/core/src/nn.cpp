#include "dsmcd/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace dsmcd::nn {

VarPtr ParamStore::create(const std::string& name, std::vector<int> shape, Init init,
                          Rng& rng) {
    if (index_.count(name)) throw std::invalid_argument("ParamStore: duplicate name " + name);
    size_t n = 1;
    for (int d : shape) n *= static_cast<size_t>(d);
    std::vector<double> data(n);
    switch (init) {
        case Init::Zero: break;
        case Init::One:
            std::fill(data.begin(), data.end(), 1.0);
            break;
        case Init::TruncNormal002:
            for (auto& v : data) {
                double z;
                do { z = rng.normal(); } while (std::abs(z) > 2.0);
                v = 0.02 * z;
            }
            break;
    }
    auto p = leaf(std::move(shape), std::move(data));
    index_[name] = entries_.size();
    entries_.push_back({name, p});
    return p;
}

VarPtr ParamStore::find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("ParamStore: unknown name " + name);
    return entries_[it->second].second;
}

size_t ParamStore::total_scalars() const {
    size_t n = 0;
    for (const auto& [name, p] : entries_) n += p->numel();
    return n;
}

size_t ParamStore::count_with_prefix(const std::string& prefix) const {
    size_t n = 0;
    for (const auto& [name, p] : entries_)
        if (name.rfind(prefix, 0) == 0) n += p->numel();
    return n;
}

void ParamStore::zero_grads() {
    for (auto& [name, p] : entries_) p->zero_grad();
}

Linear::Linear(ParamStore& ps, const std::string& prefix, int in, int out, Rng& rng)
    : w(ps.create(prefix + ".weight", {in, out}, Init::TruncNormal002, rng)),
      b(ps.create(prefix + ".bias", {out}, Init::Zero, rng)) {}

LayerNorm::LayerNorm(ParamStore& ps, const std::string& prefix, int dim, Rng& rng)
    : gamma(ps.create(prefix + ".gamma", {dim}, Init::One, rng)),
      beta(ps.create(prefix + ".beta", {dim}, Init::Zero, rng)) {}

Conv2d::Conv2d(ParamStore& ps, const std::string& prefix, int cin, int cout, int k, int stride,
               int pad, Rng& rng)
    : w(ps.create(prefix + ".weight", {cout, cin * k * k}, Init::TruncNormal002, rng)),
      b(ps.create(prefix + ".bias", {cout}, Init::Zero, rng)),
      kh(k), kw(k), stride(stride), pad(pad) {}

MultiHeadAttention::MultiHeadAttention(ParamStore& ps, const std::string& prefix, int dim,
                                       int heads, Rng& rng)
    : wq(ps, prefix + ".wq", dim, dim, rng),
      wk(ps, prefix + ".wk", dim, dim, rng),
      wv(ps, prefix + ".wv", dim, dim, rng),
      wo(ps, prefix + ".wo", dim, dim, rng),
      dim(dim), heads(heads) {
    if (dim % heads != 0)
        throw std::invalid_argument("MultiHeadAttention: dim not divisible by heads");
}

VarPtr MultiHeadAttention::attend(const VarPtr& q_tokens, const VarPtr& kv_tokens) const {
    if (q_tokens->dim(1) != dim || kv_tokens->dim(1) != dim)
        throw std::invalid_argument("attend: embedding width mismatch");
    const int dh = dim / heads;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    VarPtr q = wq.forward(q_tokens);
    VarPtr k = wk.forward(kv_tokens);
    VarPtr v = wv.forward(kv_tokens);

    std::vector<VarPtr> head_outputs;
    head_outputs.reserve(heads);
    for (int h = 0; h < heads; ++h) {
        VarPtr qh = slice_cols(q, h * dh, dh);
        VarPtr kh = slice_cols(k, h * dh, dh);
        VarPtr vh = slice_cols(v, h * dh, dh);
        VarPtr scores = scale(matmul_nt(qh, kh), att_scale);
        VarPtr attn = softmax_rows(scores);
        head_outputs.push_back(matmul(attn, vh));
    }
    VarPtr merged = heads == 1 ? head_outputs[0] : concat_cols(head_outputs);
    return wo.forward(merged);
}

SelfAttention::SelfAttention(ParamStore& ps, const std::string& prefix, int dim, int heads,
                             int sr, Rng& rng)
    : mha(ps, prefix, dim, heads, rng), sr(sr) {
    if (sr < 1) throw std::invalid_argument("SelfAttention: sr_ratio must be >= 1");
    if (sr > 1) {
        sr_conv = Conv2d(ps, prefix + ".sr", dim, dim, sr, sr, 0, rng);
        sr_norm = LayerNorm(ps, prefix + ".sr_norm", dim, rng);
    }
}

VarPtr SelfAttention::forward(const VarPtr& tokens, int h, int w) const {
    if (tokens->dim(0) != h * w)
        throw std::invalid_argument("SelfAttention: sequence length does not match grid");
    VarPtr kv = tokens;
    if (sr > 1) {
        if (h % sr != 0 || w % sr != 0)
            throw std::invalid_argument("SelfAttention: grid not divisible by sr_ratio");
        VarPtr grid = tokens_to_chw(tokens, h, w);
        VarPtr reduced = sr_conv.forward(grid);
        kv = sr_norm.forward(chw_to_tokens(reduced));
    }
    return mha.attend(tokens, kv);
}

Mlp::Mlp(ParamStore& ps, const std::string& prefix, int dim, int hidden, Rng& rng)
    : fc1(ps, prefix + ".fc1", dim, hidden, rng), fc2(ps, prefix + ".fc2", hidden, dim, rng) {}

TransformerBlock::TransformerBlock(ParamStore& ps, const std::string& prefix, int dim,
                                   int heads, int sr, int mlp_ratio, Rng& rng)
    : norm1(ps, prefix + ".norm1", dim, rng),
      norm2(ps, prefix + ".norm2", dim, rng),
      attn(ps, prefix + ".attn", dim, heads, sr, rng),
      mlp(ps, prefix + ".mlp", dim, dim * mlp_ratio, rng) {}

VarPtr TransformerBlock::forward(const VarPtr& tokens, int h, int w) const {
    VarPtr x = add(tokens, attn.forward(norm1.forward(tokens), h, w));
    return add(x, mlp.forward(norm2.forward(x)));
}

PatchEmbed::PatchEmbed(ParamStore& ps, const std::string& prefix, int cin, int cout, int k,
                       int stride, Rng& rng)
    : proj(ps, prefix + ".proj", cin, cout, k, stride, k / 2, rng),
      norm(ps, prefix + ".norm", cout, rng) {}

VarPtr PatchEmbed::forward(const VarPtr& chw, int& oh, int& ow) const {
    VarPtr grid = proj.forward(chw);
    oh = grid->dim(1);
    ow = grid->dim(2);
    return norm.forward(chw_to_tokens(grid));
}

ResidualConvBlock::ResidualConvBlock(ParamStore& ps, const std::string& prefix, int channels,
                                     Rng& rng)
    : conv1(ps, prefix + ".conv1", channels, channels, 3, 1, 1, rng),
      conv2(ps, prefix + ".conv2", channels, channels, 3, 1, 1, rng),
      norm1(ps, prefix + ".norm1", channels, rng),
      norm2(ps, prefix + ".norm2", channels, rng) {}

VarPtr ResidualConvBlock::forward(const VarPtr& x) const {
    VarPtr y = gelu(norm1.forward(conv1.forward(x)));
    return add(x, norm2.forward(conv2.forward(y)));
}

} // namespace dsmcd::nn
