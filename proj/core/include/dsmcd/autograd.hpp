#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dsmcd/grid.hpp"

namespace dsmcd::nn {

/// Reverse-mode autodiff over double tensors. Graphs are built dynamically
/// per forward pass and freed when the root goes out of scope; parameters
/// are leaf variables owned by a ParamStore.
///
/// Shape conventions:
///   tokens   [T, C]   row-major token sequences
///   planes   [C, H, W] planar feature maps
///   scalars  [1]

struct Variable;
using VarPtr = std::shared_ptr<Variable>;

struct Variable {
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<VarPtr> parents;
    std::function<void(Variable&)> backward_fn;
    uint64_t visit_mark = 0;

    size_t numel() const { return value.size(); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    bool is_scalar() const { return value.size() == 1; }
    void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

VarPtr make_variable(std::vector<int> shape, bool requires_grad);
VarPtr constant(std::vector<int> shape, std::vector<double> data);
VarPtr constant_scalar(double v);
/// Leaf with gradient tracking (parameter or gradient-checked input).
VarPtr leaf(std::vector<int> shape, std::vector<double> data);

/// Runs reverse accumulation from a scalar root.
void backward(const VarPtr& root);

// ---- elementwise ----
VarPtr add(const VarPtr& a, const VarPtr& b);
VarPtr sub(const VarPtr& a, const VarPtr& b);
VarPtr mul(const VarPtr& a, const VarPtr& b);
VarPtr scale(const VarPtr& a, double s);
VarPtr gelu(const VarPtr& a);
VarPtr tanh_op(const VarPtr& a);
/// Differentiable sign surrogate: tanh(x / (2 t)), equal to 2*sigmoid(x/t)-1.
VarPtr soft_threshold_op(const VarPtr& a, double temperature);

// ---- linear algebra (BLAS-backed) ----
VarPtr matmul(const VarPtr& a, const VarPtr& b);     // [m,k]x[k,n]
VarPtr matmul_nt(const VarPtr& a, const VarPtr& b);  // [m,k]x[n,k]^T -> [m,n]
VarPtr linear(const VarPtr& x, const VarPtr& w, const VarPtr& b);  // [r,in]->[r,out]

// ---- shape ----
VarPtr chw_to_tokens(const VarPtr& x);                      // [C,H,W] -> [H*W, C]
VarPtr tokens_to_chw(const VarPtr& x, int h, int w);        // [T,C] -> [C,h,w]
VarPtr slice_cols(const VarPtr& x, int start, int len);     // [r,c] -> [r,len]
VarPtr concat_cols(const std::vector<VarPtr>& xs);          // [r,ci] -> [r,sum ci]
VarPtr concat_channels(const VarPtr& a, const VarPtr& b);   // CHW concat

// ---- normalization / attention pieces ----
VarPtr layer_norm(const VarPtr& x, const VarPtr& gamma, const VarPtr& beta, double eps = 1e-6);
VarPtr softmax_rows(const VarPtr& x);

// ---- convolution / resampling (planes) ----
/// w has shape [cout, cin*kh*kw].
VarPtr conv2d(const VarPtr& x, const VarPtr& w, const VarPtr& b, int kh, int kw, int stride,
              int pad);
VarPtr bilinear_resize(const VarPtr& x, int oh, int ow);
VarPtr avg_pool2(const VarPtr& x);

// ---- reductions / losses ----
VarPtr mean_all(const VarPtr& x);
/// Mean squared difference against a constant target of the same size.
VarPtr mse_to_target(const VarPtr& x, const std::vector<double>& target);
/// Weighted 3-class cross entropy from raw logits [3,H,W].
VarPtr weighted_ce_logits(const VarPtr& logits, const LabelMap& labels,
                          const std::array<double, 3>& class_weights);
/// Weighted 3-class cross entropy from per-pixel probabilities [3,H,W].
VarPtr weighted_ce_probs(const VarPtr& probs, const LabelMap& labels,
                         const std::array<double, 3>& class_weights);
/// Maps a signed scalar map [1,H,W] in (-1,1) to 3 per-pixel class
/// probabilities (unchanged, positive, negative) = (1-|s|, max(s,0), max(-s,0)).
VarPtr signed_scalar_to_probs(const VarPtr& s);
/// Mean L1 distance between paired class probabilities over masked pixels;
/// `pair_of[c]` gives the channel of `b` paired with channel c of `a`.
VarPtr masked_pair_l1(const VarPtr& a, const VarPtr& b, const MaskU8& mask,
                      const std::array<int, 3>& pair_of);

// BLAS wrapper used by the ops (exposed for oracle tests / benchmarks).
void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a,
          const double* b, double beta, double* c);

} // namespace dsmcd::nn
