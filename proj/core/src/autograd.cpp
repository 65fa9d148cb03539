#include "dsmcd/autograd.hpp"

#include <algorithm>
#include <cblas.h>
#include <cmath>
#include <stdexcept>

namespace dsmcd::nn {

namespace {

uint64_t g_visit_epoch = 0;

size_t shape_numel(const std::vector<int>& shape) {
    size_t n = 1;
    for (int d : shape) n *= static_cast<size_t>(d);
    return n;
}

VarPtr make_node(std::vector<int> shape, std::vector<VarPtr> parents) {
    auto v = std::make_shared<Variable>();
    v->shape = std::move(shape);
    v->value.resize(shape_numel(v->shape));
    v->requires_grad = false;
    for (const auto& p : parents)
        if (p->requires_grad) v->requires_grad = true;
    if (v->requires_grad) v->grad.assign(v->numel(), 0.0);
    v->parents = std::move(parents);
    return v;
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

} // namespace

void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a,
          const double* b, double beta, double* c) {
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a,
                trans_a ? m : k, b, trans_b ? k : n, beta, c, n);
}

VarPtr make_variable(std::vector<int> shape, bool requires_grad) {
    auto v = std::make_shared<Variable>();
    v->shape = std::move(shape);
    v->value.assign(shape_numel(v->shape), 0.0);
    v->requires_grad = requires_grad;
    if (requires_grad) v->grad.assign(v->numel(), 0.0);
    return v;
}

VarPtr constant(std::vector<int> shape, std::vector<double> data) {
    if (shape_numel(shape) != data.size())
        throw std::invalid_argument("constant: shape/data mismatch");
    auto v = std::make_shared<Variable>();
    v->shape = std::move(shape);
    v->value = std::move(data);
    return v;
}

VarPtr constant_scalar(double x) { return constant({1}, {x}); }

VarPtr leaf(std::vector<int> shape, std::vector<double> data) {
    auto v = constant(std::move(shape), std::move(data));
    v->requires_grad = true;
    v->grad.assign(v->numel(), 0.0);
    return v;
}

void backward(const VarPtr& root) {
    if (!root->is_scalar()) throw std::invalid_argument("backward: root must be scalar");
    if (!root->requires_grad) return;

    // topological order by iterative DFS
    ++g_visit_epoch;
    std::vector<Variable*> order;
    std::vector<std::pair<Variable*, size_t>> stack;
    stack.push_back({root.get(), 0});
    root->visit_mark = g_visit_epoch;
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Variable* p = node->parents[next++].get();
            if (p->visit_mark != g_visit_epoch && p->requires_grad) {
                p->visit_mark = g_visit_epoch;
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // fresh nodes come out of make_node with zeroed grads; leaves keep
    // accumulating until the optimizer clears them
    root->grad.assign(1, 1.0);

    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

// ---------------- elementwise ----------------

VarPtr add(const VarPtr& a, const VarPtr& b) {
    if (a->numel() != b->numel()) throw std::invalid_argument("add: size mismatch");
    auto out = make_node(a->shape, {a, b});
    for (size_t i = 0; i < out->numel(); ++i) out->value[i] = a->value[i] + b->value[i];
    out->backward_fn = [](Variable& self) {
        for (int pi = 0; pi < 2; ++pi) {
            Variable& p = *self.parents[pi];
            if (!p.requires_grad) continue;
            for (size_t i = 0; i < self.numel(); ++i) p.grad[i] += self.grad[i];
        }
    };
    return out;
}

VarPtr sub(const VarPtr& a, const VarPtr& b) {
    if (a->numel() != b->numel()) throw std::invalid_argument("sub: size mismatch");
    auto out = make_node(a->shape, {a, b});
    for (size_t i = 0; i < out->numel(); ++i) out->value[i] = a->value[i] - b->value[i];
    out->backward_fn = [](Variable& self) {
        Variable& a = *self.parents[0];
        Variable& b = *self.parents[1];
        if (a.requires_grad)
            for (size_t i = 0; i < self.numel(); ++i) a.grad[i] += self.grad[i];
        if (b.requires_grad)
            for (size_t i = 0; i < self.numel(); ++i) b.grad[i] -= self.grad[i];
    };
    return out;
}

VarPtr mul(const VarPtr& a, const VarPtr& b) {
    if (a->numel() != b->numel()) throw std::invalid_argument("mul: size mismatch");
    auto out = make_node(a->shape, {a, b});
    for (size_t i = 0; i < out->numel(); ++i) out->value[i] = a->value[i] * b->value[i];
    out->backward_fn = [](Variable& self) {
        Variable& a = *self.parents[0];
        Variable& b = *self.parents[1];
        if (a.requires_grad)
            for (size_t i = 0; i < self.numel(); ++i) a.grad[i] += self.grad[i] * b.value[i];
        if (b.requires_grad)
            for (size_t i = 0; i < self.numel(); ++i) b.grad[i] += self.grad[i] * a.value[i];
    };
    return out;
}

VarPtr scale(const VarPtr& a, double s) {
    auto out = make_node(a->shape, {a});
    for (size_t i = 0; i < out->numel(); ++i) out->value[i] = a->value[i] * s;
    out->backward_fn = [s](Variable& self) {
        Variable& a = *self.parents[0];
        if (!a.requires_grad) return;
        for (size_t i = 0; i < self.numel(); ++i) a.grad[i] += self.grad[i] * s;
    };
    return out;
}

VarPtr gelu(const VarPtr& a) {
    auto out = make_node(a->shape, {a});
    for (size_t i = 0; i < out->numel(); ++i) {
        const double x = a->value[i];
        out->value[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    }
    out->backward_fn = [](Variable& self) {
        Variable& a = *self.parents[0];
        if (!a.requires_grad) return;
        for (size_t i = 0; i < self.numel(); ++i) {
            const double x = a.value[i];
            const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
            a.grad[i] += self.grad[i] * (cdf + x * pdf);
        }
    };
    return out;
}

VarPtr tanh_op(const VarPtr& a) {
    auto out = make_node(a->shape, {a});
    for (size_t i = 0; i < out->numel(); ++i) out->value[i] = std::tanh(a->value[i]);
    out->backward_fn = [](Variable& self) {
        Variable& a = *self.parents[0];
        if (!a.requires_grad) return;
        for (size_t i = 0; i < self.numel(); ++i) {
            const double y = self.value[i];
            a.grad[i] += self.grad[i] * (1.0 - y * y);
        }
    };
    return out;
}

VarPtr soft_threshold_op(const VarPtr& a, double temperature) {
    if (!(temperature > 0.0))
        throw std::invalid_argument("soft_threshold: temperature must be positive");
    const double inv2t = 1.0 / (2.0 * temperature);
    auto out = make_node(a->shape, {a});
    for (size_t i = 0; i < out->numel(); ++i)
        out->value[i] = std::tanh(a->value[i] * inv2t);
    out->backward_fn = [inv2t](Variable& self) {
        Variable& a = *self.parents[0];
        if (!a.requires_grad) return;
        for (size_t i = 0; i < self.numel(); ++i) {
            const double y = self.value[i];
            a.grad[i] += self.grad[i] * (1.0 - y * y) * inv2t;
        }
    };
    return out;
}

// ---------------- linear algebra ----------------

VarPtr matmul(const VarPtr& a, const VarPtr& b) {
    if (a->shape.size() != 2 || b->shape.size() != 2 || a->dim(1) != b->dim(0))
        throw std::invalid_argument("matmul: shape mismatch");
    const int m = a->dim(0), k = a->dim(1), n = b->dim(1);
    auto out = make_node({m, n}, {a, b});
    gemm(false, false, m, n, k, 1.0, a->value.data(), b->value.data(), 0.0, out->value.data());
    out->backward_fn = [m, n, k](Variable& self) {
        Variable& a = *self.parents[0];
        Variable& b = *self.parents[1];
        if (a.requires_grad)  // dA += G B^T
            gemm(false, true, m, k, n, 1.0, self.grad.data(), b.value.data(), 1.0, a.grad.data());
        if (b.requires_grad)  // dB += A^T G
            gemm(true, false, k, n, m, 1.0, a.value.data(), self.grad.data(), 1.0, b.grad.data());
    };
    return out;
}

VarPtr matmul_nt(const VarPtr& a, const VarPtr& b) {
    if (a->shape.size() != 2 || b->shape.size() != 2 || a->dim(1) != b->dim(1))
        throw std::invalid_argument("matmul_nt: shape mismatch");
    const int m = a->dim(0), k = a->dim(1), n = b->dim(0);
    auto out = make_node({m, n}, {a, b});
    gemm(false, true, m, n, k, 1.0, a->value.data(), b->value.data(), 0.0, out->value.data());
    out->backward_fn = [m, n, k](Variable& self) {
        Variable& a = *self.parents[0];
        Variable& b = *self.parents[1];
        if (a.requires_grad)  // dA += G B
            gemm(false, false, m, k, n, 1.0, self.grad.data(), b.value.data(), 1.0, a.grad.data());
        if (b.requires_grad)  // dB += G^T A
            gemm(true, false, n, k, m, 1.0, self.grad.data(), a.value.data(), 1.0, b.grad.data());
    };
    return out;
}

VarPtr linear(const VarPtr& x, const VarPtr& w, const VarPtr& b) {
    if (x->shape.size() != 2 || w->shape.size() != 2 || x->dim(1) != w->dim(0))
        throw std::invalid_argument("linear: shape mismatch");
    const int r = x->dim(0), in = x->dim(1), out_dim = w->dim(1);
    if (b->numel() != static_cast<size_t>(out_dim))
        throw std::invalid_argument("linear: bias size mismatch");
    auto out = make_node({r, out_dim}, {x, w, b});
    gemm(false, false, r, out_dim, in, 1.0, x->value.data(), w->value.data(), 0.0,
         out->value.data());
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < out_dim; ++j) out->value[static_cast<size_t>(i) * out_dim + j] += b->value[j];
    out->backward_fn = [r, in, out_dim](Variable& self) {
        Variable& x = *self.parents[0];
        Variable& w = *self.parents[1];
        Variable& b = *self.parents[2];
        if (x.requires_grad)
            gemm(false, true, r, in, out_dim, 1.0, self.grad.data(), w.value.data(), 1.0,
                 x.grad.data());
        if (w.requires_grad)
            gemm(true, false, in, out_dim, r, 1.0, x.value.data(), self.grad.data(), 1.0,
                 w.grad.data());
        if (b.requires_grad)
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < out_dim; ++j)
                    b.grad[j] += self.grad[static_cast<size_t>(i) * out_dim + j];
    };
    return out;
}

// ---------------- shape ----------------

VarPtr chw_to_tokens(const VarPtr& x) {
    if (x->shape.size() != 3) throw std::invalid_argument("chw_to_tokens: expected [C,H,W]");
    const int c = x->dim(0), h = x->dim(1), w = x->dim(2);
    const int t = h * w;
    auto out = make_node({t, c}, {x});
    for (int ci = 0; ci < c; ++ci)
        for (int ti = 0; ti < t; ++ti)
            out->value[static_cast<size_t>(ti) * c + ci] = x->value[static_cast<size_t>(ci) * t + ti];
    out->backward_fn = [c, t](Variable& self) {
        Variable& x = *self.parents[0];
        if (!x.requires_grad) return;
        for (int ci = 0; ci < c; ++ci)
            for (int ti = 0; ti < t; ++ti)
                x.grad[static_cast<size_t>(ci) * t + ti] += self.grad[static_cast<size_t>(ti) * c + ci];
    };
    return out;
}

VarPtr tokens_to_chw(const VarPtr& x, int h, int w) {
    if (x->shape.size() != 2 || x->dim(0) != h * w)
        throw std::invalid_argument("tokens_to_chw: token count mismatch");
    const int t = x->dim(0), c = x->dim(1);
    auto out = make_node({c, h, w}, {x});
    for (int ti = 0; ti < t; ++ti)
        for (int ci = 0; ci < c; ++ci)
            out->value[static_cast<size_t>(ci) * t + ti] = x->value[static_cast<size_t>(ti) * c + ci];
    out->backward_fn = [c, t](Variable& self) {
        Variable& x = *self.parents[0];
        if (!x.requires_grad) return;
        for (int ti = 0; ti < t; ++ti)
            for (int ci = 0; ci < c; ++ci)
                x.grad[static_cast<size_t>(ti) * c + ci] += self.grad[static_cast<size_t>(ci) * t + ti];
    };
    return out;
}

VarPtr slice_cols(const VarPtr& x, int start, int len) {
    if (x->shape.size() != 2 || start < 0 || start + len > x->dim(1))
        throw std::invalid_argument("slice_cols: out of range");
    const int r = x->dim(0), c = x->dim(1);
    auto out = make_node({r, len}, {x});
    for (int i = 0; i < r; ++i)
        std::copy_n(x->value.data() + static_cast<size_t>(i) * c + start, len,
                    out->value.data() + static_cast<size_t>(i) * len);
    out->backward_fn = [r, c, start, len](Variable& self) {
        Variable& x = *self.parents[0];
        if (!x.requires_grad) return;
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < len; ++j)
                x.grad[static_cast<size_t>(i) * c + start + j] +=
                    self.grad[static_cast<size_t>(i) * len + j];
    };
    return out;
}

VarPtr concat_cols(const std::vector<VarPtr>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat_cols: empty");
    const int r = xs[0]->dim(0);
    int total = 0;
    for (const auto& x : xs) {
        if (x->shape.size() != 2 || x->dim(0) != r)
            throw std::invalid_argument("concat_cols: row mismatch");
        total += x->dim(1);
    }
    auto out = make_node({r, total}, xs);
    int off = 0;
    for (const auto& x : xs) {
        const int c = x->dim(1);
        for (int i = 0; i < r; ++i)
            std::copy_n(x->value.data() + static_cast<size_t>(i) * c, c,
                        out->value.data() + static_cast<size_t>(i) * total + off);
        off += c;
    }
    out->backward_fn = [r, total](Variable& self) {
        int off = 0;
        for (auto& parent : self.parents) {
            const int c = parent->dim(1);
            if (parent->requires_grad)
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < c; ++j)
                        parent->grad[static_cast<size_t>(i) * c + j] +=
                            self.grad[static_cast<size_t>(i) * total + off + j];
            off += c;
        }
    };
    return out;
}

VarPtr concat_channels(const VarPtr& a, const VarPtr& b) {
    if (a->shape.size() != 3 || b->shape.size() != 3 || a->dim(1) != b->dim(1) ||
        a->dim(2) != b->dim(2))
        throw std::invalid_argument("concat_channels: shape mismatch");
    const int ca = a->dim(0), cb = b->dim(0), h = a->dim(1), w = a->dim(2);
    auto out = make_node({ca + cb, h, w}, {a, b});
    std::copy(a->value.begin(), a->value.end(), out->value.begin());
    std::copy(b->value.begin(), b->value.end(), out->value.begin() + a->numel());
    out->backward_fn = [](Variable& self) {
        Variable& a = *self.parents[0];
        Variable& b = *self.parents[1];
        if (a.requires_grad)
            for (size_t i = 0; i < a.numel(); ++i) a.grad[i] += self.grad[i];
        if (b.requires_grad)
            for (size_t i = 0; i < b.numel(); ++i) b.grad[i] += self.grad[a.numel() + i];
    };
    return out;
}

// ---------------- normalization / attention ----------------

VarPtr layer_norm(const VarPtr& x, const VarPtr& gamma, const VarPtr& beta, double eps) {
    if (x->shape.size() != 2) throw std::invalid_argument("layer_norm: expected [R,C]");
    const int r = x->dim(0), c = x->dim(1);
    if (gamma->numel() != static_cast<size_t>(c) || beta->numel() != static_cast<size_t>(c))
        throw std::invalid_argument("layer_norm: affine size mismatch");
    auto out = make_node({r, c}, {x, gamma, beta});
    std::vector<double> rstd(r), mean(r);
    for (int i = 0; i < r; ++i) {
        const double* row = x->value.data() + static_cast<size_t>(i) * c;
        double m = 0.0;
        for (int j = 0; j < c; ++j) m += row[j];
        m /= c;
        double var = 0.0;
        for (int j = 0; j < c; ++j) var += (row[j] - m) * (row[j] - m);
        var /= c;
        const double rs = 1.0 / std::sqrt(var + eps);
        mean[i] = m;
        rstd[i] = rs;
        double* orow = out->value.data() + static_cast<size_t>(i) * c;
        for (int j = 0; j < c; ++j) orow[j] = (row[j] - m) * rs * gamma->value[j] + beta->value[j];
    }
    out->backward_fn = [r, c, mean = std::move(mean), rstd = std::move(rstd)](Variable& self) {
        Variable& x = *self.parents[0];
        Variable& gamma = *self.parents[1];
        Variable& beta = *self.parents[2];
        for (int i = 0; i < r; ++i) {
            const double* row = x.value.data() + static_cast<size_t>(i) * c;
            const double* g = self.grad.data() + static_cast<size_t>(i) * c;
            const double m = mean[i], rs = rstd[i];
            // accumulate row sums for the normalized-input jacobian
            double sum_gy = 0.0, sum_gyx = 0.0;
            for (int j = 0; j < c; ++j) {
                const double xhat = (row[j] - m) * rs;
                const double gy = g[j] * gamma.value[j];
                sum_gy += gy;
                sum_gyx += gy * xhat;
                if (gamma.requires_grad) gamma.grad[j] += g[j] * xhat;
                if (beta.requires_grad) beta.grad[j] += g[j];
            }
            if (x.requires_grad) {
                double* xg = x.grad.data() + static_cast<size_t>(i) * c;
                for (int j = 0; j < c; ++j) {
                    const double xhat = (row[j] - m) * rs;
                    const double gy = g[j] * gamma.value[j];
                    xg[j] += rs * (gy - sum_gy / c - xhat * sum_gyx / c);
                }
            }
        }
    };
    return out;
}

VarPtr softmax_rows(const VarPtr& x) {
    if (x->shape.size() != 2) throw std::invalid_argument("softmax_rows: expected [R,C]");
    const int r = x->dim(0), c = x->dim(1);
    auto out = make_node({r, c}, {x});
    for (int i = 0; i < r; ++i) {
        const double* row = x->value.data() + static_cast<size_t>(i) * c;
        double* orow = out->value.data() + static_cast<size_t>(i) * c;
        double mx = row[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < c; ++j) {
            orow[j] = std::exp(row[j] - mx);
            sum += orow[j];
        }
        for (int j = 0; j < c; ++j) orow[j] /= sum;
    }
    out->backward_fn = [r, c](Variable& self) {
        Variable& x = *self.parents[0];
        if (!x.requires_grad) return;
        for (int i = 0; i < r; ++i) {
            const double* s = self.value.data() + static_cast<size_t>(i) * c;
            const double* g = self.grad.data() + static_cast<size_t>(i) * c;
            double dot = 0.0;
            for (int j = 0; j < c; ++j) dot += s[j] * g[j];
            double* xg = x.grad.data() + static_cast<size_t>(i) * c;
            for (int j = 0; j < c; ++j) xg[j] += s[j] * (g[j] - dot);
        }
    };
    return out;
}

// ---------------- convolution / resampling ----------------

namespace {

struct ConvDims {
    int cin, h, w, cout, kh, kw, stride, pad, oh, ow;
};

ConvDims conv_dims(const VarPtr& x, const VarPtr& w, int kh, int kw, int stride, int pad) {
    ConvDims d;
    d.cin = x->dim(0);
    d.h = x->dim(1);
    d.w = x->dim(2);
    d.cout = w->dim(0);
    d.kh = kh;
    d.kw = kw;
    d.stride = stride;
    d.pad = pad;
    d.oh = (d.h + 2 * pad - kh) / stride + 1;
    d.ow = (d.w + 2 * pad - kw) / stride + 1;
    if (w->dim(1) != d.cin * kh * kw)
        throw std::invalid_argument("conv2d: weight shape mismatch");
    if (d.oh <= 0 || d.ow <= 0) throw std::invalid_argument("conv2d: output collapses");
    return d;
}

void im2col(const double* x, const ConvDims& d, double* cols) {
    const int ohw = d.oh * d.ow;
    for (int ci = 0; ci < d.cin; ++ci) {
        for (int ky = 0; ky < d.kh; ++ky) {
            for (int kx = 0; kx < d.kw; ++kx) {
                double* dst = cols + (static_cast<size_t>(ci) * d.kh * d.kw +
                                      static_cast<size_t>(ky) * d.kw + kx) * ohw;
                for (int oy = 0; oy < d.oh; ++oy) {
                    const int iy = oy * d.stride - d.pad + ky;
                    for (int ox = 0; ox < d.ow; ++ox) {
                        const int ix = ox * d.stride - d.pad + kx;
                        dst[oy * d.ow + ox] =
                            (iy >= 0 && iy < d.h && ix >= 0 && ix < d.w)
                                ? x[(static_cast<size_t>(ci) * d.h + iy) * d.w + ix]
                                : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_accum(const double* cols, const ConvDims& d, double* xg) {
    const int ohw = d.oh * d.ow;
    for (int ci = 0; ci < d.cin; ++ci) {
        for (int ky = 0; ky < d.kh; ++ky) {
            for (int kx = 0; kx < d.kw; ++kx) {
                const double* src = cols + (static_cast<size_t>(ci) * d.kh * d.kw +
                                            static_cast<size_t>(ky) * d.kw + kx) * ohw;
                for (int oy = 0; oy < d.oh; ++oy) {
                    const int iy = oy * d.stride - d.pad + ky;
                    if (iy < 0 || iy >= d.h) continue;
                    for (int ox = 0; ox < d.ow; ++ox) {
                        const int ix = ox * d.stride - d.pad + kx;
                        if (ix < 0 || ix >= d.w) continue;
                        xg[(static_cast<size_t>(ci) * d.h + iy) * d.w + ix] += src[oy * d.ow + ox];
                    }
                }
            }
        }
    }
}

} // namespace

VarPtr conv2d(const VarPtr& x, const VarPtr& w, const VarPtr& b, int kh, int kw, int stride,
              int pad) {
    if (x->shape.size() != 3) throw std::invalid_argument("conv2d: expected [C,H,W]");
    const ConvDims d = conv_dims(x, w, kh, kw, stride, pad);
    const int k = d.cin * kh * kw;
    const int ohw = d.oh * d.ow;
    if (b->numel() != static_cast<size_t>(d.cout))
        throw std::invalid_argument("conv2d: bias size mismatch");

    auto out = make_node({d.cout, d.oh, d.ow}, {x, w, b});
    std::vector<double> cols(static_cast<size_t>(k) * ohw);
    im2col(x->value.data(), d, cols.data());
    gemm(false, false, d.cout, ohw, k, 1.0, w->value.data(), cols.data(), 0.0,
         out->value.data());
    for (int co = 0; co < d.cout; ++co) {
        double* plane = out->value.data() + static_cast<size_t>(co) * ohw;
        const double bias = b->value[co];
        for (int i = 0; i < ohw; ++i) plane[i] += bias;
    }

    out->backward_fn = [d, k, ohw](Variable& self) {
        Variable& x = *self.parents[0];
        Variable& w = *self.parents[1];
        Variable& b = *self.parents[2];
        // im2col recomputed to keep per-node memory flat
        std::vector<double> cols(static_cast<size_t>(k) * ohw);
        im2col(x.value.data(), d, cols.data());
        if (w.requires_grad)
            gemm(false, true, d.cout, k, ohw, 1.0, self.grad.data(), cols.data(), 1.0,
                 w.grad.data());
        if (b.requires_grad)
            for (int co = 0; co < d.cout; ++co) {
                const double* g = self.grad.data() + static_cast<size_t>(co) * ohw;
                double s = 0.0;
                for (int i = 0; i < ohw; ++i) s += g[i];
                b.grad[co] += s;
            }
        if (x.requires_grad) {
            std::vector<double> dcols(static_cast<size_t>(k) * ohw);
            gemm(true, false, k, ohw, d.cout, 1.0, w.value.data(), self.grad.data(), 0.0,
                 dcols.data());
            col2im_accum(dcols.data(), d, x.grad.data());
        }
    };
    return out;
}

VarPtr bilinear_resize(const VarPtr& x, int oh, int ow) {
    if (x->shape.size() != 3) throw std::invalid_argument("bilinear_resize: expected [C,H,W]");
    const int c = x->dim(0), h = x->dim(1), w = x->dim(2);
    auto out = make_node({c, oh, ow}, {x});

    struct Tap {
        int i0, i1;
        double w0, w1;
    };
    auto taps = [](int in, int out_n) {
        std::vector<Tap> t(out_n);
        const double s = static_cast<double>(in) / out_n;
        for (int o = 0; o < out_n; ++o) {
            double src = (o + 0.5) * s - 0.5;
            src = std::clamp(src, 0.0, static_cast<double>(in - 1));
            const int i0 = static_cast<int>(std::floor(src));
            const int i1 = std::min(i0 + 1, in - 1);
            const double f = src - i0;
            t[o] = {i0, i1, 1.0 - f, f};
        }
        return t;
    };
    auto ty = taps(h, oh);
    auto tx = taps(w, ow);

    for (int ci = 0; ci < c; ++ci) {
        const double* plane = x->value.data() + static_cast<size_t>(ci) * h * w;
        double* oplane = out->value.data() + static_cast<size_t>(ci) * oh * ow;
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                const Tap& a = ty[oy];
                const Tap& bb = tx[ox];
                oplane[oy * ow + ox] = a.w0 * (bb.w0 * plane[a.i0 * w + bb.i0] +
                                               bb.w1 * plane[a.i0 * w + bb.i1]) +
                                       a.w1 * (bb.w0 * plane[a.i1 * w + bb.i0] +
                                               bb.w1 * plane[a.i1 * w + bb.i1]);
            }
    }
    out->backward_fn = [c, h, w, oh, ow, ty = std::move(ty), tx = std::move(tx)](Variable& self) {
        Variable& x = *self.parents[0];
        if (!x.requires_grad) return;
        for (int ci = 0; ci < c; ++ci) {
            double* xg = x.grad.data() + static_cast<size_t>(ci) * h * w;
            const double* g = self.grad.data() + static_cast<size_t>(ci) * oh * ow;
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    const auto& a = ty[oy];
                    const auto& bb = tx[ox];
                    const double gg = g[oy * ow + ox];
                    xg[a.i0 * w + bb.i0] += gg * a.w0 * bb.w0;
                    xg[a.i0 * w + bb.i1] += gg * a.w0 * bb.w1;
                    xg[a.i1 * w + bb.i0] += gg * a.w1 * bb.w0;
                    xg[a.i1 * w + bb.i1] += gg * a.w1 * bb.w1;
                }
        }
    };
    return out;
}

VarPtr avg_pool2(const VarPtr& x) {
    if (x->shape.size() != 3 || x->dim(1) % 2 != 0 || x->dim(2) % 2 != 0)
        throw std::invalid_argument("avg_pool2: expected even [C,H,W]");
    const int c = x->dim(0), h = x->dim(1), w = x->dim(2);
    const int oh = h / 2, ow = w / 2;
    auto out = make_node({c, oh, ow}, {x});
    for (int ci = 0; ci < c; ++ci)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                const size_t base = (static_cast<size_t>(ci) * h + oy * 2) * w + ox * 2;
                out->value[(static_cast<size_t>(ci) * oh + oy) * ow + ox] =
                    0.25 * (x->value[base] + x->value[base + 1] + x->value[base + w] +
                            x->value[base + w + 1]);
            }
    out->backward_fn = [c, h, w, oh, ow](Variable& self) {
        Variable& x = *self.parents[0];
        if (!x.requires_grad) return;
        for (int ci = 0; ci < c; ++ci)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    const double g =
                        0.25 * self.grad[(static_cast<size_t>(ci) * oh + oy) * ow + ox];
                    const size_t base = (static_cast<size_t>(ci) * h + oy * 2) * w + ox * 2;
                    x.grad[base] += g;
                    x.grad[base + 1] += g;
                    x.grad[base + w] += g;
                    x.grad[base + w + 1] += g;
                }
    };
    return out;
}

// ---------------- reductions / losses ----------------

VarPtr mean_all(const VarPtr& x) {
    auto out = make_node({1}, {x});
    double s = 0.0;
    for (double v : x->value) s += v;
    out->value[0] = s / static_cast<double>(x->numel());
    out->backward_fn = [](Variable& self) {
        Variable& x = *self.parents[0];
        if (!x.requires_grad) return;
        const double g = self.grad[0] / static_cast<double>(x.numel());
        for (size_t i = 0; i < x.numel(); ++i) x.grad[i] += g;
    };
    return out;
}

VarPtr mse_to_target(const VarPtr& x, const std::vector<double>& target) {
    if (x->numel() != target.size()) throw std::invalid_argument("mse_to_target: size mismatch");
    auto out = make_node({1}, {x});
    double s = 0.0;
    for (size_t i = 0; i < x->numel(); ++i) {
        const double d = x->value[i] - target[i];
        s += d * d;
    }
    out->value[0] = s / static_cast<double>(x->numel());
    out->backward_fn = [target](Variable& self) {
        Variable& x = *self.parents[0];
        if (!x.requires_grad) return;
        const double g = 2.0 * self.grad[0] / static_cast<double>(x.numel());
        for (size_t i = 0; i < x.numel(); ++i) x.grad[i] += g * (x.value[i] - target[i]);
    };
    return out;
}

namespace {

constexpr double kProbFloor = 1e-7;

void check_ce_inputs(const VarPtr& t, const LabelMap& labels) {
    if (t->shape.size() != 3 || t->dim(0) != 3)
        throw std::invalid_argument("cross entropy: expected [3,H,W]");
    if (t->dim(1) != labels.height() || t->dim(2) != labels.width())
        throw std::invalid_argument("cross entropy: label dimension mismatch");
    for (uint8_t l : labels.raw())
        if (l > 2) throw std::invalid_argument("cross entropy: label out of range");
}

} // namespace

VarPtr weighted_ce_logits(const VarPtr& logits, const LabelMap& labels,
                          const std::array<double, 3>& class_weights) {
    check_ce_inputs(logits, labels);
    const int n = logits->dim(1) * logits->dim(2);
    auto out = make_node({1}, {logits});
    // per-pixel softmax probabilities kept for the backward pass
    auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(3) * n);
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        const double z0 = logits->value[i], z1 = logits->value[n + i],
                     z2 = logits->value[2 * n + i];
        const double m = std::max(z0, std::max(z1, z2));
        const double e0 = std::exp(z0 - m), e1 = std::exp(z1 - m), e2 = std::exp(z2 - m);
        const double sum = e0 + e1 + e2;
        const double p[3] = {e0 / sum, e1 / sum, e2 / sum};
        for (int c = 0; c < 3; ++c) (*probs)[static_cast<size_t>(c) * n + i] = p[c];
        const uint8_t l = labels.raw()[i];
        loss += class_weights[l] * -std::log(std::max(p[l], kProbFloor));
    }
    out->value[0] = loss / n;
    out->backward_fn = [n, labels, class_weights, probs](Variable& self) {
        Variable& logits = *self.parents[0];
        if (!logits.requires_grad) return;
        const double g = self.grad[0] / n;
        for (int i = 0; i < n; ++i) {
            const uint8_t l = labels.raw()[i];
            const double pl = (*probs)[static_cast<size_t>(l) * n + i];
            if (pl <= kProbFloor) continue;  // clamped: flat region
            const double wl = class_weights[l];
            for (int c = 0; c < 3; ++c) {
                const double pc = (*probs)[static_cast<size_t>(c) * n + i];
                logits.grad[static_cast<size_t>(c) * n + i] +=
                    g * wl * (pc - (c == l ? 1.0 : 0.0));
            }
        }
    };
    return out;
}

VarPtr weighted_ce_probs(const VarPtr& probs, const LabelMap& labels,
                         const std::array<double, 3>& class_weights) {
    check_ce_inputs(probs, labels);
    const int n = probs->dim(1) * probs->dim(2);
    auto out = make_node({1}, {probs});
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        const uint8_t l = labels.raw()[i];
        const double p = std::clamp(probs->value[static_cast<size_t>(l) * n + i], kProbFloor, 1.0);
        loss += class_weights[l] * -std::log(p);
    }
    out->value[0] = loss / n;
    out->backward_fn = [n, labels, class_weights](Variable& self) {
        Variable& probs = *self.parents[0];
        if (!probs.requires_grad) return;
        const double g = self.grad[0] / n;
        for (int i = 0; i < n; ++i) {
            const uint8_t l = labels.raw()[i];
            const double p = probs.value[static_cast<size_t>(l) * n + i];
            if (p <= kProbFloor || p >= 1.0) continue;  // clamped ends are flat
            probs.grad[static_cast<size_t>(l) * n + i] += g * class_weights[l] * (-1.0 / p);
        }
    };
    return out;
}

VarPtr signed_scalar_to_probs(const VarPtr& s) {
    if (s->shape.size() != 3 || s->dim(0) != 1)
        throw std::invalid_argument("signed_scalar_to_probs: expected [1,H,W]");
    const int h = s->dim(1), w = s->dim(2);
    const int n = h * w;
    auto out = make_node({3, h, w}, {s});
    for (int i = 0; i < n; ++i) {
        const double v = s->value[i];
        out->value[i] = 1.0 - std::abs(v);
        out->value[n + i] = std::max(v, 0.0);
        out->value[2 * n + i] = std::max(-v, 0.0);
    }
    out->backward_fn = [n](Variable& self) {
        Variable& s = *self.parents[0];
        if (!s.requires_grad) return;
        for (int i = 0; i < n; ++i) {
            const double v = s.value[i];
            const double sgn = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
            double g = -sgn * self.grad[i];             // d(1-|v|)/dv
            if (v > 0.0) g += self.grad[n + i];         // d max(v,0)/dv
            if (v < 0.0) g -= self.grad[2 * n + i];     // d max(-v,0)/dv
            s.grad[i] += g;
        }
    };
    return out;
}

VarPtr masked_pair_l1(const VarPtr& a, const VarPtr& b, const MaskU8& mask,
                      const std::array<int, 3>& pair_of) {
    if (a->shape.size() != 3 || b->shape.size() != 3 || a->dim(0) != 3 || b->dim(0) != 3 ||
        a->dim(1) != b->dim(1) || a->dim(2) != b->dim(2))
        throw std::invalid_argument("masked_pair_l1: expected matching [3,H,W]");
    if (a->dim(1) != mask.height() || a->dim(2) != mask.width())
        throw std::invalid_argument("masked_pair_l1: mask dimension mismatch");
    const int n = a->dim(1) * a->dim(2);
    size_t m_count = 0;
    for (uint8_t m : mask.raw())
        if (m) ++m_count;

    auto out = make_node({1}, {a, b});
    if (m_count == 0) {
        out->value[0] = 0.0;
        return out;  // vacuous mean, no gradient flow
    }
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        if (!mask.raw()[i]) continue;
        for (int c = 0; c < 3; ++c)
            loss += std::abs(a->value[static_cast<size_t>(pair_of[c]) * n + i] -
                             b->value[static_cast<size_t>(c) * n + i]);
    }
    out->value[0] = loss / static_cast<double>(m_count);
    out->backward_fn = [n, mask, pair_of, m_count](Variable& self) {
        Variable& a = *self.parents[0];
        Variable& b = *self.parents[1];
        const double g = self.grad[0] / static_cast<double>(m_count);
        for (int i = 0; i < n; ++i) {
            if (!mask.raw()[i]) continue;
            for (int c = 0; c < 3; ++c) {
                const size_t ia = static_cast<size_t>(pair_of[c]) * n + i;
                const size_t ib = static_cast<size_t>(c) * n + i;
                const double d = a.value[ia] - b.value[ib];
                const double sgn = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
                if (a.requires_grad) a.grad[ia] += g * sgn;
                if (b.requires_grad) b.grad[ib] -= g * sgn;
            }
        }
    };
    return out;
}

} // namespace dsmcd::nn
