#pragma once

// Dense row-major tensors with reverse-mode autodiff on an explicit tape.
// The scalar type is a template parameter: the model trains in float, the
// gradient-check oracle instantiates double for headroom.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_map>
#include <vector>

#include "shefu/common.hpp"

namespace shefu {

using Shape = std::vector<size_t>;

inline size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (size_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string r = "[";
    for (size_t i = 0; i < s.size(); ++i) r += (i ? "x" : "") + std::to_string(s[i]);
    return r + "]";
}

template <typename S>
struct TensorT {
    Shape shape;
    std::vector<S> data;
    bool requires_grad = false;

    TensorT() = default;
    explicit TensorT(Shape sh) : shape(std::move(sh)), data(shape_numel(shape), S(0)) {}
    TensorT(Shape sh, std::vector<S> d) : shape(std::move(sh)), data(std::move(d)) {
        if (data.size() != shape_numel(shape))
            throw ContractError("tensor data length " + std::to_string(data.size()) +
                                " does not match shape " + shape_str(shape));
    }

    size_t numel() const { return data.size(); }
    size_t rows() const { return shape.empty() ? 1 : shape[0]; }
    size_t cols() const { return shape.size() < 2 ? numel() : shape[1]; }

    S& at(size_t i) { return data[i]; }
    S at(size_t i) const { return data[i]; }
    S& at(size_t i, size_t j) { return data[i * shape[1] + j]; }
    S at(size_t i, size_t j) const { return data[i * shape[1] + j]; }

    void fill(S v) { std::fill(data.begin(), data.end(), v); }

    bool finite() const {
        for (S v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    static TensorT zeros(Shape sh) { return TensorT(std::move(sh)); }
    static TensorT full(Shape sh, S v) {
        TensorT t(std::move(sh));
        t.fill(v);
        return t;
    }
    static TensorT from(std::vector<S> d) {
        Shape sh{d.size()};
        return TensorT(std::move(sh), std::move(d));
    }

    bool operator==(const TensorT& o) const { return shape == o.shape && data == o.data; }
};

using Tensor = TensorT<float>;

// A named trainable tensor with a persistent gradient buffer. Parameters live
// outside any tape; tapes reference them and accumulate into grad.
template <typename S>
struct ParamT {
    std::string name;
    TensorT<S> value;
    TensorT<S> grad;

    ParamT() = default;
    ParamT(std::string n, TensorT<S> v) : name(std::move(n)), value(std::move(v)) {
        value.requires_grad = true;
        grad = TensorT<S>::zeros(value.shape);
    }
    void zero_grad() { grad.fill(S(0)); }
};

// ---------------------------------------------------------------------------
// Standalone kernels. These are the primitive semantics; the tape ops below
// reuse them so the traced and untraced paths cannot drift apart.
// ---------------------------------------------------------------------------

// Numerically-stable softmax over one contiguous span. NaN input is an error.
template <typename S>
inline void softmax_span(const S* x, S* out, size_t n) {
    if (n == 0) throw ContractError("softmax: empty input");
    S m = x[0];
    for (size_t i = 0; i < n; ++i) {
        if (std::isnan(static_cast<double>(x[i]))) throw NumericError("softmax: NaN input");
        m = std::max(m, x[i]);
    }
    S sum = 0;
    for (size_t i = 0; i < n; ++i) {
        out[i] = std::exp(x[i] - m);
        sum += out[i];
    }
    for (size_t i = 0; i < n; ++i) out[i] /= sum;
}

template <typename S>
inline TensorT<S> softmax(const TensorT<S>& x) {
    TensorT<S> out(x.shape);
    softmax_span(x.data.data(), out.data.data(), x.numel());
    return out;
}

// Layer normalization of one span: zero mean, unit variance, then affine.
template <typename S>
inline void layer_norm_span(const S* x, const S* gain, const S* bias, S eps, S* out, size_t n) {
    if (n == 0) throw ContractError("layer_norm: empty input");
    if (!(eps > S(0))) throw ContractError("layer_norm: eps must be positive");
    S mean = 0;
    for (size_t i = 0; i < n; ++i) mean += x[i];
    mean /= static_cast<S>(n);
    S var = 0;
    for (size_t i = 0; i < n; ++i) {
        S d = x[i] - mean;
        var += d * d;
    }
    var /= static_cast<S>(n);
    S inv = S(1) / std::sqrt(var + eps);
    for (size_t i = 0; i < n; ++i) out[i] = gain[i] * ((x[i] - mean) * inv) + bias[i];
}

template <typename S>
inline TensorT<S> layer_norm(const TensorT<S>& x, const TensorT<S>& gain, const TensorT<S>& bias,
                             S eps) {
    if (gain.numel() != x.numel() || bias.numel() != x.numel())
        throw ContractError("layer_norm: gain/bias must shape-match x");
    TensorT<S> out(x.shape);
    layer_norm_span(x.data.data(), gain.data.data(), bias.data.data(), eps, out.data.data(),
                    x.numel());
    return out;
}

// Pairwise max over the sequence axis of an [S x d] tensor (d may be 1 for a
// plain sequence of scalars). Output length floor(S/2); a trailing odd element
// is dropped.
template <typename S>
inline TensorT<S> seq_max_pool(const TensorT<S>& x) {
    size_t rows = x.rows();
    size_t cols = x.shape.size() < 2 ? 1 : x.shape[1];
    if (rows < 2) throw PoolingUnderflowError("seq_max_pool: sequence length must be >= 2, got " +
                                              std::to_string(rows));
    size_t out_rows = rows / 2;
    Shape osh = x.shape;
    osh[0] = out_rows;
    TensorT<S> out(osh);
    for (size_t r = 0; r < out_rows; ++r)
        for (size_t c = 0; c < cols; ++c)
            out.data[r * cols + c] = std::max(x.data[2 * r * cols + c], x.data[(2 * r + 1) * cols + c]);
    return out;
}

template <typename S>
inline S gelu_scalar(S x) {
    const S c = S(0.7978845608028654);  // sqrt(2/pi)
    const S a = S(0.044715);
    return S(0.5) * x * (S(1) + std::tanh(c * (x + a * x * x * x)));
}

template <typename S>
inline S gelu_grad_scalar(S x) {
    const S c = S(0.7978845608028654);
    const S a = S(0.044715);
    S u = c * (x + a * x * x * x);
    S t = std::tanh(u);
    S sech2 = S(1) - t * t;
    return S(0.5) * (S(1) + t) + S(0.5) * x * sech2 * c * (S(1) + S(3) * a * x * x);
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

template <typename S>
class TapeT;

template <typename S>
struct NodeT {
    TensorT<S> value;
    TensorT<S> grad;  // allocated only when needs_grad
    bool needs_grad = false;
    std::function<void()> back;  // distributes this->grad into input grads
};

// Lightweight handle into a tape. Valid only while the tape is alive.
template <typename S>
struct VarT {
    NodeT<S>* node = nullptr;
    const TensorT<S>& value() const { return node->value; }
    const TensorT<S>& grad() const { return node->grad; }
    size_t numel() const { return node->value.numel(); }
    const Shape& shape() const { return node->value.shape; }
};

// One tape per forward/backward pass. Single-threaded by construction;
// concurrent inference uses one tape per caller over frozen parameters.
template <typename S>
class TapeT {
public:
    // grad_enabled=false turns the tape into a pure forward evaluator
    // (parameters are treated as constants), which is what inference uses.
    explicit TapeT(bool grad_enabled = true, bool check_finite = false)
        : grad_enabled_(grad_enabled), check_finite_(check_finite) {}

    VarT<S> leaf(TensorT<S> t) {
        NodeT<S>* n = new_node(std::move(t), false);
        return {n};
    }

    // Trainable leaf. Repeated use of the same parameter within one tape
    // shares a single node so gradients accumulate in one place. On a
    // grad-disabled tape the parameter is read-only and never registered, so
    // concurrent inference over one frozen model is safe; grad-enabled tapes
    // accumulate into ParamT::grad during backward(), which training invokes
    // on models it owns mutably.
    VarT<S> param(const ParamT<S>& p) {
        auto it = param_cache_.find(&p);
        if (it != param_cache_.end()) return {it->second};
        NodeT<S>* n = new_node(p.value, grad_enabled_ && p.value.requires_grad);
        param_cache_[&p] = n;
        if (grad_enabled_) {
            param_leaves_.push_back({const_cast<ParamT<S>*>(&p), n});
            touched_.push_back(const_cast<ParamT<S>*>(&p));
        }
        return {n};
    }

    bool grad_enabled() const { return grad_enabled_; }

    // Parameters that received a leaf on this tape, in first-touch order.
    const std::vector<ParamT<S>*>& touched_params() const { return touched_; }

    // ---- primitive ops -----------------------------------------------------

    VarT<S> matmul(VarT<S> a, VarT<S> b) {
        const auto& A = a.node->value;
        const auto& B = b.node->value;
        if (A.shape.size() != 2 || B.shape.size() != 2 || A.shape[1] != B.shape[0])
            throw ContractError("matmul: incompatible shapes " + shape_str(A.shape) + " * " +
                                shape_str(B.shape));
        size_t m = A.shape[0], k = A.shape[1], n = B.shape[1];
        TensorT<S> C({m, n});
        matmul_kernel(A.data.data(), B.data.data(), C.data.data(), m, k, n);
        NodeT<S>* out = new_node(std::move(C), a.node->needs_grad || b.node->needs_grad);
        if (out->needs_grad) {
            NodeT<S>*an = a.node, *bn = b.node;
            out->back = [out, an, bn, m, k, n]() {
                if (an->needs_grad) {  // dA += dC * B^T
                    for (size_t i = 0; i < m; ++i)
                        for (size_t j = 0; j < n; ++j) {
                            S g = out->grad.data[i * n + j];
                            if (g == S(0)) continue;
                            const S* brow = &bn->value.data[0];
                            for (size_t kk = 0; kk < k; ++kk)
                                an->grad.data[i * k + kk] += g * brow[kk * n + j];
                        }
                }
                if (bn->needs_grad) {  // dB += A^T * dC
                    for (size_t i = 0; i < m; ++i)
                        for (size_t kk = 0; kk < k; ++kk) {
                            S av = an->value.data[i * k + kk];
                            if (av == S(0)) continue;
                            for (size_t j = 0; j < n; ++j)
                                bn->grad.data[kk * n + j] += av * out->grad.data[i * n + j];
                        }
                }
            };
        }
        return finish(out);
    }

    VarT<S> add(VarT<S> a, VarT<S> b) {
        const auto& A = a.node->value;
        const auto& B = b.node->value;
        if (A.shape != B.shape) throw ContractError("add: shape mismatch");
        TensorT<S> C(A.shape);
        for (size_t i = 0; i < C.numel(); ++i) C.data[i] = A.data[i] + B.data[i];
        NodeT<S>* out = new_node(std::move(C), a.node->needs_grad || b.node->needs_grad);
        if (out->needs_grad) {
            NodeT<S>*an = a.node, *bn = b.node;
            out->back = [out, an, bn]() {
                if (an->needs_grad)
                    for (size_t i = 0; i < out->grad.numel(); ++i) an->grad.data[i] += out->grad.data[i];
                if (bn->needs_grad)
                    for (size_t i = 0; i < out->grad.numel(); ++i) bn->grad.data[i] += out->grad.data[i];
            };
        }
        return finish(out);
    }

    // mat [m x n] + row vector [n] broadcast over rows (bias add).
    VarT<S> add_rowvec(VarT<S> a, VarT<S> v) {
        const auto& A = a.node->value;
        const auto& V = v.node->value;
        if (A.shape.size() != 2 || V.numel() != A.shape[1])
            throw ContractError("add_rowvec: shape mismatch");
        size_t m = A.shape[0], n = A.shape[1];
        TensorT<S> C(A.shape);
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < n; ++j) C.data[i * n + j] = A.data[i * n + j] + V.data[j];
        NodeT<S>* out = new_node(std::move(C), a.node->needs_grad || v.node->needs_grad);
        if (out->needs_grad) {
            NodeT<S>*an = a.node, *vn = v.node;
            out->back = [out, an, vn, m, n]() {
                if (an->needs_grad)
                    for (size_t i = 0; i < m * n; ++i) an->grad.data[i] += out->grad.data[i];
                if (vn->needs_grad)
                    for (size_t i = 0; i < m; ++i)
                        for (size_t j = 0; j < n; ++j) vn->grad.data[j] += out->grad.data[i * n + j];
            };
        }
        return finish(out);
    }

    VarT<S> mul(VarT<S> a, VarT<S> b) {
        const auto& A = a.node->value;
        const auto& B = b.node->value;
        if (A.shape != B.shape) throw ContractError("mul: shape mismatch");
        TensorT<S> C(A.shape);
        for (size_t i = 0; i < C.numel(); ++i) C.data[i] = A.data[i] * B.data[i];
        NodeT<S>* out = new_node(std::move(C), a.node->needs_grad || b.node->needs_grad);
        if (out->needs_grad) {
            NodeT<S>*an = a.node, *bn = b.node;
            out->back = [out, an, bn]() {
                for (size_t i = 0; i < out->grad.numel(); ++i) {
                    if (an->needs_grad) an->grad.data[i] += out->grad.data[i] * bn->value.data[i];
                    if (bn->needs_grad) bn->grad.data[i] += out->grad.data[i] * an->value.data[i];
                }
            };
        }
        return finish(out);
    }

    VarT<S> scale(VarT<S> a, S c) {
        TensorT<S> C(a.node->value.shape);
        for (size_t i = 0; i < C.numel(); ++i) C.data[i] = a.node->value.data[i] * c;
        NodeT<S>* out = new_node(std::move(C), a.node->needs_grad);
        if (out->needs_grad) {
            NodeT<S>* an = a.node;
            out->back = [out, an, c]() {
                for (size_t i = 0; i < out->grad.numel(); ++i) an->grad.data[i] += out->grad.data[i] * c;
            };
        }
        return finish(out);
    }

    // Add a constant tensor (no gradient into the constant). Used for additive
    // attention masks.
    VarT<S> add_const(VarT<S> a, const TensorT<S>& cst) {
        const auto& A = a.node->value;
        if (A.shape != cst.shape) throw ContractError("add_const: shape mismatch");
        TensorT<S> C(A.shape);
        for (size_t i = 0; i < C.numel(); ++i) C.data[i] = A.data[i] + cst.data[i];
        NodeT<S>* out = new_node(std::move(C), a.node->needs_grad);
        if (out->needs_grad) {
            NodeT<S>* an = a.node;
            out->back = [out, an]() {
                for (size_t i = 0; i < out->grad.numel(); ++i) an->grad.data[i] += out->grad.data[i];
            };
        }
        return finish(out);
    }

    // Zero out rows whose mask entry is false. Mask is a constant.
    VarT<S> mask_rows(VarT<S> a, const std::vector<uint8_t>& keep) {
        const auto& A = a.node->value;
        if (A.shape.size() != 2 || keep.size() != A.shape[0])
            throw ContractError("mask_rows: mask length must equal row count");
        size_t m = A.shape[0], n = A.shape[1];
        TensorT<S> C(A.shape);
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < n; ++j) C.data[i * n + j] = keep[i] ? A.data[i * n + j] : S(0);
        NodeT<S>* out = new_node(std::move(C), a.node->needs_grad);
        if (out->needs_grad) {
            NodeT<S>* an = a.node;
            auto k = keep;
            out->back = [out, an, k, m, n]() {
                for (size_t i = 0; i < m; ++i) {
                    if (!k[i]) continue;
                    for (size_t j = 0; j < n; ++j) an->grad.data[i * n + j] += out->grad.data[i * n + j];
                }
            };
        }
        return finish(out);
    }

    VarT<S> gelu(VarT<S> a) {
        TensorT<S> C(a.node->value.shape);
        for (size_t i = 0; i < C.numel(); ++i) C.data[i] = gelu_scalar(a.node->value.data[i]);
        NodeT<S>* out = new_node(std::move(C), a.node->needs_grad);
        if (out->needs_grad) {
            NodeT<S>* an = a.node;
            out->back = [out, an]() {
                for (size_t i = 0; i < out->grad.numel(); ++i)
                    an->grad.data[i] += out->grad.data[i] * gelu_grad_scalar(an->value.data[i]);
            };
        }
        return finish(out);
    }

    // Row-wise softmax (each row of an [m x n] tensor, or the whole vector).
    VarT<S> softmax_rows(VarT<S> a) {
        const auto& A = a.node->value;
        size_t n = A.shape.size() < 2 ? A.numel() : A.shape[1];
        size_t m = A.numel() / n;
        TensorT<S> C(A.shape);
        for (size_t i = 0; i < m; ++i) softmax_span(&A.data[i * n], &C.data[i * n], n);
        NodeT<S>* out = new_node(std::move(C), a.node->needs_grad);
        if (out->needs_grad) {
            NodeT<S>* an = a.node;
            out->back = [out, an, m, n]() {
                // dx = (dy - <dy, y>) * y, per row
                for (size_t i = 0; i < m; ++i) {
                    const S* y = &out->value.data[i * n];
                    const S* dy = &out->grad.data[i * n];
                    S dot = 0;
                    for (size_t j = 0; j < n; ++j) dot += dy[j] * y[j];
                    for (size_t j = 0; j < n; ++j) an->grad.data[i * n + j] += (dy[j] - dot) * y[j];
                }
            };
        }
        return finish(out);
    }

    // Row-wise layer norm with trainable gain/bias of width n.
    VarT<S> layer_norm_rows(VarT<S> a, VarT<S> gain, VarT<S> bias, S eps) {
        const auto& A = a.node->value;
        size_t n = A.shape.size() < 2 ? A.numel() : A.shape[1];
        size_t m = A.numel() / n;
        if (gain.numel() != n || bias.numel() != n)
            throw ContractError("layer_norm_rows: gain/bias width mismatch");
        if (!(eps > S(0))) throw ContractError("layer_norm_rows: eps must be positive");
        TensorT<S> C(A.shape);
        for (size_t i = 0; i < m; ++i)
            layer_norm_span(&A.data[i * n], gain.node->value.data.data(), bias.node->value.data.data(),
                            eps, &C.data[i * n], n);
        NodeT<S>* out =
            new_node(std::move(C), a.node->needs_grad || gain.node->needs_grad || bias.node->needs_grad);
        if (out->needs_grad) {
            NodeT<S>*an = a.node, *gn = gain.node, *bn = bias.node;
            out->back = [out, an, gn, bn, m, n, eps]() {
                std::vector<S> xhat(n);
                for (size_t i = 0; i < m; ++i) {
                    const S* x = &an->value.data[i * n];
                    const S* dy = &out->grad.data[i * n];
                    S mean = 0;
                    for (size_t j = 0; j < n; ++j) mean += x[j];
                    mean /= static_cast<S>(n);
                    S var = 0;
                    for (size_t j = 0; j < n; ++j) var += (x[j] - mean) * (x[j] - mean);
                    var /= static_cast<S>(n);
                    S inv = S(1) / std::sqrt(var + eps);
                    for (size_t j = 0; j < n; ++j) xhat[j] = (x[j] - mean) * inv;
                    if (gn->needs_grad)
                        for (size_t j = 0; j < n; ++j) gn->grad.data[j] += dy[j] * xhat[j];
                    if (bn->needs_grad)
                        for (size_t j = 0; j < n; ++j) bn->grad.data[j] += dy[j];
                    if (an->needs_grad) {
                        // dxhat = dy * g; dx = inv*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
                        S s1 = 0, s2 = 0;
                        for (size_t j = 0; j < n; ++j) {
                            S dxh = dy[j] * gn->value.data[j];
                            s1 += dxh;
                            s2 += dxh * xhat[j];
                        }
                        s1 /= static_cast<S>(n);
                        s2 /= static_cast<S>(n);
                        for (size_t j = 0; j < n; ++j) {
                            S dxh = dy[j] * gn->value.data[j];
                            an->grad.data[i * n + j] += inv * (dxh - s1 - xhat[j] * s2);
                        }
                    }
                }
            };
        }
        return finish(out);
    }

    // Pairwise max over the sequence axis. Gradient routes to the argmax of
    // each pair; the first element wins ties.
    VarT<S> seq_max_pool_op(VarT<S> a) {
        const auto& A = a.node->value;
        if (A.shape.size() != 2) throw ContractError("seq_max_pool: expected [S x d] tensor");
        size_t rows = A.shape[0], cols = A.shape[1];
        if (rows < 2) throw PoolingUnderflowError("seq_max_pool: sequence length must be >= 2");
        size_t orows = rows / 2;
        TensorT<S> C({orows, cols});
        std::vector<uint8_t> take_second(orows * cols);
        for (size_t r = 0; r < orows; ++r)
            for (size_t c = 0; c < cols; ++c) {
                S x0 = A.data[2 * r * cols + c];
                S x1 = A.data[(2 * r + 1) * cols + c];
                bool second = x1 > x0;
                take_second[r * cols + c] = second;
                C.data[r * cols + c] = second ? x1 : x0;
            }
        NodeT<S>* out = new_node(std::move(C), a.node->needs_grad);
        if (out->needs_grad) {
            NodeT<S>* an = a.node;
            out->back = [out, an, orows, cols, take_second = std::move(take_second)]() {
                for (size_t r = 0; r < orows; ++r)
                    for (size_t c = 0; c < cols; ++c) {
                        size_t src = take_second[r * cols + c] ? (2 * r + 1) : (2 * r);
                        an->grad.data[src * cols + c] += out->grad.data[r * cols + c];
                    }
            };
        }
        return finish(out);
    }

    VarT<S> transpose(VarT<S> a) {
        const auto& A = a.node->value;
        if (A.shape.size() != 2) throw ContractError("transpose: expected 2-d tensor");
        size_t m = A.shape[0], n = A.shape[1];
        TensorT<S> C({n, m});
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < n; ++j) C.data[j * m + i] = A.data[i * n + j];
        NodeT<S>* out = new_node(std::move(C), a.node->needs_grad);
        if (out->needs_grad) {
            NodeT<S>* an = a.node;
            out->back = [out, an, m, n]() {
                for (size_t i = 0; i < m; ++i)
                    for (size_t j = 0; j < n; ++j) an->grad.data[i * n + j] += out->grad.data[j * m + i];
            };
        }
        return finish(out);
    }

    VarT<S> reshape(VarT<S> a, Shape sh) {
        if (shape_numel(sh) != a.numel()) throw ContractError("reshape: element count mismatch");
        TensorT<S> C(sh, a.node->value.data);
        NodeT<S>* out = new_node(std::move(C), a.node->needs_grad);
        if (out->needs_grad) {
            NodeT<S>* an = a.node;
            out->back = [out, an]() {
                for (size_t i = 0; i < out->grad.numel(); ++i) an->grad.data[i] += out->grad.data[i];
            };
        }
        return finish(out);
    }

    VarT<S> slice_cols(VarT<S> a, size_t c0, size_t c1) {
        const auto& A = a.node->value;
        if (A.shape.size() != 2 || c1 > A.shape[1] || c0 >= c1)
            throw ContractError("slice_cols: bad column range");
        size_t m = A.shape[0], n = A.shape[1], w = c1 - c0;
        TensorT<S> C({m, w});
        for (size_t i = 0; i < m; ++i)
            std::copy(&A.data[i * n + c0], &A.data[i * n + c1], &C.data[i * w]);
        NodeT<S>* out = new_node(std::move(C), a.node->needs_grad);
        if (out->needs_grad) {
            NodeT<S>* an = a.node;
            out->back = [out, an, m, n, w, c0]() {
                for (size_t i = 0; i < m; ++i)
                    for (size_t j = 0; j < w; ++j)
                        an->grad.data[i * n + c0 + j] += out->grad.data[i * w + j];
            };
        }
        return finish(out);
    }

    VarT<S> concat_cols(const std::vector<VarT<S>>& parts) {
        if (parts.empty()) throw ContractError("concat_cols: empty list");
        size_t m = parts[0].shape()[0], total = 0;
        bool ng = false;
        for (const auto& p : parts) {
            if (p.shape().size() != 2 || p.shape()[0] != m)
                throw ContractError("concat_cols: row mismatch");
            total += p.shape()[1];
            ng = ng || p.node->needs_grad;
        }
        TensorT<S> C({m, total});
        size_t off = 0;
        for (const auto& p : parts) {
            size_t w = p.shape()[1];
            for (size_t i = 0; i < m; ++i)
                std::copy(&p.node->value.data[i * w], &p.node->value.data[(i + 1) * w],
                          &C.data[i * total + off]);
            off += w;
        }
        NodeT<S>* out = new_node(std::move(C), ng);
        if (out->needs_grad) {
            std::vector<NodeT<S>*> ins;
            for (const auto& p : parts) ins.push_back(p.node);
            out->back = [out, ins, m, total]() {
                size_t off = 0;
                for (NodeT<S>* in : ins) {
                    size_t w = in->value.shape[1];
                    if (in->needs_grad)
                        for (size_t i = 0; i < m; ++i)
                            for (size_t j = 0; j < w; ++j)
                                in->grad.data[i * w + j] += out->grad.data[i * total + off + j];
                    off += w;
                }
            };
        }
        return finish(out);
    }

    VarT<S> concat_rows(const std::vector<VarT<S>>& parts) {
        if (parts.empty()) throw ContractError("concat_rows: empty list");
        size_t n = parts[0].shape().size() < 2 ? parts[0].numel() : parts[0].shape()[1];
        size_t total_rows = 0;
        bool ng = false;
        for (const auto& p : parts) {
            size_t pn = p.shape().size() < 2 ? p.numel() : p.shape()[1];
            if (pn != n) throw ContractError("concat_rows: column mismatch");
            total_rows += p.shape().size() < 2 ? 1 : p.shape()[0];
            ng = ng || p.node->needs_grad;
        }
        TensorT<S> C({total_rows, n});
        size_t off = 0;
        for (const auto& p : parts) {
            std::copy(p.node->value.data.begin(), p.node->value.data.end(), &C.data[off]);
            off += p.numel();
        }
        NodeT<S>* out = new_node(std::move(C), ng);
        if (out->needs_grad) {
            std::vector<NodeT<S>*> ins;
            for (const auto& p : parts) ins.push_back(p.node);
            out->back = [out, ins]() {
                size_t off = 0;
                for (NodeT<S>* in : ins) {
                    if (in->needs_grad)
                        for (size_t i = 0; i < in->grad.numel(); ++i)
                            in->grad.data[i] += out->grad.data[off + i];
                    off += in->value.numel();
                }
            };
        }
        return finish(out);
    }

    // Select rows of an embedding matrix by index. Backward scatters.
    VarT<S> embedding_rows(VarT<S> emb, const std::vector<size_t>& ids) {
        const auto& E = emb.node->value;
        if (E.shape.size() != 2) throw ContractError("embedding_rows: expected 2-d table");
        size_t v = E.shape[0], d = E.shape[1];
        TensorT<S> C({ids.size(), d});
        for (size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] >= v) throw ContractError("embedding_rows: id out of range");
            std::copy(&E.data[ids[i] * d], &E.data[(ids[i] + 1) * d], &C.data[i * d]);
        }
        NodeT<S>* out = new_node(std::move(C), emb.node->needs_grad);
        if (out->needs_grad) {
            NodeT<S>* en = emb.node;
            auto idv = ids;
            out->back = [out, en, idv, d]() {
                for (size_t i = 0; i < idv.size(); ++i)
                    for (size_t j = 0; j < d; ++j)
                        en->grad.data[idv[i] * d + j] += out->grad.data[i * d + j];
            };
        }
        return finish(out);
    }

    // Inverted dropout; identity when disabled. The RNG is consumed only when
    // enabled so evaluation does not perturb training streams.
    VarT<S> dropout(VarT<S> a, double p, Rng* rng, bool enabled) {
        if (!enabled || p <= 0.0) return a;
        if (p >= 1.0) throw ContractError("dropout: p must be < 1");
        if (!rng) throw ContractError("dropout: enabled but no rng");
        const auto& A = a.node->value;
        TensorT<S> C(A.shape);
        std::vector<uint8_t> keep(A.numel());
        S scale = S(1.0 / (1.0 - p));
        for (size_t i = 0; i < A.numel(); ++i) {
            keep[i] = rng->uniform() >= p;
            C.data[i] = keep[i] ? A.data[i] * scale : S(0);
        }
        NodeT<S>* out = new_node(std::move(C), a.node->needs_grad);
        if (out->needs_grad) {
            NodeT<S>* an = a.node;
            out->back = [out, an, keep = std::move(keep), scale]() {
                for (size_t i = 0; i < out->grad.numel(); ++i)
                    if (keep[i]) an->grad.data[i] += out->grad.data[i] * scale;
            };
        }
        return finish(out);
    }

    VarT<S> clamp(VarT<S> a, S lo, S hi) {
        TensorT<S> C(a.node->value.shape);
        for (size_t i = 0; i < C.numel(); ++i)
            C.data[i] = std::min(hi, std::max(lo, a.node->value.data[i]));
        NodeT<S>* out = new_node(std::move(C), a.node->needs_grad);
        if (out->needs_grad) {
            NodeT<S>* an = a.node;
            out->back = [out, an, lo, hi]() {
                for (size_t i = 0; i < out->grad.numel(); ++i) {
                    S x = an->value.data[i];
                    if (x >= lo && x <= hi) an->grad.data[i] += out->grad.data[i];
                }
            };
        }
        return finish(out);
    }

    VarT<S> log(VarT<S> a) {
        TensorT<S> C(a.node->value.shape);
        for (size_t i = 0; i < C.numel(); ++i) C.data[i] = std::log(a.node->value.data[i]);
        NodeT<S>* out = new_node(std::move(C), a.node->needs_grad);
        if (out->needs_grad) {
            NodeT<S>* an = a.node;
            out->back = [out, an]() {
                for (size_t i = 0; i < out->grad.numel(); ++i)
                    an->grad.data[i] += out->grad.data[i] / an->value.data[i];
            };
        }
        return finish(out);
    }

    // Single element as a scalar [1] tensor.
    VarT<S> select(VarT<S> a, size_t flat_index) {
        if (flat_index >= a.numel()) throw ContractError("select: index out of range");
        TensorT<S> C({1});
        C.data[0] = a.node->value.data[flat_index];
        NodeT<S>* out = new_node(std::move(C), a.node->needs_grad);
        if (out->needs_grad) {
            NodeT<S>* an = a.node;
            out->back = [out, an, flat_index]() { an->grad.data[flat_index] += out->grad.data[0]; };
        }
        return finish(out);
    }

    VarT<S> sum(VarT<S> a) {
        TensorT<S> C({1});
        C.data[0] = std::accumulate(a.node->value.data.begin(), a.node->value.data.end(), S(0));
        NodeT<S>* out = new_node(std::move(C), a.node->needs_grad);
        if (out->needs_grad) {
            NodeT<S>* an = a.node;
            out->back = [out, an]() {
                for (size_t i = 0; i < an->grad.numel(); ++i) an->grad.data[i] += out->grad.data[0];
            };
        }
        return finish(out);
    }

    // ---- reverse sweep ------------------------------------------------------

    // Seeds d(loss)/d(loss)=1 and walks the tape backwards. Parameters not on
    // the path keep their (zero-initialized) node gradients. Accumulates into
    // each touched ParamT::grad.
    void backward(VarT<S> loss) {
        if (!grad_enabled_) throw ContractError("backward: tape was created with grads disabled");
        if (loss.numel() != 1)
            throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape()));
        if (backward_done_) throw ContractError("backward: already called on this tape");
        backward_done_ = true;
        if (loss.node->needs_grad) loss.node->grad.data[0] = S(1);
        for (size_t i = nodes_.size(); i-- > 0;) {
            NodeT<S>* n = nodes_[i].get();
            if (n->needs_grad && n->back) n->back();
        }
        for (auto& [p, node] : param_leaves_)
            if (node->needs_grad)
                for (size_t i = 0; i < p->grad.numel(); ++i) p->grad.data[i] += node->grad.data[i];
    }

    size_t size() const { return nodes_.size(); }

private:
    NodeT<S>* new_node(TensorT<S> value, bool needs_grad) {
        auto n = std::make_unique<NodeT<S>>();
        n->value = std::move(value);
        n->needs_grad = grad_enabled_ && needs_grad;
        if (n->needs_grad) n->grad = TensorT<S>::zeros(n->value.shape);
        nodes_.push_back(std::move(n));
        return nodes_.back().get();
    }

    VarT<S> finish(NodeT<S>* n) {
        if (check_finite_ && !n->value.finite())
            throw NumericError("non-finite value produced by tape op");
        return {n};
    }

    static void matmul_kernel(const S* a, const S* b, S* c, size_t m, size_t k, size_t n) {
        for (size_t i = 0; i < m; ++i) {
            S* crow = &c[i * n];
            for (size_t kk = 0; kk < k; ++kk) {
                S av = a[i * k + kk];
                const S* brow = &b[kk * n];
                for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    }

    bool grad_enabled_;
    bool check_finite_;
    bool backward_done_ = false;
    std::vector<std::unique_ptr<NodeT<S>>> nodes_;
    std::unordered_map<const ParamT<S>*, NodeT<S>*> param_cache_;
    std::vector<std::pair<ParamT<S>*, NodeT<S>*>> param_leaves_;
    std::vector<ParamT<S>*> touched_;
};

using Tape = TapeT<float>;
using Var = VarT<float>;
using Param = ParamT<float>;

}  // namespace shefu
