#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <vector>

#include "dufal/nn_ops.hpp"
#include "dufal/tensor.hpp"

namespace dufal {

namespace detail {

// Cephes-style expf, branch-free in the hot range. Used for fp32 softmax
// rows; the fp64 instantiation keeps libm exp so oracle comparisons hold
// at full precision.
inline float softmax_exp(float x) {
    x = x < -87.0f ? -87.0f : (x > 88.0f ? 88.0f : x);
    const float z = x * 1.442695040f;
    const float n = std::floor(z + 0.5f);
    x = x - n * 0.693359375f - n * -2.12194440e-4f;
    const float x2 = x * x;
    float p = 1.9875691500e-4f;
    p = p * x + 1.3981999507e-3f;
    p = p * x + 8.3334519073e-3f;
    p = p * x + 4.1665795894e-2f;
    p = p * x + 1.6666665459e-1f;
    p = p * x + 5.0000001201e-1f;
    const float r = p * x2 + x + 1.0f;
    union {
        float f;
        std::int32_t i;
    } scale;
    scale.i = (static_cast<std::int32_t>(n) + 127) << 23;
    return r * scale.f;
}

inline double softmax_exp(double x) { return std::exp(x); }

}  // namespace detail

/// Fused multi-head scaled-dot-product attention over already-projected
/// token matrices q, k, v of shape [n, C]; heads split the channel axis.
/// The softmax matrix is kept for the backward pass when a tape is being
/// recorded and recomputation is avoided entirely.
template <class T>
Tensor<T> sdpa(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads) {
    check_same_shape(q, k, "sdpa");
    check_same_shape(q, v, "sdpa");
    if (q.ndim() != 2) throw ShapeError("sdpa: tokens must be [n, C]");
    const std::size_t n = q.dim(0), c = q.dim(1);
    if (heads == 0 || c % heads != 0) throw ShapeError("sdpa: heads must divide the channel axis");
    const std::size_t dh = c / heads;
    const T att_scale = T(1) / std::sqrt(static_cast<T>(dh));

    const bool record = autograd::grad_mode() &&
                        (q.requires_grad() || k.requires_grad() || v.requires_grad());
    auto probs = record ? std::make_shared<std::vector<T>>(heads * n * n) : nullptr;

    std::vector<T> out(n * c);
    const T* qp = q.ptr();
    const T* kp = k.ptr();
    const T* vp = v.ptr();
    parallel_for(n, [&](std::size_t i) {
        thread_local std::vector<T> row;
        row.resize(n);
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = h * dh;
            const T* qi = qp + i * c + off;
            T smax = -std::numeric_limits<T>::infinity();
            for (std::size_t j = 0; j < n; ++j) {
                const T* kj = kp + j * c + off;
                T acc = 0;
                for (std::size_t d = 0; d < dh; ++d) acc += qi[d] * kj[d];
                acc *= att_scale;
                row[j] = acc;
                if (acc > smax) smax = acc;
            }
            T sum = 0;
            for (std::size_t j = 0; j < n; ++j) {
                row[j] = detail::softmax_exp(row[j] - smax);
                sum += row[j];
            }
            const T inv = T(1) / sum;
            T* orow = out.data() + i * c + off;
            for (std::size_t d = 0; d < dh; ++d) orow[d] = T(0);
            T* prow = probs ? probs->data() + (h * n + i) * n : nullptr;
            for (std::size_t j = 0; j < n; ++j) {
                const T p = row[j] * inv;
                if (prow) prow[j] = p;
                const T* vj = vp + j * c + off;
                for (std::size_t d = 0; d < dh; ++d) orow[d] += p * vj[d];
            }
        }
    });

    auto out_copy = record ? std::make_shared<std::vector<T>>(out) : nullptr;
    return detail::make_op<T>(
        {n, c}, std::move(out), {q, k, v},
        [qn = q.node(), kn = k.node(), vn = v.node(), probs, out_copy, n, c, heads, dh,
         att_scale](TensorNode<T>& o) {
            const T* g = o.grad.data();
            const T* qp = qn->data.data();
            const T* kp = kn->data.data();
            const T* vp = vn->data.data();
            const T* op = out_copy->data();
            // D_i = g_i . o_i per head: the softmax-row correction term.
            std::vector<T> dcorr(heads * n);
            parallel_for(n, [&](std::size_t i) {
                for (std::size_t h = 0; h < heads; ++h) {
                    const std::size_t off = h * dh;
                    T acc = 0;
                    for (std::size_t d = 0; d < dh; ++d)
                        acc += g[i * c + off + d] * op[i * c + off + d];
                    dcorr[h * n + i] = acc;
                }
            });
            if (qn->requires_grad) {
                T* gq = qn->grad_ptr();
                parallel_for(n, [&](std::size_t i) {
                    for (std::size_t h = 0; h < heads; ++h) {
                        const std::size_t off = h * dh;
                        const T* gi = g + i * c + off;
                        const T* prow = probs->data() + (h * n + i) * n;
                        const T di = dcorr[h * n + i];
                        T* gqi = gq + i * c + off;
                        for (std::size_t j = 0; j < n; ++j) {
                            const T* vj = vp + j * c + off;
                            T dp = 0;
                            for (std::size_t d = 0; d < dh; ++d) dp += gi[d] * vj[d];
                            const T ds = prow[j] * (dp - di) * att_scale;
                            const T* kj = kp + j * c + off;
                            for (std::size_t d = 0; d < dh; ++d) gqi[d] += ds * kj[d];
                        }
                    }
                });
            }
            if (kn->requires_grad || vn->requires_grad) {
                T* gk = kn->requires_grad ? kn->grad_ptr() : nullptr;
                T* gv = vn->requires_grad ? vn->grad_ptr() : nullptr;
                parallel_for(n, [&](std::size_t j) {
                    for (std::size_t h = 0; h < heads; ++h) {
                        const std::size_t off = h * dh;
                        const T* vj = vp + j * c + off;
                        T* gkj = gk ? gk + j * c + off : nullptr;
                        T* gvj = gv ? gv + j * c + off : nullptr;
                        for (std::size_t i = 0; i < n; ++i) {
                            const T p = (*probs)[(h * n + i) * n + j];
                            const T* gi = g + i * c + off;
                            if (gvj)
                                for (std::size_t d = 0; d < dh; ++d) gvj[d] += p * gi[d];
                            if (gkj) {
                                T dp = 0;
                                for (std::size_t d = 0; d < dh; ++d) dp += gi[d] * vj[d];
                                const T ds = p * (dp - dcorr[h * n + i]) * att_scale;
                                const T* qi = qp + i * c + off;
                                for (std::size_t d = 0; d < dh; ++d) gkj[d] += ds * qi[d];
                            }
                        }
                    }
                });
            }
        });
}

/// Projection weights for one attention block (query/key/value/output).
template <class T>
struct AttentionProjections {
    Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
};

/// Multi-head scaled-dot-product cross-attention over H*W tokens of width
/// C. k/v/q maps share the [C,H,W] shape; output is reshaped back.
template <class T>
Tensor<T> cross_attention(const Tensor<T>& kmap, const Tensor<T>& vmap, const Tensor<T>& qmap,
                          std::size_t heads, const AttentionProjections<T>& proj) {
    check_same_shape(kmap, vmap, "cross_attention");
    check_same_shape(kmap, qmap, "cross_attention");
    if (kmap.ndim() != 3) throw ShapeError("cross_attention: maps must be [C,H,W]");
    const std::size_t c = kmap.dim(0), h = kmap.dim(1), w = kmap.dim(2);
    const std::size_t n = h * w;
    auto tokens = [&](const Tensor<T>& m) { return transpose2d(m.reshaped({c, n})); };
    Tensor<T> q = linear(tokens(qmap), proj.wq, proj.bq);
    Tensor<T> k = linear(tokens(kmap), proj.wk, proj.bk);
    Tensor<T> v = linear(tokens(vmap), proj.wv, proj.bv);
    Tensor<T> attn = sdpa(q, k, v, heads);
    Tensor<T> out = linear(attn, proj.wo, proj.bo);
    return transpose2d(out).reshaped({c, h, w});
}

/// Galerkin attention parameters: projections plus layer norms on K and V.
template <class T>
struct GalerkinParams {
    Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor<T> ln_k_gain, ln_k_offset, ln_v_gain, ln_v_offset;
};

/// Softmax-free linear attention with layer-normalized keys/values and a
/// residual connection: out = x + Wo(Q (K^T V) / n). Multi-head variants
/// split the projected channels; head count must divide C.
template <class T>
Tensor<T> galerkin_attention(const Tensor<T>& x, std::size_t heads, const GalerkinParams<T>& p) {
    if (x.ndim() != 3) throw ShapeError("galerkin_attention: input must be [C,H,W]");
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (heads == 0 || c % heads != 0)
        throw ShapeError("galerkin_attention: heads must divide the channel axis");
    const std::size_t n = h * w, dh = c / heads;

    Tensor<T> tok = transpose2d(x.reshaped({c, n}));  // [n, C]
    Tensor<T> q = linear(tok, p.wq, p.bq);
    Tensor<T> k = layer_norm(linear(tok, p.wk, p.bk), p.ln_k_gain, p.ln_k_offset);
    Tensor<T> v = layer_norm(linear(tok, p.wv, p.bv), p.ln_v_gain, p.ln_v_offset);

    std::vector<Tensor<T>> head_outs;
    head_outs.reserve(heads);
    for (std::size_t hd = 0; hd < heads; ++hd) {
        Tensor<T> qh = slice_cols(q, hd * dh, dh);
        Tensor<T> kh = slice_cols(k, hd * dh, dh);
        Tensor<T> vh = slice_cols(v, hd * dh, dh);
        Tensor<T> kv = matmul_at(kh, vh);                       // [dh, dh]
        head_outs.push_back(scale(matmul(qh, kv), T(1) / static_cast<T>(n)));
    }
    Tensor<T> merged = heads == 1 ? head_outs[0] : concat_cols(head_outs);
    Tensor<T> out_tok = add(tok, linear(merged, p.wo, p.bo));
    return transpose2d(out_tok).reshaped({c, h, w});
}

}  // namespace dufal
