#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "dufal/tensor.hpp"

namespace dufal {

// ---------------------------------------------------------------------------
// Convolutions

/// 2D cross-correlation. input [C_in,H,W] * kernel [C_out,C_in,k,k] + bias
/// [C_out] -> [C_out, H-k+1+2p, W-k+1+2p]. k must be odd.
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 int padding) {
    if (input.ndim() != 3) throw ShapeError("conv2d: input must be [C,H,W]");
    if (kernel.ndim() != 4) throw ShapeError("conv2d: kernel must be [C_out,C_in,k,k]");
    const std::size_t ci_n = input.dim(0), h = input.dim(1), w = input.dim(2);
    const std::size_t co_n = kernel.dim(0), k = kernel.dim(2);
    if (kernel.dim(1) != ci_n) {
        std::ostringstream os;
        os << "conv2d: kernel input-channel axis is " << kernel.dim(1) << ", input has " << ci_n;
        throw ShapeError(os.str());
    }
    if (kernel.dim(3) != k) throw ShapeError("conv2d: kernel must be square");
    if (k % 2 == 0) throw ShapeError("conv2d: kernel size must be odd");
    if (h < k || w < k) throw ShapeError("conv2d: spatial axes smaller than kernel");
    if (bias.size() != co_n) {
        std::ostringstream os;
        os << "conv2d: bias axis is " << bias.size() << ", expected C_out=" << co_n;
        throw ShapeError(os.str());
    }
    const std::size_t p = static_cast<std::size_t>(padding);
    const std::size_t oh = h - k + 1 + 2 * p, ow = w - k + 1 + 2 * p;

    std::vector<T> out(co_n * oh * ow);
    const T* in = input.ptr();
    const T* ker = kernel.ptr();
    const T* b = bias.ptr();
    parallel_for(co_n, [&](std::size_t co) {
        T* o = out.data() + co * oh * ow;
        for (std::size_t i = 0; i < oh * ow; ++i) o[i] = b[co];
        for (std::size_t ci = 0; ci < ci_n; ++ci) {
            const T* ich = in + ci * h * w;
            const T* kch = ker + (co * ci_n + ci) * k * k;
            for (std::size_t dy = 0; dy < k; ++dy) {
                for (std::size_t dx = 0; dx < k; ++dx) {
                    const T kv = kch[dy * k + dx];
                    // oy + dy - p in [0, h): clip the output rows/cols touched.
                    const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, (std::ptrdiff_t)p - (std::ptrdiff_t)dy);
                    const std::ptrdiff_t y1 = std::min<std::ptrdiff_t>(oh, h + p - dy);
                    const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, (std::ptrdiff_t)p - (std::ptrdiff_t)dx);
                    const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(ow, w + p - dx);
                    for (std::ptrdiff_t oy = y0; oy < y1; ++oy) {
                        const T* irow = ich + (oy + dy - p) * w + (x0 + dx - p);
                        T* orow = o + oy * ow + x0;
                        for (std::ptrdiff_t ox = 0; ox < x1 - x0; ++ox) orow[ox] += kv * irow[ox];
                    }
                }
            }
        }
    });

    return detail::make_op<T>(
        {co_n, oh, ow}, std::move(out), {input, kernel, bias},
        [in_n = input.node(), ker_n = kernel.node(), b_n = bias.node(), ci_n, h, w, co_n, k, p, oh,
         ow](TensorNode<T>& o) {
            const T* g = o.grad.data();
            if (in_n->requires_grad) {
                T* gi = in_n->grad_ptr();
                const T* ker = ker_n->data.data();
                parallel_for(ci_n, [&](std::size_t ci) {
                    T* gich = gi + ci * h * w;
                    for (std::size_t co = 0; co < co_n; ++co) {
                        const T* gout = g + co * oh * ow;
                        const T* kch = ker + (co * ci_n + ci) * k * k;
                        for (std::size_t dy = 0; dy < k; ++dy) {
                            for (std::size_t dx = 0; dx < k; ++dx) {
                                const T kv = kch[dy * k + dx];
                                const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, (std::ptrdiff_t)p - (std::ptrdiff_t)dy);
                                const std::ptrdiff_t y1 = std::min<std::ptrdiff_t>(oh, h + p - dy);
                                const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, (std::ptrdiff_t)p - (std::ptrdiff_t)dx);
                                const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(ow, w + p - dx);
                                for (std::ptrdiff_t oy = y0; oy < y1; ++oy) {
                                    T* girow = gich + (oy + dy - p) * w + (x0 + dx - p);
                                    const T* grow = gout + oy * ow + x0;
                                    for (std::ptrdiff_t ox = 0; ox < x1 - x0; ++ox)
                                        girow[ox] += kv * grow[ox];
                                }
                            }
                        }
                    }
                });
            }
            if (ker_n->requires_grad) {
                T* gk = ker_n->grad_ptr();
                const T* in = in_n->data.data();
                parallel_for(co_n, [&](std::size_t co) {
                    const T* gout = g + co * oh * ow;
                    for (std::size_t ci = 0; ci < ci_n; ++ci) {
                        const T* ich = in + ci * h * w;
                        for (std::size_t dy = 0; dy < k; ++dy) {
                            for (std::size_t dx = 0; dx < k; ++dx) {
                                const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, (std::ptrdiff_t)p - (std::ptrdiff_t)dy);
                                const std::ptrdiff_t y1 = std::min<std::ptrdiff_t>(oh, h + p - dy);
                                const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, (std::ptrdiff_t)p - (std::ptrdiff_t)dx);
                                const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(ow, w + p - dx);
                                T acc = 0;
                                for (std::ptrdiff_t oy = y0; oy < y1; ++oy) {
                                    const T* irow = ich + (oy + dy - p) * w + (x0 + dx - p);
                                    const T* grow = gout + oy * ow + x0;
                                    for (std::ptrdiff_t ox = 0; ox < x1 - x0; ++ox)
                                        acc += irow[ox] * grow[ox];
                                }
                                gk[((co * ci_n + ci) * k + dy) * k + dx] += acc;
                            }
                        }
                    }
                });
            }
            if (b_n->requires_grad) {
                T* gb = b_n->grad_ptr();
                for (std::size_t co = 0; co < co_n; ++co) {
                    T acc = 0;
                    const T* gout = g + co * oh * ow;
                    for (std::size_t i = 0; i < oh * ow; ++i) acc += gout[i];
                    gb[co] += acc;
                }
            }
        });
}

/// Transposed convolution with a fixed 2x2 kernel and stride 2: each input
/// site scatters into a disjoint 2x2 output block, doubling H and W.
/// kernel layout [C_in, C_out, 2, 2].
template <class T>
Tensor<T> conv_transpose2d_2x2(const Tensor<T>& input, const Tensor<T>& kernel,
                               const Tensor<T>& bias) {
    if (input.ndim() != 3) throw ShapeError("conv_transpose2d_2x2: input must be [C,H,W]");
    if (kernel.ndim() != 4 || kernel.dim(2) != 2 || kernel.dim(3) != 2)
        throw ShapeError("conv_transpose2d_2x2: kernel must be [C_in,C_out,2,2]");
    const std::size_t ci_n = input.dim(0), h = input.dim(1), w = input.dim(2);
    if (kernel.dim(0) != ci_n) {
        std::ostringstream os;
        os << "conv_transpose2d_2x2: kernel input-channel axis is " << kernel.dim(0)
           << ", input has " << ci_n;
        throw ShapeError(os.str());
    }
    const std::size_t co_n = kernel.dim(1);
    if (bias.size() != co_n) throw ShapeError("conv_transpose2d_2x2: bias axis mismatch");
    const std::size_t oh = 2 * h, ow = 2 * w;

    std::vector<T> out(co_n * oh * ow);
    const T* in = input.ptr();
    const T* ker = kernel.ptr();
    const T* b = bias.ptr();
    parallel_for(co_n, [&](std::size_t co) {
        T* o = out.data() + co * oh * ow;
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                T v00 = b[co], v01 = b[co], v10 = b[co], v11 = b[co];
                for (std::size_t ci = 0; ci < ci_n; ++ci) {
                    const T iv = in[(ci * h + y) * w + x];
                    const T* kch = ker + (ci * co_n + co) * 4;
                    v00 += iv * kch[0];
                    v01 += iv * kch[1];
                    v10 += iv * kch[2];
                    v11 += iv * kch[3];
                }
                T* orow = o + 2 * y * ow + 2 * x;
                orow[0] = v00;
                orow[1] = v01;
                orow[ow] = v10;
                orow[ow + 1] = v11;
            }
        }
    });

    return detail::make_op<T>(
        {co_n, oh, ow}, std::move(out), {input, kernel, bias},
        [in_n = input.node(), ker_n = kernel.node(), b_n = bias.node(), ci_n, h, w, co_n, oh,
         ow](TensorNode<T>& o) {
            const T* g = o.grad.data();
            if (in_n->requires_grad) {
                T* gi = in_n->grad_ptr();
                const T* ker = ker_n->data.data();
                parallel_for(ci_n, [&](std::size_t ci) {
                    for (std::size_t y = 0; y < h; ++y) {
                        for (std::size_t x = 0; x < w; ++x) {
                            T acc = 0;
                            for (std::size_t co = 0; co < co_n; ++co) {
                                const T* grow = g + co * oh * ow + 2 * y * ow + 2 * x;
                                const T* kch = ker + (ci * co_n + co) * 4;
                                acc += grow[0] * kch[0] + grow[1] * kch[1] + grow[ow] * kch[2] +
                                       grow[ow + 1] * kch[3];
                            }
                            gi[(ci * h + y) * w + x] += acc;
                        }
                    }
                });
            }
            if (ker_n->requires_grad) {
                T* gk = ker_n->grad_ptr();
                const T* in = in_n->data.data();
                parallel_for(ci_n, [&](std::size_t ci) {
                    for (std::size_t co = 0; co < co_n; ++co) {
                        T a0 = 0, a1 = 0, a2 = 0, a3 = 0;
                        for (std::size_t y = 0; y < h; ++y) {
                            for (std::size_t x = 0; x < w; ++x) {
                                const T iv = in[(ci * h + y) * w + x];
                                const T* grow = g + co * oh * ow + 2 * y * ow + 2 * x;
                                a0 += iv * grow[0];
                                a1 += iv * grow[1];
                                a2 += iv * grow[ow];
                                a3 += iv * grow[ow + 1];
                            }
                        }
                        T* kch = gk + (ci * co_n + co) * 4;
                        kch[0] += a0;
                        kch[1] += a1;
                        kch[2] += a2;
                        kch[3] += a3;
                    }
                });
            }
            if (b_n->requires_grad) {
                T* gb = b_n->grad_ptr();
                for (std::size_t co = 0; co < co_n; ++co) {
                    T acc = 0;
                    const T* gout = g + co * oh * ow;
                    for (std::size_t i = 0; i < oh * ow; ++i) acc += gout[i];
                    gb[co] += acc;
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Pooling

/// 2x2 max pooling, stride 2. Gradient routes to the window argmax; ties
/// resolve to the first element in row-major order.
template <class T>
Tensor<T> maxpool_2x2(const Tensor<T>& input) {
    if (input.ndim() != 3) throw ShapeError("maxpool_2x2: input must be [C,H,W]");
    const std::size_t c_n = input.dim(0), h = input.dim(1), w = input.dim(2);
    if (h % 2 != 0 || w % 2 != 0) throw ShapeError("maxpool_2x2: H and W must be even");
    const std::size_t oh = h / 2, ow = w / 2;

    std::vector<T> out(c_n * oh * ow);
    auto argmax = std::make_shared<std::vector<std::uint32_t>>(out.size());
    const T* in = input.ptr();
    for (std::size_t c = 0; c < c_n; ++c) {
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t x = 0; x < ow; ++x) {
                const std::size_t base = (c * h + 2 * y) * w + 2 * x;
                const std::size_t cand[4] = {base, base + 1, base + w, base + w + 1};
                std::size_t best = cand[0];
                for (int i = 1; i < 4; ++i)
                    if (in[cand[i]] > in[best]) best = cand[i];
                const std::size_t oi = (c * oh + y) * ow + x;
                out[oi] = in[best];
                (*argmax)[oi] = static_cast<std::uint32_t>(best);
            }
        }
    }
    return detail::make_op<T>(
        {c_n, oh, ow}, std::move(out), {input},
        [in_n = input.node(), argmax](TensorNode<T>& o) {
            T* gi = in_n->grad_ptr();
            for (std::size_t i = 0; i < o.grad.size(); ++i) gi[(*argmax)[i]] += o.grad[i];
        });
}

/// 2x2 average pooling, stride 2.
template <class T>
Tensor<T> avgpool_2x2(const Tensor<T>& input) {
    if (input.ndim() != 3) throw ShapeError("avgpool_2x2: input must be [C,H,W]");
    const std::size_t c_n = input.dim(0), h = input.dim(1), w = input.dim(2);
    if (h % 2 != 0 || w % 2 != 0) throw ShapeError("avgpool_2x2: H and W must be even");
    const std::size_t oh = h / 2, ow = w / 2;

    std::vector<T> out(c_n * oh * ow);
    const T* in = input.ptr();
    for (std::size_t c = 0; c < c_n; ++c)
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t x = 0; x < ow; ++x) {
                const std::size_t base = (c * h + 2 * y) * w + 2 * x;
                out[(c * oh + y) * ow + x] =
                    (in[base] + in[base + 1] + in[base + w] + in[base + w + 1]) * T(0.25);
            }
    return detail::make_op<T>(
        {c_n, oh, ow}, std::move(out), {input},
        [in_n = input.node(), c_n, h, w, oh, ow](TensorNode<T>& o) {
            T* gi = in_n->grad_ptr();
            for (std::size_t c = 0; c < c_n; ++c)
                for (std::size_t y = 0; y < oh; ++y)
                    for (std::size_t x = 0; x < ow; ++x) {
                        const T gv = o.grad[(c * oh + y) * ow + x] * T(0.25);
                        const std::size_t base = (c * h + 2 * y) * w + 2 * x;
                        gi[base] += gv;
                        gi[base + 1] += gv;
                        gi[base + w] += gv;
                        gi[base + w + 1] += gv;
                    }
        });
}

// ---------------------------------------------------------------------------
// Activations

template <class T>
Tensor<T> relu(const Tensor<T>& input) {
    std::vector<T> out(input.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = input[i] > T(0) ? input[i] : T(0);
    return detail::make_op<T>(
        std::vector<std::size_t>(input.shape()), std::move(out), {input},
        [in_n = input.node()](TensorNode<T>& o) {
            T* gi = in_n->grad_ptr();
            for (std::size_t i = 0; i < o.grad.size(); ++i)
                if (in_n->data[i] > T(0)) gi[i] += o.grad[i];
        });
}

/// Exact GELU, x * Phi(x) with Phi the standard normal CDF.
template <class T>
Tensor<T> gelu(const Tensor<T>& input) {
    constexpr T inv_sqrt2 = T(0.70710678118654752440);
    std::vector<T> out(input.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T x = input[i];
        out[i] = x * T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
    }
    return detail::make_op<T>(
        std::vector<std::size_t>(input.shape()), std::move(out), {input},
        [in_n = input.node()](TensorNode<T>& o) {
            constexpr T inv_sqrt2pi = T(0.39894228040143267794);
            T* gi = in_n->grad_ptr();
            for (std::size_t i = 0; i < o.grad.size(); ++i) {
                const T x = in_n->data[i];
                const T cdf = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
                const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x * x);
                gi[i] += o.grad[i] * (cdf + x * pdf);
            }
        });
}

// ---------------------------------------------------------------------------
// Linear algebra

/// Contraction over the trailing axis: [..., C_in] x [C_out, C_in] + [C_out]
/// -> [..., C_out].
template <class T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
    if (input.ndim() < 1 || weight.ndim() != 2) throw ShapeError("linear: weight must be 2-d");
    const std::size_t cin = input.dim(input.ndim() - 1);
    const std::size_t cout = weight.dim(0);
    if (weight.dim(1) != cin) {
        std::ostringstream os;
        os << "linear: trailing axis " << cin << " does not match weight columns " << weight.dim(1);
        throw ShapeError(os.str());
    }
    if (bias.size() != cout) throw ShapeError("linear: bias axis mismatch");
    const std::size_t rows = input.size() / cin;

    std::vector<std::size_t> out_shape(input.shape());
    out_shape.back() = cout;
    std::vector<T> out(rows * cout);
    const T* in = input.ptr();
    const T* wt = weight.ptr();
    const T* b = bias.ptr();
    parallel_for(rows, [&](std::size_t r) {
        const T* xrow = in + r * cin;
        T* orow = out.data() + r * cout;
        for (std::size_t co = 0; co < cout; ++co) {
            const T* wrow = wt + co * cin;
            T acc = b[co];
            for (std::size_t ci = 0; ci < cin; ++ci) acc += xrow[ci] * wrow[ci];
            orow[co] = acc;
        }
    });

    return detail::make_op<T>(
        std::move(out_shape), std::move(out), {input, weight, bias},
        [in_n = input.node(), w_n = weight.node(), b_n = bias.node(), rows, cin,
         cout](TensorNode<T>& o) {
            const T* g = o.grad.data();
            if (in_n->requires_grad) {
                T* gi = in_n->grad_ptr();
                const T* wt = w_n->data.data();
                parallel_for(rows, [&](std::size_t r) {
                    const T* grow = g + r * cout;
                    T* girow = gi + r * cin;
                    for (std::size_t co = 0; co < cout; ++co) {
                        const T gv = grow[co];
                        const T* wrow = wt + co * cin;
                        for (std::size_t ci = 0; ci < cin; ++ci) girow[ci] += gv * wrow[ci];
                    }
                });
            }
            if (w_n->requires_grad) {
                T* gw = w_n->grad_ptr();
                const T* in = in_n->data.data();
                parallel_for(cout, [&](std::size_t co) {
                    T* gwrow = gw + co * cin;
                    for (std::size_t r = 0; r < rows; ++r) {
                        const T gv = g[r * cout + co];
                        const T* xrow = in + r * cin;
                        for (std::size_t ci = 0; ci < cin; ++ci) gwrow[ci] += gv * xrow[ci];
                    }
                });
            }
            if (b_n->requires_grad) {
                T* gb = b_n->grad_ptr();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t co = 0; co < cout; ++co) gb[co] += g[r * cout + co];
            }
        });
}

/// out = A[n,k] * B[k,m].
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: inner axes mismatch");
    const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
    std::vector<T> out(n * m, T(0));
    const T* ap = a.ptr();
    const T* bp = b.ptr();
    parallel_for(n, [&](std::size_t i) {
        T* orow = out.data() + i * m;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const T av = ap[i * k + kk];
            const T* brow = bp + kk * m;
            for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
        }
    });
    return detail::make_op<T>(
        {n, m}, std::move(out), {a, b},
        [an = a.node(), bn = b.node(), n, k, m](TensorNode<T>& o) {
            const T* g = o.grad.data();
            if (an->requires_grad) {  // dA = g * B^T
                T* ga = an->grad_ptr();
                const T* bp = bn->data.data();
                parallel_for(n, [&](std::size_t i) {
                    for (std::size_t kk = 0; kk < k; ++kk) {
                        T acc = 0;
                        const T* grow = g + i * m;
                        const T* brow = bp + kk * m;
                        for (std::size_t j = 0; j < m; ++j) acc += grow[j] * brow[j];
                        ga[i * k + kk] += acc;
                    }
                });
            }
            if (bn->requires_grad) {  // dB = A^T * g
                T* gb = bn->grad_ptr();
                const T* ap = an->data.data();
                parallel_for(k, [&](std::size_t kk) {
                    T* gbrow = gb + kk * m;
                    for (std::size_t i = 0; i < n; ++i) {
                        const T av = ap[i * k + kk];
                        const T* grow = g + i * m;
                        for (std::size_t j = 0; j < m; ++j) gbrow[j] += av * grow[j];
                    }
                });
            }
        });
}

/// out = A^T * B for A[n,k], B[n,m] -> [k,m].
template <class T>
Tensor<T> matmul_at(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(0) != b.dim(0))
        throw ShapeError("matmul_at: leading axes mismatch");
    const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
    std::vector<T> out(k * m, T(0));
    const T* ap = a.ptr();
    const T* bp = b.ptr();
    for (std::size_t i = 0; i < n; ++i) {
        const T* arow = ap + i * k;
        const T* brow = bp + i * m;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const T av = arow[kk];
            T* orow = out.data() + kk * m;
            for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
        }
    }
    return detail::make_op<T>(
        {k, m}, std::move(out), {a, b},
        [an = a.node(), bn = b.node(), n, k, m](TensorNode<T>& o) {
            const T* g = o.grad.data();
            if (an->requires_grad) {  // dA = B * g^T
                T* ga = an->grad_ptr();
                const T* bp = bn->data.data();
                parallel_for(n, [&](std::size_t i) {
                    T* garow = ga + i * k;
                    const T* brow = bp + i * m;
                    for (std::size_t kk = 0; kk < k; ++kk) {
                        T acc = 0;
                        const T* grow = g + kk * m;
                        for (std::size_t j = 0; j < m; ++j) acc += brow[j] * grow[j];
                        garow[kk] += acc;
                    }
                });
            }
            if (bn->requires_grad) {  // dB = A * g
                T* gb = bn->grad_ptr();
                const T* ap = an->data.data();
                parallel_for(n, [&](std::size_t i) {
                    T* gbrow = gb + i * m;
                    const T* arow = ap + i * k;
                    for (std::size_t kk = 0; kk < k; ++kk) {
                        const T av = arow[kk];
                        const T* grow = g + kk * m;
                        for (std::size_t j = 0; j < m; ++j) gbrow[j] += av * grow[j];
                    }
                });
            }
        });
}

// ---------------------------------------------------------------------------
// Normalization

/// Layer norm over the trailing axis with affine gain/offset. Variance is
/// biased (divide by C) with eps = 1e-5 added before the square root.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& input, const Tensor<T>& gain, const Tensor<T>& offset) {
    const std::size_t c = input.dim(input.ndim() - 1);
    if (c < 1) throw ShapeError("layer_norm: trailing axis must be >= 1");
    if (gain.size() != c || offset.size() != c) throw ShapeError("layer_norm: affine axis mismatch");
    const std::size_t rows = input.size() / c;
    constexpr T eps = T(1e-5);

    std::vector<T> out(input.size());
    auto inv_sigma = std::make_shared<std::vector<T>>(rows);
    auto mu = std::make_shared<std::vector<T>>(rows);
    const T* in = input.ptr();
    const T* g = gain.ptr();
    const T* b = offset.ptr();
    parallel_for(rows, [&](std::size_t r) {
        const T* x = in + r * c;
        T m = 0;
        for (std::size_t i = 0; i < c; ++i) m += x[i];
        m /= static_cast<T>(c);
        T var = 0;
        for (std::size_t i = 0; i < c; ++i) var += (x[i] - m) * (x[i] - m);
        var /= static_cast<T>(c);
        const T is = T(1) / std::sqrt(var + eps);
        (*mu)[r] = m;
        (*inv_sigma)[r] = is;
        T* o = out.data() + r * c;
        for (std::size_t i = 0; i < c; ++i) o[i] = (x[i] - m) * is * g[i] + b[i];
    });

    return detail::make_op<T>(
        std::vector<std::size_t>(input.shape()), std::move(out), {input, gain, offset},
        [in_n = input.node(), g_n = gain.node(), b_n = offset.node(), rows, c, mu,
         inv_sigma](TensorNode<T>& o) {
            const T* go = o.grad.data();
            const T* in = in_n->data.data();
            const T* g = g_n->data.data();
            if (in_n->requires_grad) {
                T* gi = in_n->grad_ptr();
                parallel_for(rows, [&](std::size_t r) {
                    const T* x = in + r * c;
                    const T* gr = go + r * c;
                    const T is = (*inv_sigma)[r], m = (*mu)[r];
                    T mean_dxhat = 0, mean_dxhat_xhat = 0;
                    for (std::size_t i = 0; i < c; ++i) {
                        const T xhat = (x[i] - m) * is;
                        const T dxhat = gr[i] * g[i];
                        mean_dxhat += dxhat;
                        mean_dxhat_xhat += dxhat * xhat;
                    }
                    mean_dxhat /= static_cast<T>(c);
                    mean_dxhat_xhat /= static_cast<T>(c);
                    T* gir = gi + r * c;
                    for (std::size_t i = 0; i < c; ++i) {
                        const T xhat = (x[i] - m) * is;
                        const T dxhat = gr[i] * g[i];
                        gir[i] += is * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
                    }
                });
            }
            if (g_n->requires_grad) {
                T* gg = g_n->grad_ptr();
                for (std::size_t r = 0; r < rows; ++r) {
                    const T is = (*inv_sigma)[r], m = (*mu)[r];
                    for (std::size_t i = 0; i < c; ++i)
                        gg[i] += go[r * c + i] * (in[r * c + i] - m) * is;
                }
            }
            if (b_n->requires_grad) {
                T* gb = b_n->grad_ptr();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t i = 0; i < c; ++i) gb[i] += go[r * c + i];
            }
        });
}

// ---------------------------------------------------------------------------
// Shape surgery

/// [n, m] -> [m, n].
template <class T>
Tensor<T> transpose2d(const Tensor<T>& x) {
    if (x.ndim() != 2) throw ShapeError("transpose2d: input must be 2-d");
    const std::size_t n = x.dim(0), m = x.dim(1);
    std::vector<T> out(n * m);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out[j * n + i] = x[i * m + j];
    return detail::make_op<T>(
        {m, n}, std::move(out), {x},
        [xn = x.node(), n, m](TensorNode<T>& o) {
            T* g = xn->grad_ptr();
            for (std::size_t j = 0; j < m; ++j)
                for (std::size_t i = 0; i < n; ++i) g[i * m + j] += o.grad[j * n + i];
        });
}

/// Concatenation along axis 0 (contiguous blocks).
template <class T>
Tensor<T> concat_axis0(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.ndim() != b.ndim()) throw ShapeError("concat_axis0: rank mismatch");
    for (std::size_t i = 1; i < a.ndim(); ++i)
        if (a.dim(i) != b.dim(i)) throw ShapeError("concat_axis0: trailing axes mismatch");
    std::vector<std::size_t> shape(a.shape());
    shape[0] += b.dim(0);
    std::vector<T> out;
    out.reserve(a.size() + b.size());
    out.insert(out.end(), a.data().begin(), a.data().end());
    out.insert(out.end(), b.data().begin(), b.data().end());
    return detail::make_op<T>(
        std::move(shape), std::move(out), {a, b},
        [an = a.node(), bn = b.node()](TensorNode<T>& o) {
            const std::size_t na = an->data.size();
            if (an->requires_grad) {
                T* g = an->grad_ptr();
                for (std::size_t i = 0; i < na; ++i) g[i] += o.grad[i];
            }
            if (bn->requires_grad) {
                T* g = bn->grad_ptr();
                for (std::size_t i = 0; i < bn->data.size(); ++i) g[i] += o.grad[na + i];
            }
        });
}

/// Column slice of a [n, C] matrix: columns [start, start+len).
template <class T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t start, std::size_t len) {
    if (x.ndim() != 2) throw ShapeError("slice_cols: input must be 2-d");
    const std::size_t n = x.dim(0), c = x.dim(1);
    if (start + len > c) throw ShapeError("slice_cols: out of range");
    std::vector<T> out(n * len);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < len; ++j) out[i * len + j] = x[i * c + start + j];
    return detail::make_op<T>(
        {n, len}, std::move(out), {x},
        [xn = x.node(), n, c, start, len](TensorNode<T>& o) {
            T* g = xn->grad_ptr();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < len; ++j) g[i * c + start + j] += o.grad[i * len + j];
        });
}

/// Column-wise concatenation of [n, C_i] matrices.
template <class T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const std::size_t n = parts[0].dim(0);
    std::size_t ctot = 0;
    for (const auto& p : parts) {
        if (p.ndim() != 2 || p.dim(0) != n) throw ShapeError("concat_cols: row mismatch");
        ctot += p.dim(1);
    }
    std::vector<T> out(n * ctot);
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t c = p.dim(1);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) out[i * ctot + off + j] = p[i * c + j];
        off += c;
    }
    Tensor<T> result = Tensor<T>::from_data({n, ctot}, std::move(out));
    if (!autograd::grad_mode()) return result;
    bool needs = false;
    for (const auto& p : parts) needs = needs || p.requires_grad();
    if (!needs) return result;
    result.set_requires_grad(true);
    auto node = result.node();
    std::vector<std::shared_ptr<TensorNode<T>>> pnodes;
    for (const auto& p : parts) {
        node->parents.push_back(p.node());
        pnodes.push_back(p.node());
    }
    node->backward_fn = [pnodes, n, ctot](TensorNode<T>& o) {
        std::size_t off = 0;
        for (const auto& pn : pnodes) {
            const std::size_t c = pn->data.size() / n;
            if (pn->requires_grad) {
                T* g = pn->grad_ptr();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < c; ++j) g[i * c + j] += o.grad[i * ctot + off + j];
            }
            off += c;
        }
    };
    return result;
}

// ---------------------------------------------------------------------------
// Interpolation

/// Bilinear sample of feature [C,H,W] at continuous pixel coordinates
/// xy = (x, y) held in a 2-element tensor; differentiable w.r.t. both the
/// feature map and the coordinates. Points outside [0,W-1]x[0,H-1] yield
/// zeros (and zero coordinate gradients).
template <class T>
Tensor<T> bilinear_sample(const Tensor<T>& feature, const Tensor<T>& xy) {
    if (feature.ndim() != 3) throw ShapeError("bilinear_sample: feature must be [C,H,W]");
    if (xy.size() != 2) throw ShapeError("bilinear_sample: xy must have 2 elements");
    const std::size_t c_n = feature.dim(0), h = feature.dim(1), w = feature.dim(2);
    const T x = xy[0], y = xy[1];
    std::vector<T> out(c_n, T(0));
    const bool inside = x >= T(0) && y >= T(0) && x <= T(w - 1) && y <= T(h - 1);
    if (inside) {
        std::size_t x0 = static_cast<std::size_t>(x), y0 = static_cast<std::size_t>(y);
        if (x0 >= w - 1) x0 = w - 2;  // keep a valid 2x2 neighborhood at the far edge
        if (y0 >= h - 1) y0 = h - 2;
        if (w == 1) x0 = 0;
        if (h == 1) y0 = 0;
        const T fx = x - static_cast<T>(x0), fy = y - static_cast<T>(y0);
        const std::size_t x1 = w == 1 ? x0 : x0 + 1, y1 = h == 1 ? y0 : y0 + 1;
        for (std::size_t c = 0; c < c_n; ++c) {
            const T* f = feature.ptr() + c * h * w;
            const T v00 = f[y0 * w + x0], v01 = f[y0 * w + x1];
            const T v10 = f[y1 * w + x0], v11 = f[y1 * w + x1];
            out[c] = (T(1) - fy) * ((T(1) - fx) * v00 + fx * v01) +
                     fy * ((T(1) - fx) * v10 + fx * v11);
        }
    }
    return detail::make_op<T>(
        {c_n}, std::move(out), {feature, xy},
        [f_n = feature.node(), xy_n = xy.node(), c_n, h, w, inside](TensorNode<T>& o) {
            if (!inside) return;
            const T x = xy_n->data[0], y = xy_n->data[1];
            std::size_t x0 = static_cast<std::size_t>(x), y0 = static_cast<std::size_t>(y);
            if (x0 >= w - 1) x0 = w >= 2 ? w - 2 : 0;
            if (y0 >= h - 1) y0 = h >= 2 ? h - 2 : 0;
            if (w == 1) x0 = 0;
            if (h == 1) y0 = 0;
            const T fx = x - static_cast<T>(x0), fy = y - static_cast<T>(y0);
            const std::size_t x1 = w == 1 ? x0 : x0 + 1, y1 = h == 1 ? y0 : y0 + 1;
            T gx = 0, gy = 0;
            T* gf = f_n->requires_grad ? f_n->grad_ptr() : nullptr;
            for (std::size_t c = 0; c < c_n; ++c) {
                const T gv = o.grad[c];
                const T* f = f_n->data.data() + c * h * w;
                const T v00 = f[y0 * w + x0], v01 = f[y0 * w + x1];
                const T v10 = f[y1 * w + x0], v11 = f[y1 * w + x1];
                if (gf) {
                    T* gc = gf + c * h * w;
                    gc[y0 * w + x0] += gv * (T(1) - fy) * (T(1) - fx);
                    gc[y0 * w + x1] += gv * (T(1) - fy) * fx;
                    gc[y1 * w + x0] += gv * fy * (T(1) - fx);
                    gc[y1 * w + x1] += gv * fy * fx;
                }
                gx += gv * ((T(1) - fy) * (v01 - v00) + fy * (v11 - v10));
                gy += gv * ((T(1) - fx) * (v10 - v00) + fx * (v11 - v01));
            }
            if (xy_n->requires_grad) {
                T* gxy = xy_n->grad_ptr();
                gxy[0] += gx;
                gxy[1] += gy;
            }
        });
}

/// Batched bilinear sampling at fixed coordinates: feature [C,H,W] sampled
/// at n (x, y) points -> [n, C]. Differentiable w.r.t. the feature map.
template <class T>
Tensor<T> bilinear_sample_batch(const Tensor<T>& feature,
                                const std::shared_ptr<std::vector<double>>& coords_xy) {
    if (feature.ndim() != 3) throw ShapeError("bilinear_sample_batch: feature must be [C,H,W]");
    if (coords_xy->size() % 2 != 0) throw ShapeError("bilinear_sample_batch: coords must be n*2");
    const std::size_t c_n = feature.dim(0), h = feature.dim(1), w = feature.dim(2);
    const std::size_t n = coords_xy->size() / 2;

    std::vector<T> out(n * c_n, T(0));
    const T* f = feature.ptr();
    parallel_for(n, [&](std::size_t i) {
        const double x = (*coords_xy)[2 * i], y = (*coords_xy)[2 * i + 1];
        if (!(x >= 0 && y >= 0 && x <= double(w - 1) && y <= double(h - 1))) return;
        std::size_t x0 = static_cast<std::size_t>(x), y0 = static_cast<std::size_t>(y);
        if (x0 >= w - 1) x0 = w >= 2 ? w - 2 : 0;
        if (y0 >= h - 1) y0 = h >= 2 ? h - 2 : 0;
        const T fx = static_cast<T>(x - double(x0)), fy = static_cast<T>(y - double(y0));
        const std::size_t x1 = w == 1 ? x0 : x0 + 1, y1 = h == 1 ? y0 : y0 + 1;
        T* orow = out.data() + i * c_n;
        for (std::size_t c = 0; c < c_n; ++c) {
            const T* fc = f + c * h * w;
            orow[c] = (T(1) - fy) * ((T(1) - fx) * fc[y0 * w + x0] + fx * fc[y0 * w + x1]) +
                      fy * ((T(1) - fx) * fc[y1 * w + x0] + fx * fc[y1 * w + x1]);
        }
    });

    return detail::make_op<T>(
        {n, c_n}, std::move(out), {feature},
        [f_n = feature.node(), coords_xy, c_n, h, w, n](TensorNode<T>& o) {
            T* gf = f_n->grad_ptr();
            for (std::size_t i = 0; i < n; ++i) {
                const double x = (*coords_xy)[2 * i], y = (*coords_xy)[2 * i + 1];
                if (!(x >= 0 && y >= 0 && x <= double(w - 1) && y <= double(h - 1))) continue;
                std::size_t x0 = static_cast<std::size_t>(x), y0 = static_cast<std::size_t>(y);
                if (x0 >= w - 1) x0 = w >= 2 ? w - 2 : 0;
                if (y0 >= h - 1) y0 = h >= 2 ? h - 2 : 0;
                const T fx = static_cast<T>(x - double(x0)), fy = static_cast<T>(y - double(y0));
                const std::size_t x1 = w == 1 ? x0 : x0 + 1, y1 = h == 1 ? y0 : y0 + 1;
                const T* grow = o.grad.data() + i * c_n;
                for (std::size_t c = 0; c < c_n; ++c) {
                    const T gv = grow[c];
                    T* gc = gf + c * h * w;
                    gc[y0 * w + x0] += gv * (T(1) - fy) * (T(1) - fx);
                    gc[y0 * w + x1] += gv * (T(1) - fy) * fx;
                    gc[y1 * w + x0] += gv * fy * (T(1) - fx);
                    gc[y1 * w + x1] += gv * fy * fx;
                }
            }
        });
}

}  // namespace dufal
