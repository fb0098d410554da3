#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <vector>

#include "dufal/fft.hpp"
#include "dufal/tensor.hpp"

namespace dufal {

/// Real/imaginary parts of a 2D Fourier transform of a [C,H,W] feature map
/// (or of a retained [C,M1,M2] block of it). source_dims remembers the
/// spatial extent of the originating map.
template <class T>
struct ComplexSpectrum {
    Tensor<T> re, im;
    std::size_t src_h = 0, src_w = 0;

    std::size_t channels() const { return re.dim(0); }
    std::size_t m1() const { return re.dim(1); }
    std::size_t m2() const { return re.dim(2); }
};

enum class MaskVariant { high, low };

/// Retained FFT row/column indices per axis, strictly increasing.
struct ModeMask {
    std::vector<std::size_t> height_indices, width_indices;
    MaskVariant variant = MaskVariant::high;
};

namespace detail {

inline std::vector<std::size_t> mask_axis(std::size_t n, std::size_t m, MaskVariant variant) {
    if (m == 0 || m > n) throw ValueError("make_mode_mask: mode count out of range");
    std::vector<std::size_t> idx;
    if (variant == MaskVariant::high) {
        if (m >= n) throw ValueError("make_mode_mask: high variant needs modes < extent");
        // Block centered on the Nyquist index n/2 (largest |signed frequency|).
        const std::size_t lo = n / 2 - (m + 1) / 2;
        for (std::size_t i = 0; i < m; ++i) idx.push_back(lo + i);
    } else {
        // m indices of smallest |signed frequency|, wrap-aware around 0.
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        auto absfreq = [n](std::size_t i) { return i <= n / 2 ? i : n - i; };
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return absfreq(a) != absfreq(b) ? absfreq(a) < absfreq(b) : a < b;
        });
        idx.assign(order.begin(), order.begin() + m);
        std::sort(idx.begin(), idx.end());
    }
    return idx;
}

}  // namespace detail

inline ModeMask make_mode_mask(std::size_t h, std::size_t w, std::size_t m1, std::size_t m2,
                               MaskVariant variant) {
    ModeMask mask;
    mask.variant = variant;
    mask.height_indices = detail::mask_axis(h, m1, variant);
    mask.width_indices = detail::mask_axis(w, m2, variant);
    return mask;
}

// ---------------------------------------------------------------------------
// Forward / inverse transforms (autodiff)

/// Unnormalized forward 2D DFT per channel. H and W must be powers of two.
template <class T>
ComplexSpectrum<T> fft2(const Tensor<T>& input) {
    if (input.ndim() != 3) throw ShapeError("fft2: input must be [C,H,W]");
    const std::size_t c_n = input.dim(0), h = input.dim(1), w = input.dim(2);
    if (!fft::is_power_of_two(h) || !fft::is_power_of_two(w))
        throw ValueError("fft2: spatial dims must be powers of two");
    fft::plan_for<T>(h);
    fft::plan_for<T>(w);

    std::vector<T> re(input.size()), im(input.size(), T(0));
    const T* in = input.ptr();
    parallel_for(c_n, [&](std::size_t c) {
        T* cr = re.data() + c * h * w;
        T* ci = im.data() + c * h * w;
        std::copy(in + c * h * w, in + (c + 1) * h * w, cr);
        std::fill(ci, ci + h * w, T(0));
        fft::transform_2d(cr, ci, h, w, false);
    });

    ComplexSpectrum<T> out;
    out.src_h = h;
    out.src_w = w;
    // d(input) = Re(unnormalized inverse transform of the output cotangent);
    // each part node pushes its own half of the complex cotangent.
    auto backprop = [](TensorNode<T>& in_node, const std::vector<T>& g, bool is_im,
                       std::size_t c_n, std::size_t h, std::size_t w) {
        T* gi = in_node.grad_ptr();
        parallel_for(c_n, [&](std::size_t c) {
            std::vector<T> br(h * w), bi(h * w, T(0));
            const T* src = g.data() + c * h * w;
            if (is_im) {
                std::fill(br.begin(), br.end(), T(0));
                std::copy(src, src + h * w, bi.begin());
            } else {
                std::copy(src, src + h * w, br.begin());
            }
            fft::transform_2d(br.data(), bi.data(), h, w, true);
            T* dst = gi + c * h * w;
            for (std::size_t i = 0; i < h * w; ++i) dst[i] += br[i];
        });
    };
    out.re = detail::make_op<T>(
        {c_n, h, w}, std::move(re), {input},
        [in_n = input.node(), backprop, c_n, h, w](TensorNode<T>& o) {
            backprop(*in_n, o.grad, false, c_n, h, w);
        });
    out.im = detail::make_op<T>(
        {c_n, h, w}, std::move(im), {input},
        [in_n = input.node(), backprop, c_n, h, w](TensorNode<T>& o) {
            backprop(*in_n, o.grad, true, c_n, h, w);
        });
    return out;
}

/// Inverse 2D DFT scaled by 1/(H*W); returns the real part only, so spectra
/// made non-Hermitian by learned weights project back to real feature maps.
template <class T>
Tensor<T> ifft2(const ComplexSpectrum<T>& spec) {
    const std::size_t c_n = spec.channels(), h = spec.m1(), w = spec.m2();
    if (h != spec.src_h || w != spec.src_w)
        throw ShapeError("ifft2: spectrum dims do not match source dims");
    fft::plan_for<T>(h);
    fft::plan_for<T>(w);
    const T scale = T(1) / static_cast<T>(h * w);

    std::vector<T> out(spec.re.size());
    const T* sr = spec.re.ptr();
    const T* si = spec.im.ptr();
    parallel_for(c_n, [&](std::size_t c) {
        std::vector<T> br(sr + c * h * w, sr + (c + 1) * h * w);
        std::vector<T> bi(si + c * h * w, si + (c + 1) * h * w);
        fft::transform_2d(br.data(), bi.data(), h, w, true);
        T* dst = out.data() + c * h * w;
        for (std::size_t i = 0; i < h * w; ++i) dst[i] = br[i] * scale;
    });

    // d(spec) = forward DFT of the (real) cotangent, scaled by 1/(H*W):
    // d(re) takes the real part and d(im) the imaginary part, because the
    // forward map reads re through cos and im through -sin.
    return detail::make_op<T>(
        {c_n, h, w}, std::move(out), {spec.re, spec.im},
        [re_n = spec.re.node(), im_n = spec.im.node(), c_n, h, w, scale](TensorNode<T>& o) {
            T* gre = re_n->requires_grad ? re_n->grad_ptr() : nullptr;
            T* gim = im_n->requires_grad ? im_n->grad_ptr() : nullptr;
            parallel_for(c_n, [&](std::size_t c) {
                std::vector<T> br(o.grad.begin() + c * h * w, o.grad.begin() + (c + 1) * h * w);
                std::vector<T> bi(h * w, T(0));
                fft::transform_2d(br.data(), bi.data(), h, w, false);
                for (std::size_t i = 0; i < h * w; ++i) {
                    if (gre) gre[c * h * w + i] += br[i] * scale;
                    if (gim) gim[c * h * w + i] += bi[i] * scale;
                }
            });
        });
}

// ---------------------------------------------------------------------------
// Mode gather / scatter

/// Gathers the masked [C,M1,M2] block out of a full [C,H,W] spectrum.
template <class T>
ComplexSpectrum<T> extract_modes(const ComplexSpectrum<T>& spec, const ModeMask& mask) {
    const std::size_t c_n = spec.channels(), h = spec.m1(), w = spec.m2();
    const std::size_t m1 = mask.height_indices.size(), m2 = mask.width_indices.size();
    for (auto i : mask.height_indices)
        if (i >= h) throw ShapeError("extract_modes: mask row index out of range");
    for (auto i : mask.width_indices)
        if (i >= w) throw ShapeError("extract_modes: mask column index out of range");

    auto rows = std::make_shared<std::vector<std::size_t>>(mask.height_indices);
    auto cols = std::make_shared<std::vector<std::size_t>>(mask.width_indices);
    auto gather = [&](const Tensor<T>& part) {
        std::vector<T> out(c_n * m1 * m2);
        for (std::size_t c = 0; c < c_n; ++c)
            for (std::size_t u = 0; u < m1; ++u)
                for (std::size_t v = 0; v < m2; ++v)
                    out[(c * m1 + u) * m2 + v] =
                        part[(c * h + (*rows)[u]) * w + (*cols)[v]];
        return detail::make_op<T>(
            {c_n, m1, m2}, std::move(out), {part},
            [p_n = part.node(), rows, cols, c_n, h, w, m1, m2](TensorNode<T>& o) {
                T* g = p_n->grad_ptr();
                for (std::size_t c = 0; c < c_n; ++c)
                    for (std::size_t u = 0; u < m1; ++u)
                        for (std::size_t v = 0; v < m2; ++v)
                            g[(c * h + (*rows)[u]) * w + (*cols)[v]] +=
                                o.grad[(c * m1 + u) * m2 + v];
            });
    };
    ComplexSpectrum<T> out;
    out.re = gather(spec.re);
    out.im = gather(spec.im);
    out.src_h = spec.src_h;
    out.src_w = spec.src_w;
    return out;
}

/// Inverse of extract_modes: places the block back into an all-zero [C,H,W]
/// spectrum at the masked indices.
template <class T>
ComplexSpectrum<T> scatter_modes(const ComplexSpectrum<T>& block, const ModeMask& mask,
                                 std::size_t h, std::size_t w) {
    const std::size_t c_n = block.channels(), m1 = block.m1(), m2 = block.m2();
    if (mask.height_indices.size() != m1 || mask.width_indices.size() != m2)
        throw ShapeError("scatter_modes: mask does not match block dims");
    auto rows = std::make_shared<std::vector<std::size_t>>(mask.height_indices);
    auto cols = std::make_shared<std::vector<std::size_t>>(mask.width_indices);
    auto scatter = [&](const Tensor<T>& part) {
        std::vector<T> out(c_n * h * w, T(0));
        for (std::size_t c = 0; c < c_n; ++c)
            for (std::size_t u = 0; u < m1; ++u)
                for (std::size_t v = 0; v < m2; ++v)
                    out[(c * h + (*rows)[u]) * w + (*cols)[v]] = part[(c * m1 + u) * m2 + v];
        return detail::make_op<T>(
            {c_n, h, w}, std::move(out), {part},
            [p_n = part.node(), rows, cols, c_n, h, w, m1, m2](TensorNode<T>& o) {
                T* g = p_n->grad_ptr();
                for (std::size_t c = 0; c < c_n; ++c)
                    for (std::size_t u = 0; u < m1; ++u)
                        for (std::size_t v = 0; v < m2; ++v)
                            g[(c * m1 + u) * m2 + v] +=
                                o.grad[(c * h + (*rows)[u]) * w + (*cols)[v]];
            });
    };
    ComplexSpectrum<T> out;
    out.re = scatter(block.re);
    out.im = scatter(block.im);
    out.src_h = h;
    out.src_w = w;
    return out;
}

// ---------------------------------------------------------------------------
// Spectral weighting

namespace detail {

template <class T>
struct SpanPair {
    const T* re;
    const T* im;
    T load_re(std::size_t i) const { return re ? re[i] : T(0); }
    T load_im(std::size_t i) const { return im ? im[i] : T(0); }
};

}  // namespace detail

/// Full per-mode channel mixing: out[c',u,v] = sum_c R[c',c,u,v] * z[c,u,v],
/// complex throughout. R parts have shape [C_out, C_in, M1, M2].
template <class T>
ComplexSpectrum<T> spectral_apply_full(const ComplexSpectrum<T>& z, const Tensor<T>& r_re,
                                       const Tensor<T>& r_im) {
    check_same_shape(r_re, r_im, "spectral_apply_full");
    if (r_re.ndim() != 4) throw ShapeError("spectral_apply_full: weight must be 4-d");
    const std::size_t cin = z.channels(), m1 = z.m1(), m2 = z.m2();
    if (r_re.dim(1) != cin || r_re.dim(2) != m1 || r_re.dim(3) != m2)
        throw ShapeError("spectral_apply_full: weight does not match spectrum");
    const std::size_t cout = r_re.dim(0);
    const std::size_t m = m1 * m2;

    std::vector<T> ore(cout * m, T(0)), oim(cout * m, T(0));
    for (std::size_t co = 0; co < cout; ++co)
        for (std::size_t ci = 0; ci < cin; ++ci) {
            const T* wr = r_re.ptr() + (co * cin + ci) * m;
            const T* wi = r_im.ptr() + (co * cin + ci) * m;
            const T* zr = z.re.ptr() + ci * m;
            const T* zi = z.im.ptr() + ci * m;
            T* pr = ore.data() + co * m;
            T* pi = oim.data() + co * m;
            for (std::size_t i = 0; i < m; ++i) {
                pr[i] += wr[i] * zr[i] - wi[i] * zi[i];
                pi[i] += wr[i] * zi[i] + wi[i] * zr[i];
            }
        }

    // Shared complex adjoint: for out = R z, dz = conj(R) g, dR = conj(z) g.
    auto backprop = [zr_n = z.re.node(), zi_n = z.im.node(), rr_n = r_re.node(),
                     ri_n = r_im.node(), cin, cout, m](detail::SpanPair<T> g) {
        const T* zr = zr_n->data.data();
        const T* zi = zi_n->data.data();
        const T* wr = rr_n->data.data();
        const T* wi = ri_n->data.data();
        const bool need_z = zr_n->requires_grad || zi_n->requires_grad;
        if (need_z) {
            T* gzr = zr_n->requires_grad ? zr_n->grad_ptr() : nullptr;
            T* gzi = zi_n->requires_grad ? zi_n->grad_ptr() : nullptr;
            for (std::size_t ci = 0; ci < cin; ++ci)
                for (std::size_t co = 0; co < cout; ++co) {
                    const T* wrp = wr + (co * cin + ci) * m;
                    const T* wip = wi + (co * cin + ci) * m;
                    for (std::size_t i = 0; i < m; ++i) {
                        const T gr = g.load_re(co * m + i), gi = g.load_im(co * m + i);
                        if (gzr) gzr[ci * m + i] += wrp[i] * gr + wip[i] * gi;
                        if (gzi) gzi[ci * m + i] += wrp[i] * gi - wip[i] * gr;
                    }
                }
        }
        if (rr_n->requires_grad || ri_n->requires_grad) {
            T* gwr = rr_n->requires_grad ? rr_n->grad_ptr() : nullptr;
            T* gwi = ri_n->requires_grad ? ri_n->grad_ptr() : nullptr;
            for (std::size_t co = 0; co < cout; ++co)
                for (std::size_t ci = 0; ci < cin; ++ci)
                    for (std::size_t i = 0; i < m; ++i) {
                        const T gr = g.load_re(co * m + i), gi = g.load_im(co * m + i);
                        const T zrv = zr[ci * m + i], ziv = zi[ci * m + i];
                        if (gwr) gwr[(co * cin + ci) * m + i] += zrv * gr + ziv * gi;
                        if (gwi) gwi[(co * cin + ci) * m + i] += zrv * gi - ziv * gr;
                    }
        }
    };

    ComplexSpectrum<T> out;
    out.src_h = z.src_h;
    out.src_w = z.src_w;
    out.re = detail::make_op<T>(
        {cout, m1, m2}, std::move(ore), {z.re, z.im, r_re, r_im},
        [backprop](TensorNode<T>& o) { backprop({o.grad.data(), nullptr}); });
    out.im = detail::make_op<T>(
        {cout, m1, m2}, std::move(oim), {z.re, z.im, r_re, r_im},
        [backprop](TensorNode<T>& o) { backprop({nullptr, o.grad.data()}); });
    return out;
}

/// Factorized weighting: out[c',u,v] = sum_c R1[c',c] R2[c,u,v] z[c,u,v],
/// complex products throughout. Differentiable w.r.t. z, R1 and R2.
template <class T>
ComplexSpectrum<T> spectral_apply_scf(const ComplexSpectrum<T>& z, const Tensor<T>& r1_re,
                                      const Tensor<T>& r1_im, const Tensor<T>& r2_re,
                                      const Tensor<T>& r2_im) {
    check_same_shape(r1_re, r1_im, "spectral_apply_scf");
    check_same_shape(r2_re, r2_im, "spectral_apply_scf");
    if (r1_re.ndim() != 2 || r2_re.ndim() != 3)
        throw ShapeError("spectral_apply_scf: R1 must be 2-d, R2 3-d");
    const std::size_t cin = z.channels(), m1 = z.m1(), m2 = z.m2();
    if (r1_re.dim(1) != cin) throw ShapeError("spectral_apply_scf: R1 columns != C_in");
    if (r2_re.dim(0) != cin || r2_re.dim(1) != m1 || r2_re.dim(2) != m2)
        throw ShapeError("spectral_apply_scf: R2 does not match spectrum");
    const std::size_t cout = r1_re.dim(0);
    const std::size_t m = m1 * m2;

    // t = R2 .* z, then out = R1 t (complex matmul over channels).
    std::vector<T> tre(cin * m), tim(cin * m);
    {
        const T* zr = z.re.ptr();
        const T* zi = z.im.ptr();
        const T* wr = r2_re.ptr();
        const T* wi = r2_im.ptr();
        for (std::size_t i = 0; i < cin * m; ++i) {
            tre[i] = wr[i] * zr[i] - wi[i] * zi[i];
            tim[i] = wr[i] * zi[i] + wi[i] * zr[i];
        }
    }
    std::vector<T> ore(cout * m, T(0)), oim(cout * m, T(0));
    for (std::size_t co = 0; co < cout; ++co)
        for (std::size_t ci = 0; ci < cin; ++ci) {
            const T ar = r1_re[co * cin + ci], ai = r1_im[co * cin + ci];
            const T* tr = tre.data() + ci * m;
            const T* ti = tim.data() + ci * m;
            T* pr = ore.data() + co * m;
            T* pi = oim.data() + co * m;
            for (std::size_t i = 0; i < m; ++i) {
                pr[i] += ar * tr[i] - ai * ti[i];
                pi[i] += ar * ti[i] + ai * tr[i];
            }
        }

    auto tre_s = std::make_shared<std::vector<T>>(std::move(tre));
    auto timg_s = std::make_shared<std::vector<T>>(std::move(tim));
    auto backprop = [zr_n = z.re.node(), zi_n = z.im.node(), r1r_n = r1_re.node(),
                     r1i_n = r1_im.node(), r2r_n = r2_re.node(), r2i_n = r2_im.node(), tre_s,
                     timg_s, cin, cout, m](detail::SpanPair<T> g) {
        // gt = R1^H g (complex), then fan out through the elementwise product.
        std::vector<T> gtr(cin * m, T(0)), gti(cin * m, T(0));
        const T* r1r = r1r_n->data.data();
        const T* r1i = r1i_n->data.data();
        for (std::size_t ci = 0; ci < cin; ++ci) {
            T* pr = gtr.data() + ci * m;
            T* pi = gti.data() + ci * m;
            for (std::size_t co = 0; co < cout; ++co) {
                const T ar = r1r[co * cin + ci], ai = r1i[co * cin + ci];
                for (std::size_t i = 0; i < m; ++i) {
                    const T gr = g.load_re(co * m + i), gi = g.load_im(co * m + i);
                    pr[i] += ar * gr + ai * gi;
                    pi[i] += ar * gi - ai * gr;
                }
            }
        }
        if (r1r_n->requires_grad || r1i_n->requires_grad) {
            T* g1r = r1r_n->requires_grad ? r1r_n->grad_ptr() : nullptr;
            T* g1i = r1i_n->requires_grad ? r1i_n->grad_ptr() : nullptr;
            const T* tr = tre_s->data();
            const T* ti = timg_s->data();
            for (std::size_t co = 0; co < cout; ++co)
                for (std::size_t ci = 0; ci < cin; ++ci) {
                    T accr = 0, acci = 0;
                    for (std::size_t i = 0; i < m; ++i) {
                        const T gr = g.load_re(co * m + i), gi = g.load_im(co * m + i);
                        accr += tr[ci * m + i] * gr + ti[ci * m + i] * gi;
                        acci += tr[ci * m + i] * gi - ti[ci * m + i] * gr;
                    }
                    if (g1r) g1r[co * cin + ci] += accr;
                    if (g1i) g1i[co * cin + ci] += acci;
                }
        }
        const T* zr = zr_n->data.data();
        const T* zi = zi_n->data.data();
        const T* r2r = r2r_n->data.data();
        const T* r2i = r2i_n->data.data();
        if (zr_n->requires_grad || zi_n->requires_grad) {
            T* gzr = zr_n->requires_grad ? zr_n->grad_ptr() : nullptr;
            T* gzi = zi_n->requires_grad ? zi_n->grad_ptr() : nullptr;
            for (std::size_t i = 0; i < cin * m; ++i) {
                if (gzr) gzr[i] += r2r[i] * gtr[i] + r2i[i] * gti[i];
                if (gzi) gzi[i] += r2r[i] * gti[i] - r2i[i] * gtr[i];
            }
        }
        if (r2r_n->requires_grad || r2i_n->requires_grad) {
            T* g2r = r2r_n->requires_grad ? r2r_n->grad_ptr() : nullptr;
            T* g2i = r2i_n->requires_grad ? r2i_n->grad_ptr() : nullptr;
            for (std::size_t i = 0; i < cin * m; ++i) {
                if (g2r) g2r[i] += zr[i] * gtr[i] + zi[i] * gti[i];
                if (g2i) g2i[i] += zr[i] * gti[i] - zi[i] * gtr[i];
            }
        }
    };

    ComplexSpectrum<T> out;
    out.src_h = z.src_h;
    out.src_w = z.src_w;
    out.re = detail::make_op<T>(
        {cout, m1, m2}, std::move(ore), {z.re, z.im, r1_re, r1_im, r2_re, r2_im},
        [backprop](TensorNode<T>& o) { backprop({o.grad.data(), nullptr}); });
    out.im = detail::make_op<T>(
        {cout, m1, m2}, std::move(oim), {z.re, z.im, r1_re, r1_im, r2_re, r2_im},
        [backprop](TensorNode<T>& o) { backprop({nullptr, o.grad.data()}); });
    return out;
}

// ---------------------------------------------------------------------------
// Parameter accounting

/// Exact reduced fraction for the factorization saving ratio.
struct Ratio {
    std::int64_t num = 0, den = 1;

    Ratio reduced() const {
        const std::int64_t g = std::gcd(num, den);
        return {num / g, den / g};
    }
    bool operator==(const Ratio& other) const {
        const Ratio a = reduced(), b = other.reduced();
        return a.num == b.num && a.den == b.den;
    }
    double value() const { return double(num) / double(den); }
};

inline std::int64_t count_params_full(std::int64_t c_in, std::int64_t c_out, std::int64_t m1,
                                      std::int64_t m2) {
    if (c_in <= 0 || c_out <= 0 || m1 <= 0 || m2 <= 0)
        throw ValueError("count_params_full: dims must be positive");
    return 2 * c_out * c_in * m1 * m2;
}

inline std::int64_t count_params_scf(std::int64_t c_in, std::int64_t c_out, std::int64_t m1,
                                     std::int64_t m2) {
    if (c_in <= 0 || c_out <= 0 || m1 <= 0 || m2 <= 0)
        throw ValueError("count_params_scf: dims must be positive");
    return 2 * (c_out * c_in + c_in * m1 * m2);
}

inline Ratio saving_ratio(std::int64_t c_in, std::int64_t c_out, std::int64_t m1,
                          std::int64_t m2) {
    return Ratio{count_params_scf(c_in, c_out, m1, m2), count_params_full(c_in, c_out, m1, m2)}
        .reduced();
}

}  // namespace dufal
