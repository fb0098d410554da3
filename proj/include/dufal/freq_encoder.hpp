#pragma once

#include <string>
#include <vector>

#include "dufal/attention.hpp"
#include "dufal/init.hpp"
#include "dufal/optim.hpp"
#include "dufal/spectral.hpp"

namespace dufal {

/// 1x1 channel mixing at every spatial site: [C_in,H,W] -> [C_out,H,W].
template <class T>
Tensor<T> channelwise_linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
    if (x.ndim() != 3) throw ShapeError("channelwise_linear: input must be [C,H,W]");
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor<T> tok = transpose2d(x.reshaped({c, h * w}));
    Tensor<T> mixed = linear(tok, weight, bias);
    return transpose2d(mixed).reshaped({weight.dim(0), h, w});
}

/// Complex factors of one spectral-channel-factorized layer.
template <class T>
struct SpectralScfWeights {
    Tensor<T> r1_re, r1_im;  // [C_out, C_in]
    Tensor<T> r2_re, r2_im;  // [C_in, M1, M2]

    static SpectralScfWeights make(std::size_t c_in, std::size_t c_out, std::size_t m1,
                                   std::size_t m2, Rng& rng) {
        const double s = 1.0 / double(c_in);
        SpectralScfWeights w;
        w.r1_re = uniform_init<T>({c_out, c_in}, s, rng);
        w.r1_im = uniform_init<T>({c_out, c_in}, s, rng);
        w.r2_re = uniform_init<T>({c_in, m1, m2}, s, rng);
        w.r2_im = uniform_init<T>({c_in, m1, m2}, s, rng);
        return w;
    }

    void collect(const std::string& prefix, std::vector<Parameter<T>>& out) {
        out.push_back({r1_re, prefix + ".r1_re"});
        out.push_back({r1_im, prefix + ".r1_im"});
        out.push_back({r2_re, prefix + ".r2_re"});
        out.push_back({r2_im, prefix + ".r2_im"});
    }

    std::int64_t param_count() const {
        return std::int64_t(r1_re.size()) * 2 + std::int64_t(r2_re.size()) * 2;
    }
};

/// Global branch: keep the Nyquist-centered high-frequency block, mix it
/// with factorized weights, zero-fill the rest and transform back.
template <class T>
Tensor<T> ghif_forward(const Tensor<T>& f, const SpectralScfWeights<T>& w, const ModeMask& mask) {
    const std::size_t h = f.dim(1), width = f.dim(2);
    if (mask.height_indices.size() != w.r2_re.dim(1) ||
        mask.width_indices.size() != w.r2_re.dim(2))
        throw ShapeError("ghif_forward: mask does not match spectral weights");
    ComplexSpectrum<T> z = fft2(f);
    ComplexSpectrum<T> kept = extract_modes(z, mask);
    ComplexSpectrum<T> mixed = spectral_apply_scf(kept, w.r1_re, w.r1_im, w.r2_re, w.r2_im);
    return ifft2(scatter_modes(mixed, mask, h, width));
}

namespace detail {

/// Gather of one [C, p, p] patch at (y0, x0).
template <class T>
Tensor<T> extract_patch(const Tensor<T>& x, std::size_t y0, std::size_t x0, std::size_t p) {
    const std::size_t c_n = x.dim(0), h = x.dim(1), w = x.dim(2);
    std::vector<T> out(c_n * p * p);
    for (std::size_t c = 0; c < c_n; ++c)
        for (std::size_t y = 0; y < p; ++y)
            for (std::size_t xx = 0; xx < p; ++xx)
                out[(c * p + y) * p + xx] = x[(c * h + y0 + y) * w + x0 + xx];
    return make_op<T>(
        {c_n, p, p}, std::move(out), {x},
        [xn = x.node(), c_n, h, w, y0, x0, p](TensorNode<T>& o) {
            T* g = xn->grad_ptr();
            for (std::size_t c = 0; c < c_n; ++c)
                for (std::size_t y = 0; y < p; ++y)
                    for (std::size_t xx = 0; xx < p; ++xx)
                        g[(c * h + y0 + y) * w + x0 + xx] += o.grad[(c * p + y) * p + xx];
        });
}

/// Reassembly of row-major patches back into [C, H, W].
template <class T>
Tensor<T> assemble_patches(const std::vector<Tensor<T>>& patches, std::size_t c_n, std::size_t h,
                           std::size_t w, std::size_t p) {
    std::vector<T> out(c_n * h * w);
    const std::size_t nx = w / p;
    for (std::size_t idx = 0; idx < patches.size(); ++idx) {
        const std::size_t y0 = (idx / nx) * p, x0 = (idx % nx) * p;
        const Tensor<T>& pt = patches[idx];
        for (std::size_t c = 0; c < c_n; ++c)
            for (std::size_t y = 0; y < p; ++y)
                for (std::size_t xx = 0; xx < p; ++xx)
                    out[(c * h + y0 + y) * w + x0 + xx] = pt[(c * p + y) * p + xx];
    }
    Tensor<T> result = Tensor<T>::from_data({c_n, h, w}, std::move(out));
    if (!autograd::grad_mode()) return result;
    bool needs = false;
    for (const auto& pt : patches) needs = needs || pt.requires_grad();
    if (!needs) return result;
    result.set_requires_grad(true);
    auto node = result.node();
    std::vector<std::shared_ptr<TensorNode<T>>> pnodes;
    for (const auto& pt : patches) {
        node->parents.push_back(pt.node());
        pnodes.push_back(pt.node());
    }
    node->backward_fn = [pnodes, c_n, h, w, p, nx](TensorNode<T>& o) {
        for (std::size_t idx = 0; idx < pnodes.size(); ++idx) {
            if (!pnodes[idx]->requires_grad) continue;
            const std::size_t y0 = (idx / nx) * p, x0 = (idx % nx) * p;
            T* g = pnodes[idx]->grad_ptr();
            for (std::size_t c = 0; c < c_n; ++c)
                for (std::size_t y = 0; y < p; ++y)
                    for (std::size_t xx = 0; xx < p; ++xx)
                        g[(c * p + y) * p + xx] += o.grad[(c * h + y0 + y) * w + x0 + xx];
        }
    };
    return result;
}

}  // namespace detail

/// Local branch: non-overlapping patch partition in row-major order, the
/// same shared weights applied to every patch over its full spectrum
/// (M1 = M2 = patch), reassembled in partition order.
template <class T>
Tensor<T> lhif_forward(const Tensor<T>& f, const SpectralScfWeights<T>& w, std::size_t patch) {
    if (f.ndim() != 3) throw ShapeError("lhif_forward: input must be [C,H,W]");
    const std::size_t h = f.dim(1), width = f.dim(2);
    if (patch == 0 || h % patch != 0 || width % patch != 0)
        throw ShapeError("lhif_forward: patch must divide H and W");
    if (w.r2_re.dim(1) != patch || w.r2_re.dim(2) != patch)
        throw ShapeError("lhif_forward: weights sized for a different patch");
    const std::size_t ny = h / patch, nx = width / patch;
    const std::size_t c_out = w.r1_re.dim(0);

    std::vector<Tensor<T>> outputs;
    outputs.reserve(ny * nx);
    for (std::size_t py = 0; py < ny; ++py)
        for (std::size_t px = 0; px < nx; ++px) {
            Tensor<T> part = detail::extract_patch(f, py * patch, px * patch, patch);
            ComplexSpectrum<T> z = fft2(part);
            ComplexSpectrum<T> mixed = spectral_apply_scf(z, w.r1_re, w.r1_im, w.r2_re, w.r2_im);
            outputs.push_back(ifft2(mixed));
        }
    return detail::assemble_patches(outputs, c_out, h, width, patch);
}

/// Per-stage shape configuration after clamping to the stage resolution.
struct HiLocStageDims {
    std::size_t c_in = 0, c_out = 0;
    std::size_t h = 0, w = 0;
    std::size_t modes1 = 0, modes2 = 0;
    std::size_t patch = 0;
    std::size_t heads = 1;
    bool enable_lhif = true;
};

/// One HiLocFFNO block: global branch + local branch + linear bypass,
/// GeLU, then Galerkin attention.
template <class T>
struct HiLocFfnoBlock {
    HiLocStageDims dims;
    SpectralScfWeights<T> ghif_w;
    SpectralScfWeights<T> lhif_w;  // unused when dims.enable_lhif is false
    Tensor<T> bypass_w, bypass_b;
    GalerkinParams<T> ga;
    ModeMask mask;

    static HiLocFfnoBlock make(const HiLocStageDims& dims, Rng& rng) {
        if (dims.modes1 >= dims.h || dims.modes2 >= dims.w)
            throw ValueError("hilocffno: retained modes must be below the stage resolution");
        if (dims.h % dims.patch != 0 || dims.w % dims.patch != 0)
            throw ValueError("hilocffno: patch must divide the stage resolution");
        if (dims.c_out % dims.heads != 0)
            throw ValueError("hilocffno: attention heads must divide the channel count");
        HiLocFfnoBlock b;
        b.dims = dims;
        b.ghif_w = SpectralScfWeights<T>::make(dims.c_in, dims.c_out, dims.modes1, dims.modes2, rng);
        if (dims.enable_lhif)
            b.lhif_w = SpectralScfWeights<T>::make(dims.c_in, dims.c_out, dims.patch, dims.patch, rng);
        b.bypass_w = kaiming_uniform<T>({dims.c_out, dims.c_in}, dims.c_in, rng);
        b.bypass_b = zeros_param<T>({dims.c_out});
        const std::size_t c = dims.c_out;
        b.ga.wq = kaiming_uniform<T>({c, c}, c, rng);
        b.ga.bq = zeros_param<T>({c});
        b.ga.wk = kaiming_uniform<T>({c, c}, c, rng);
        b.ga.bk = zeros_param<T>({c});
        b.ga.wv = kaiming_uniform<T>({c, c}, c, rng);
        b.ga.bv = zeros_param<T>({c});
        b.ga.wo = kaiming_uniform<T>({c, c}, c, rng);
        b.ga.bo = zeros_param<T>({c});
        b.ga.ln_k_gain = const_param<T>({c}, T(1));
        b.ga.ln_k_offset = zeros_param<T>({c});
        b.ga.ln_v_gain = const_param<T>({c}, T(1));
        b.ga.ln_v_offset = zeros_param<T>({c});
        b.mask = make_mode_mask(dims.h, dims.w, dims.modes1, dims.modes2, MaskVariant::high);
        return b;
    }

    Tensor<T> forward(const Tensor<T>& f) const {
        if (f.dim(0) != dims.c_in || f.dim(1) != dims.h || f.dim(2) != dims.w)
            throw ShapeError("hilocffno: input does not match stage dims");
        Tensor<T> acc = channelwise_linear(f, bypass_w, bypass_b);
        if (dims.enable_lhif) acc = add(acc, lhif_forward(f, lhif_w, dims.patch));
        acc = add(acc, ghif_forward(f, ghif_w, mask));
        return galerkin_attention(gelu(acc), dims.heads, ga);
    }

    void collect(const std::string& prefix, std::vector<Parameter<T>>& out) {
        ghif_w.collect(prefix + ".ghif", out);
        if (dims.enable_lhif) lhif_w.collect(prefix + ".lhif", out);
        out.push_back({bypass_w, prefix + ".bypass.weight"});
        out.push_back({bypass_b, prefix + ".bypass.bias"});
        out.push_back({ga.wq, prefix + ".ga.wq"});
        out.push_back({ga.bq, prefix + ".ga.bq"});
        out.push_back({ga.wk, prefix + ".ga.wk"});
        out.push_back({ga.bk, prefix + ".ga.bk"});
        out.push_back({ga.wv, prefix + ".ga.wv"});
        out.push_back({ga.bv, prefix + ".ga.bv"});
        out.push_back({ga.wo, prefix + ".ga.wo"});
        out.push_back({ga.bo, prefix + ".ga.bo"});
        out.push_back({ga.ln_k_gain, prefix + ".ga.ln_k.gain"});
        out.push_back({ga.ln_k_offset, prefix + ".ga.ln_k.offset"});
        out.push_back({ga.ln_v_gain, prefix + ".ga.ln_v.gain"});
        out.push_back({ga.ln_v_offset, prefix + ".ga.ln_v.offset"});
    }
};

/// L-stage frequency encoder. Stage l emits f_l at the incoming resolution;
/// 2x2 average pooling halves the resolution between stages so levels line
/// up with the spatial pyramid while staying smooth end to end.
template <class T>
struct FreqEncoder {
    std::vector<HiLocFfnoBlock<T>> stages;

    std::vector<Tensor<T>> forward(const Tensor<T>& image) const {
        std::vector<Tensor<T>> levels;
        levels.reserve(stages.size());
        Tensor<T> cur = image;
        for (std::size_t l = 0; l < stages.size(); ++l) {
            Tensor<T> f = stages[l].forward(cur);
            levels.push_back(f);
            if (l + 1 < stages.size()) cur = avgpool_2x2(f);
        }
        return levels;
    }

    void collect(const std::string& prefix, std::vector<Parameter<T>>& out) {
        for (std::size_t l = 0; l < stages.size(); ++l)
            stages[l].collect(prefix + ".stage" + std::to_string(l), out);
    }
};

}  // namespace dufal
