#pragma once

#include <string>
#include <vector>

#include "dufal/attention.hpp"
#include "dufal/init.hpp"
#include "dufal/optim.hpp"
#include "dufal/spectral.hpp"

namespace dufal {

enum class FusionVariant { caff, spatial_ca, add, concat };
enum class QkvRoles { spatial_query, frequency_query };

inline const char* to_string(FusionVariant v) {
    switch (v) {
        case FusionVariant::caff: return "caff";
        case FusionVariant::spatial_ca: return "spatial_ca";
        case FusionVariant::add: return "add";
        default: return "concat";
    }
}

inline const char* to_string(QkvRoles r) {
    return r == QkvRoles::spatial_query ? "spatial_query" : "frequency_query";
}

/// Per-level fusion of a spatial feature s_l and a frequency feature f_l.
/// The default variant convolves both maps, moves them to the frequency
/// domain, cross-attends real and imaginary components separately (spatial
/// queries against frequency keys/values), adds the attended components to
/// the spatial ones and transforms back. The remaining variants are the
/// ablation baselines.
template <class T>
struct CaffFusion {
    FusionVariant variant = FusionVariant::caff;
    QkvRoles roles = QkvRoles::spatial_query;
    std::size_t channels = 0, heads = 1;
    Tensor<T> conv_s_w, conv_s_b, conv_f_w, conv_f_b;
    AttentionProjections<T> ca_re, ca_im;  // caff
    AttentionProjections<T> ca_spatial;    // spatial_ca
    Tensor<T> concat_w, concat_b;          // concat

    static AttentionProjections<T> make_projections(std::size_t c, Rng& rng) {
        AttentionProjections<T> p;
        p.wq = kaiming_uniform<T>({c, c}, c, rng);
        p.bq = zeros_param<T>({c});
        p.wk = kaiming_uniform<T>({c, c}, c, rng);
        p.bk = zeros_param<T>({c});
        p.wv = kaiming_uniform<T>({c, c}, c, rng);
        p.bv = zeros_param<T>({c});
        p.wo = kaiming_uniform<T>({c, c}, c, rng);
        p.bo = zeros_param<T>({c});
        return p;
    }

    static CaffFusion make(std::size_t channels, std::size_t heads, FusionVariant variant,
                           QkvRoles roles, Rng& rng) {
        if (heads == 0 || channels % heads != 0)
            throw ValueError("caff: heads must divide the level channel count");
        CaffFusion fuse;
        fuse.variant = variant;
        fuse.roles = roles;
        fuse.channels = channels;
        fuse.heads = heads;
        fuse.conv_s_w = kaiming_uniform<T>({channels, channels, 3, 3}, channels * 9, rng);
        fuse.conv_s_b = zeros_param<T>({channels});
        fuse.conv_f_w = kaiming_uniform<T>({channels, channels, 3, 3}, channels * 9, rng);
        fuse.conv_f_b = zeros_param<T>({channels});
        if (variant == FusionVariant::caff) {
            fuse.ca_re = make_projections(channels, rng);
            fuse.ca_im = make_projections(channels, rng);
        } else if (variant == FusionVariant::spatial_ca) {
            fuse.ca_spatial = make_projections(channels, rng);
        } else if (variant == FusionVariant::concat) {
            fuse.concat_w = kaiming_uniform<T>({channels, 2 * channels, 1, 1}, 2 * channels, rng);
            fuse.concat_b = zeros_param<T>({channels});
        }
        return fuse;
    }

    Tensor<T> forward(const Tensor<T>& s, const Tensor<T>& f) const {
        check_same_shape(s, f, "caff_fuse");
        if (s.dim(0) != channels) throw ShapeError("caff_fuse: channel mismatch with config");
        Tensor<T> cs = conv2d(s, conv_s_w, conv_s_b, 1);
        Tensor<T> cf = conv2d(f, conv_f_w, conv_f_b, 1);
        switch (variant) {
            case FusionVariant::add:
                return add(cs, cf);
            case FusionVariant::concat:
                return conv2d(concat_axis0(cs, cf), concat_w, concat_b, 0);
            case FusionVariant::spatial_ca: {
                Tensor<T> attended = roles == QkvRoles::spatial_query
                                         ? cross_attention(cf, cf, cs, heads, ca_spatial)
                                         : cross_attention(cs, cs, cf, heads, ca_spatial);
                return add(cs, attended);
            }
            case FusionVariant::caff:
            default: {
                ComplexSpectrum<T> shat = fft2(cs);
                ComplexSpectrum<T> fhat = fft2(cf);
                Tensor<T> att_re, att_im;
                if (roles == QkvRoles::spatial_query) {
                    att_re = cross_attention(fhat.re, fhat.re, shat.re, heads, ca_re);
                    att_im = cross_attention(fhat.im, fhat.im, shat.im, heads, ca_im);
                } else {
                    att_re = cross_attention(shat.re, shat.re, fhat.re, heads, ca_re);
                    att_im = cross_attention(shat.im, shat.im, fhat.im, heads, ca_im);
                }
                ComplexSpectrum<T> fused;
                fused.re = add(shat.re, att_re);
                fused.im = add(shat.im, att_im);
                fused.src_h = shat.src_h;
                fused.src_w = shat.src_w;
                return ifft2(fused);
            }
        }
    }

    void collect(const std::string& prefix, std::vector<Parameter<T>>& out) {
        out.push_back({conv_s_w, prefix + ".conv_s.weight"});
        out.push_back({conv_s_b, prefix + ".conv_s.bias"});
        out.push_back({conv_f_w, prefix + ".conv_f.weight"});
        out.push_back({conv_f_b, prefix + ".conv_f.bias"});
        auto collect_proj = [&out](AttentionProjections<T>& p, const std::string& pp) {
            out.push_back({p.wq, pp + ".wq"});
            out.push_back({p.bq, pp + ".bq"});
            out.push_back({p.wk, pp + ".wk"});
            out.push_back({p.bk, pp + ".bk"});
            out.push_back({p.wv, pp + ".wv"});
            out.push_back({p.bv, pp + ".bv"});
            out.push_back({p.wo, pp + ".wo"});
            out.push_back({p.bo, pp + ".bo"});
        };
        if (variant == FusionVariant::caff) {
            collect_proj(ca_re, prefix + ".ca_re");
            collect_proj(ca_im, prefix + ".ca_im");
        } else if (variant == FusionVariant::spatial_ca) {
            collect_proj(ca_spatial, prefix + ".ca");
        } else if (variant == FusionVariant::concat) {
            out.push_back({concat_w, prefix + ".proj.weight"});
            out.push_back({concat_b, prefix + ".proj.bias"});
        }
    }
};

}  // namespace dufal
