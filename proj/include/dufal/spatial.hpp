#pragma once

#include <string>
#include <vector>

#include "dufal/fft.hpp"
#include "dufal/init.hpp"
#include "dufal/nn_ops.hpp"
#include "dufal/optim.hpp"

namespace dufal {

/// 3x3 same-padding convolution followed by ReLU.
template <class T>
struct ConvRelu {
    Tensor<T> w, b;

    static ConvRelu make(std::size_t c_in, std::size_t c_out, Rng& rng) {
        ConvRelu c;
        c.w = kaiming_uniform<T>({c_out, c_in, 3, 3}, c_in * 9, rng);
        c.b = zeros_param<T>({c_out});
        return c;
    }

    Tensor<T> forward(const Tensor<T>& x) const { return relu(conv2d(x, w, b, 1)); }

    void collect(const std::string& prefix, std::vector<Parameter<T>>& out) {
        out.push_back({w, prefix + ".weight"});
        out.push_back({b, prefix + ".bias"});
    }
};

/// Downsampling conv tower: per level two ConvRelu blocks emit s_l, then
/// 2x2 max pooling halves the resolution. Channels double per level.
template <class T>
struct SpatialEncoder {
    struct Level {
        ConvRelu<T> c1, c2;
    };
    std::vector<Level> levels;

    static SpatialEncoder make(std::size_t in_channels, const std::vector<std::size_t>& channels,
                               Rng& rng) {
        SpatialEncoder enc;
        std::size_t cur = in_channels;
        for (std::size_t c : channels) {
            Level lv{ConvRelu<T>::make(cur, c, rng), ConvRelu<T>::make(c, c, rng)};
            enc.levels.push_back(std::move(lv));
            cur = c;
        }
        return enc;
    }

    std::vector<Tensor<T>> forward(const Tensor<T>& image) const {
        if (image.ndim() != 3) throw ShapeError("spatial_encoder: input must be [C,H,W]");
        if (!fft::is_power_of_two(image.dim(1)) || !fft::is_power_of_two(image.dim(2)))
            throw ValueError("spatial_encoder: input dims must be powers of two");
        std::vector<Tensor<T>> pyramid;
        pyramid.reserve(levels.size());
        Tensor<T> cur = image;
        for (std::size_t l = 0; l < levels.size(); ++l) {
            Tensor<T> s = levels[l].c2.forward(levels[l].c1.forward(cur));
            pyramid.push_back(s);
            if (l + 1 < levels.size()) cur = maxpool_2x2(s);
        }
        return pyramid;
    }

    void collect(const std::string& prefix, std::vector<Parameter<T>>& out) {
        for (std::size_t l = 0; l < levels.size(); ++l) {
            levels[l].c1.collect(prefix + ".level" + std::to_string(l) + ".conv1", out);
            levels[l].c2.collect(prefix + ".level" + std::to_string(l) + ".conv2", out);
        }
    }
};

/// Upsampling decoder: from the deepest fused feature, each stage doubles
/// the resolution with a 2x2 transposed convolution, concatenates the skip
/// feature, refines with two ConvRelu blocks, and a final 1x1 convolution
/// projects to the requested output width.
template <class T>
struct FeatureDecoder {
    struct Stage {
        Tensor<T> up_w, up_b;  // [C_l, C_{l-1}, 2, 2]
        ConvRelu<T> c1, c2;
    };
    std::vector<Stage> stages;  // deepest first
    Tensor<T> out_w, out_b;     // 1x1 projection

    static FeatureDecoder make(const std::vector<std::size_t>& channels, std::size_t out_channels,
                               Rng& rng) {
        if (channels.empty()) throw ValueError("feature_decoder: empty channel list");
        FeatureDecoder dec;
        for (std::size_t l = channels.size(); l-- > 1;) {
            const std::size_t deep = channels[l], shallow = channels[l - 1];
            Stage st;
            st.up_w = kaiming_uniform<T>({deep, shallow, 2, 2}, deep * 4, rng);
            st.up_b = zeros_param<T>({shallow});
            st.c1 = ConvRelu<T>::make(2 * shallow, shallow, rng);
            st.c2 = ConvRelu<T>::make(shallow, shallow, rng);
            dec.stages.push_back(std::move(st));
        }
        dec.out_w = kaiming_uniform<T>({out_channels, channels[0], 1, 1}, channels[0], rng);
        dec.out_b = zeros_param<T>({out_channels});
        return dec;
    }

    Tensor<T> forward(const std::vector<Tensor<T>>& fused) const {
        if (fused.size() != stages.size() + 1)
            throw ShapeError("feature_decoder: pyramid depth does not match decoder");
        Tensor<T> d = fused.back();
        for (std::size_t i = 0; i < stages.size(); ++i) {
            const Stage& st = stages[i];
            Tensor<T> up = conv_transpose2d_2x2(d, st.up_w, st.up_b);
            const Tensor<T>& skip = fused[fused.size() - 2 - i];
            if (up.dim(1) != skip.dim(1) || up.dim(2) != skip.dim(2))
                throw ShapeError("feature_decoder: skip resolution mismatch");
            d = st.c2.forward(st.c1.forward(concat_axis0(up, skip)));
        }
        return conv2d(d, out_w, out_b, 0);
    }

    void collect(const std::string& prefix, std::vector<Parameter<T>>& out) {
        for (std::size_t i = 0; i < stages.size(); ++i) {
            const std::string sp = prefix + ".stage" + std::to_string(i);
            out.push_back({stages[i].up_w, sp + ".up.weight"});
            out.push_back({stages[i].up_b, sp + ".up.bias"});
            stages[i].c1.collect(sp + ".conv1", out);
            stages[i].c2.collect(sp + ".conv2", out);
        }
        out.push_back({out_w, prefix + ".out.weight"});
        out.push_back({out_b, prefix + ".out.bias"});
    }
};

}  // namespace dufal
