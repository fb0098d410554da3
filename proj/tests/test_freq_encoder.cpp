#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "dufal/freq_encoder.hpp"
#include "dufal/gradcheck.hpp"

using dufal::ComplexSpectrum;
using dufal::SpectralScfWeights;
using dufal::Tensor;

namespace {

Tensor<double> random_tensor(std::vector<std::size_t> shape, dufal::Rng& rng) {
    std::vector<double> data(Tensor<double>::count(shape));
    for (auto& v : data) v = rng.uniform(-1.0, 1.0);
    return Tensor<double>::from_data(std::move(shape), std::move(data));
}

SpectralScfWeights<double> identity_weights(std::size_t c, std::size_t m1, std::size_t m2) {
    SpectralScfWeights<double> w;
    w.r1_re = Tensor<double>({c, c});
    for (std::size_t i = 0; i < c; ++i) w.r1_re[i * c + i] = 1.0;
    w.r1_im = Tensor<double>({c, c});
    w.r2_re = Tensor<double>({c, m1, m2}, 1.0);
    w.r2_im = Tensor<double>({c, m1, m2});
    return w;
}

dufal::HiLocStageDims tiny_dims() {
    dufal::HiLocStageDims d;
    d.c_in = 4;
    d.c_out = 4;
    d.h = d.w = 8;
    d.modes1 = d.modes2 = 2;
    d.patch = 4;
    d.heads = 2;
    d.enable_lhif = true;
    return d;
}

}  // namespace

TEST(Ghif, LowFrequencyInputFiltersToZero) {
    // A constant image has only a DC coefficient, which the high mask drops.
    const std::size_t c = 2;
    SpectralScfWeights<double> w = identity_weights(c, 2, 2);
    dufal::ModeMask mask = dufal::make_mode_mask(8, 8, 2, 2, dufal::MaskVariant::high);
    Tensor<double> x({c, 8, 8}, 0.9);
    Tensor<double> out = dufal::ghif_forward(x, w, mask);
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], 0.0, 1e-12);
}

TEST(Ghif, NyquistCheckerboardPassesThroughIdentity) {
    const std::size_t c = 1, n = 8;
    SpectralScfWeights<double> w = identity_weights(c, 2, 2);
    dufal::ModeMask mask = dufal::make_mode_mask(n, n, 2, 2, dufal::MaskVariant::high);
    Tensor<double> x({c, n, n});
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t xx = 0; xx < n; ++xx) x.at({0, y, xx}) = ((y + xx) % 2 == 0) ? 1.0 : -1.0;
    Tensor<double> out = dufal::ghif_forward(x, w, mask);
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], x[i], 1e-10);
}

TEST(Ghif, OutputShapeAndSpectralSupport) {
    dufal::Rng rng(51);
    const std::size_t cin = 3, cout = 5, n = 16;
    SpectralScfWeights<double> w = SpectralScfWeights<double>::make(cin, cout, 4, 4, rng);
    dufal::ModeMask mask = dufal::make_mode_mask(n, n, 4, 4, dufal::MaskVariant::high);
    Tensor<double> x = random_tensor({cin, n, n}, rng);
    Tensor<double> out = dufal::ghif_forward(x, w, mask);
    ASSERT_EQ(out.shape(), (std::vector<std::size_t>{cout, n, n}));

    // The real projection of a mask-supported spectrum lives on the mask
    // plus its conjugate mirror (u -> (n-u) mod n); re-transforming the
    // output must leave no energy outside that closure.
    auto in_set = [n](const std::vector<std::size_t>& idx, std::size_t u) {
        for (auto i : idx)
            if (u == i || u == (n - i) % n) return true;
        return false;
    };
    ComplexSpectrum<double> s = dufal::fft2(out);
    double inside = 0, outside = 0;
    for (std::size_t c = 0; c < cout; ++c)
        for (std::size_t u = 0; u < n; ++u)
            for (std::size_t v = 0; v < n; ++v) {
                const double e = s.re.at({c, u, v}) * s.re.at({c, u, v}) +
                                 s.im.at({c, u, v}) * s.im.at({c, u, v});
                const bool supported = in_set(mask.height_indices, u) && in_set(mask.width_indices, v);
                (supported ? inside : outside) += e;
            }
    EXPECT_LT(outside, 1e-9 * inside);

    // Before the real projection the scattered spectrum is exactly
    // mask-supported by construction.
    ComplexSpectrum<double> scattered = dufal::scatter_modes(
        dufal::spectral_apply_scf(dufal::extract_modes(dufal::fft2(x), mask), w.r1_re, w.r1_im,
                                  w.r2_re, w.r2_im),
        mask, n, n);
    for (std::size_t c = 0; c < cout; ++c)
        for (std::size_t u = 0; u < n; ++u)
            for (std::size_t v = 0; v < n; ++v) {
                const bool in_mask =
                    std::find(mask.height_indices.begin(), mask.height_indices.end(), u) !=
                        mask.height_indices.end() &&
                    std::find(mask.width_indices.begin(), mask.width_indices.end(), v) !=
                        mask.width_indices.end();
                if (!in_mask) {
                    EXPECT_EQ(scattered.re.at({c, u, v}), 0.0);
                    EXPECT_EQ(scattered.im.at({c, u, v}), 0.0);
                }
            }
}

TEST(Lhif, PartitionReassemblyIdentity) {
    // Identity weights over full patch spectra give back the input exactly
    // (up to fft round-trip error).
    const std::size_t c = 2;
    dufal::Rng rng(52);
    SpectralScfWeights<double> w = identity_weights(c, 16, 16);
    Tensor<double> x = random_tensor({c, 32, 32}, rng);
    Tensor<double> out = dufal::lhif_forward(x, w, 16);
    ASSERT_EQ(out.shape(), x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(out[i], x[i], 1e-10);
}

TEST(Lhif, SinglePatchEqualsGlobalFullSpectrumLayer) {
    dufal::Rng rng(53);
    const std::size_t cin = 2, cout = 3, n = 8;
    SpectralScfWeights<double> w = SpectralScfWeights<double>::make(cin, cout, n, n, rng);
    Tensor<double> x = random_tensor({cin, n, n}, rng);
    Tensor<double> local = dufal::lhif_forward(x, w, n);
    Tensor<double> global =
        dufal::ifft2(dufal::spectral_apply_scf(dufal::fft2(x), w.r1_re, w.r1_im, w.r2_re, w.r2_im));
    for (std::size_t i = 0; i < local.size(); ++i) EXPECT_NEAR(local[i], global[i], 1e-10);
}

TEST(Lhif, TranslationByOnePatchCommutes) {
    dufal::Rng rng(54);
    const std::size_t cin = 2, cout = 2, n = 8, patch = 4;
    SpectralScfWeights<double> w = SpectralScfWeights<double>::make(cin, cout, patch, patch, rng);
    Tensor<double> x = random_tensor({cin, n, n}, rng);
    Tensor<double> rolled({cin, n, n});
    for (std::size_t c = 0; c < cin; ++c)
        for (std::size_t y = 0; y < n; ++y)
            for (std::size_t xx = 0; xx < n; ++xx)
                rolled.at({c, y, xx}) = x.at({c, y, (xx + patch) % n});
    Tensor<double> out = dufal::lhif_forward(x, w, patch);
    Tensor<double> out_rolled = dufal::lhif_forward(rolled, w, patch);
    for (std::size_t c = 0; c < cout; ++c)
        for (std::size_t y = 0; y < n; ++y)
            for (std::size_t xx = 0; xx < n; ++xx)
                EXPECT_DOUBLE_EQ(out_rolled.at({c, y, xx}), out.at({c, y, (xx + patch) % n}));
}

TEST(Lhif, NonDivisiblePatchRejected) {
    dufal::Rng rng(55);
    SpectralScfWeights<double> w = SpectralScfWeights<double>::make(2, 2, 3, 3, rng);
    Tensor<double> x = random_tensor({2, 8, 8}, rng);
    EXPECT_THROW(dufal::lhif_forward(x, w, 3), dufal::ShapeError);
}

TEST(HiLocFfno, ZeroWeightsGiveZero) {
    dufal::Rng rng(56);
    dufal::HiLocStageDims d = tiny_dims();
    auto block = dufal::HiLocFfnoBlock<double>::make(d, rng);
    // Zero all branch and attention weights; biases are already zero.
    for (Tensor<double>* t : {&block.ghif_w.r1_re, &block.ghif_w.r1_im, &block.ghif_w.r2_re,
                              &block.ghif_w.r2_im, &block.lhif_w.r1_re, &block.lhif_w.r1_im,
                              &block.lhif_w.r2_re, &block.lhif_w.r2_im, &block.bypass_w,
                              &block.ga.wq, &block.ga.wk, &block.ga.wv, &block.ga.wo})
        std::fill(t->data().begin(), t->data().end(), 0.0);
    Tensor<double> x = random_tensor({d.c_in, d.h, d.w}, rng);
    Tensor<double> out = block.forward(x);
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], 0.0, 1e-15);
}

TEST(HiLocFfno, OutputShape) {
    dufal::Rng rng(57);
    dufal::HiLocStageDims d = tiny_dims();
    d.c_out = 6;
    d.heads = 2;
    auto block = dufal::HiLocFfnoBlock<double>::make(d, rng);
    Tensor<double> x = random_tensor({d.c_in, d.h, d.w}, rng);
    EXPECT_EQ(block.forward(x).shape(), (std::vector<std::size_t>{6, 8, 8}));
}

TEST(HiLocFfno, GradientCheck) {
    dufal::Rng rng(58);
    dufal::HiLocStageDims d = tiny_dims();
    auto block = dufal::HiLocFfnoBlock<double>::make(d, rng);
    Tensor<double> x = random_tensor({4, 8, 8}, rng);
    auto loss = [&](Tensor<double>& t) {
        Tensor<double> y = block.forward(t);
        return dufal::sum(dufal::mul(y, y));
    };
    EXPECT_LT(dufal::check_gradient(loss, x), 1e-4);

    auto loss_r2 = [&](Tensor<double>& t) {
        auto blk = block;
        blk.ghif_w.r2_im = t;
        Tensor<double> y = blk.forward(x);
        return dufal::sum(dufal::mul(y, y));
    };
    EXPECT_LT(dufal::check_gradient(loss_r2, block.ghif_w.r2_im), 1e-4);
}

TEST(FreqEncoder, PyramidShapes) {
    dufal::Rng rng(59);
    dufal::FreqEncoder<double> enc;
    dufal::HiLocStageDims d1;
    d1.c_in = 1;
    d1.c_out = 4;
    d1.h = d1.w = 16;
    d1.modes1 = d1.modes2 = 2;
    d1.patch = 4;
    d1.heads = 2;
    dufal::HiLocStageDims d2 = d1;
    d2.c_in = 4;
    d2.c_out = 8;
    d2.h = d2.w = 8;
    enc.stages.push_back(dufal::HiLocFfnoBlock<double>::make(d1, rng));
    enc.stages.push_back(dufal::HiLocFfnoBlock<double>::make(d2, rng));

    Tensor<double> image = random_tensor({1, 16, 16}, rng);
    std::vector<Tensor<double>> levels = enc.forward(image);
    ASSERT_EQ(levels.size(), 2u);
    EXPECT_EQ(levels[0].shape(), (std::vector<std::size_t>{4, 16, 16}));
    EXPECT_EQ(levels[1].shape(), (std::vector<std::size_t>{8, 8, 8}));
}

TEST(FreqEncoder, DeterministicUnderFixedSeed) {
    auto build_and_run = [] {
        dufal::Rng rng(60);
        dufal::HiLocStageDims d = tiny_dims();
        d.c_in = 1;
        auto block = dufal::HiLocFfnoBlock<double>::make(d, rng);
        Tensor<double> x({1, 8, 8});
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(double(i));
        return block.forward(x);
    };
    Tensor<double> a = build_and_run();
    Tensor<double> b = build_and_run();
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(FreqEncoder, GradientCheckTinyConfig) {
    dufal::Rng rng(61);
    dufal::FreqEncoder<double> enc;
    dufal::HiLocStageDims d1;
    d1.c_in = 1;
    d1.c_out = 2;
    d1.h = d1.w = 8;
    d1.modes1 = d1.modes2 = 2;
    d1.patch = 4;
    d1.heads = 1;
    dufal::HiLocStageDims d2 = d1;
    d2.c_in = 2;
    d2.c_out = 4;
    d2.h = d2.w = 4;
    d2.patch = 2;
    enc.stages.push_back(dufal::HiLocFfnoBlock<double>::make(d1, rng));
    enc.stages.push_back(dufal::HiLocFfnoBlock<double>::make(d2, rng));
    Tensor<double> image = random_tensor({1, 8, 8}, rng);
    auto loss = [&](Tensor<double>& t) {
        std::vector<Tensor<double>> levels = enc.forward(t);
        Tensor<double> acc = dufal::sum(dufal::mul(levels[0], levels[0]));
        return dufal::add(acc, dufal::sum(dufal::mul(levels[1], levels[1])));
    };
    EXPECT_LT(dufal::check_gradient(loss, image), 1e-4);
}
