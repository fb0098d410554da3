#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "dufal/gradcheck.hpp"
#include "dufal/nn_ops.hpp"
#include "dufal/optim.hpp"
#include "dufal/rng.hpp"
#include "dufal/tensor.hpp"

using dufal::Tensor;

namespace {

Tensor<double> random_tensor(std::vector<std::size_t> shape, dufal::Rng& rng, double lo = -1.0,
                             double hi = 1.0) {
    std::vector<double> data(Tensor<double>::count(shape));
    for (auto& v : data) v = rng.uniform(lo, hi);
    return Tensor<double>::from_data(std::move(shape), std::move(data));
}

// Direct nested-loop cross-correlation, the independent reference for conv2d.
std::vector<double> conv2d_oracle(const Tensor<double>& in, const Tensor<double>& ker,
                                  const Tensor<double>& bias, int p) {
    const std::size_t ci_n = in.dim(0), h = in.dim(1), w = in.dim(2);
    const std::size_t co_n = ker.dim(0), k = ker.dim(2);
    const std::size_t oh = h - k + 1 + 2 * p, ow = w - k + 1 + 2 * p;
    std::vector<double> out(co_n * oh * ow, 0.0);
    for (std::size_t co = 0; co < co_n; ++co)
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t x = 0; x < ow; ++x) {
                double acc = bias[co];
                for (std::size_t ci = 0; ci < ci_n; ++ci)
                    for (std::size_t dy = 0; dy < k; ++dy)
                        for (std::size_t dx = 0; dx < k; ++dx) {
                            const std::ptrdiff_t iy = std::ptrdiff_t(y + dy) - p;
                            const std::ptrdiff_t ix = std::ptrdiff_t(x + dx) - p;
                            if (iy < 0 || ix < 0 || iy >= std::ptrdiff_t(h) ||
                                ix >= std::ptrdiff_t(w))
                                continue;
                            acc += in.at({ci, std::size_t(iy), std::size_t(ix)}) *
                                   ker.at({co, ci, dy, dx});
                        }
                out[(co * oh + y) * ow + x] = acc;
            }
    return out;
}

// Scatter-add reference for the stride-2 transposed convolution.
std::vector<double> convt_oracle(const Tensor<double>& in, const Tensor<double>& ker,
                                 const Tensor<double>& bias) {
    const std::size_t ci_n = in.dim(0), h = in.dim(1), w = in.dim(2);
    const std::size_t co_n = ker.dim(1);
    std::vector<double> out(co_n * 2 * h * 2 * w, 0.0);
    for (std::size_t co = 0; co < co_n; ++co)
        for (std::size_t i = 0; i < 4 * h * w; ++i) out[co * 4 * h * w + i] = bias[co];
    for (std::size_t ci = 0; ci < ci_n; ++ci)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                for (std::size_t co = 0; co < co_n; ++co)
                    for (std::size_t dy = 0; dy < 2; ++dy)
                        for (std::size_t dx = 0; dx < 2; ++dx)
                            out[(co * 2 * h + 2 * y + dy) * 2 * w + 2 * x + dx] +=
                                in.at({ci, y, x}) * ker.at({ci, co, dy, dx});
    return out;
}

}  // namespace

TEST(Conv2d, ZeroInputGivesZeroOutput) {
    dufal::Rng rng(1);
    Tensor<double> in({1, 3, 3});
    Tensor<double> ker = random_tensor({2, 1, 3, 3}, rng);
    Tensor<double> bias({2});
    Tensor<double> out = dufal::conv2d(in, ker, bias, 1);
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], 0.0);
}

TEST(Conv2d, IdentityKernel) {
    dufal::Rng rng(2);
    Tensor<double> in = random_tensor({1, 4, 5}, rng);
    Tensor<double> ker = Tensor<double>::from_data({1, 1, 1, 1}, {1.0});
    Tensor<double> bias({1});
    Tensor<double> out = dufal::conv2d(in, ker, bias, 0);
    ASSERT_EQ(out.shape(), in.shape());
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_DOUBLE_EQ(out[i], in[i]);
}

TEST(Conv2d, MatchesNestedLoopOracle) {
    dufal::Rng rng(3);
    Tensor<double> in = random_tensor({2, 5, 5}, rng);
    Tensor<double> ker = random_tensor({3, 2, 3, 3}, rng);
    Tensor<double> bias = random_tensor({3}, rng);
    for (int p : {0, 1}) {
        Tensor<double> out = dufal::conv2d(in, ker, bias, p);
        std::vector<double> expect = conv2d_oracle(in, ker, bias, p);
        ASSERT_EQ(out.size(), expect.size());
        for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], expect[i], 1e-12);
    }
}

TEST(Conv2d, LinearityProperty) {
    dufal::Rng rng(4);
    Tensor<double> x = random_tensor({2, 6, 6}, rng);
    Tensor<double> y = random_tensor({2, 6, 6}, rng);
    Tensor<double> ker = random_tensor({3, 2, 3, 3}, rng);
    Tensor<double> bias({3});
    const double a = 0.7, b = -1.3;
    std::vector<double> mix(x.size());
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * x[i] + b * y[i];
    Tensor<double> xy = Tensor<double>::from_data({2, 6, 6}, std::move(mix));
    Tensor<double> lhs = dufal::conv2d(xy, ker, bias, 1);
    Tensor<double> cx = dufal::conv2d(x, ker, bias, 1);
    Tensor<double> cy = dufal::conv2d(y, ker, bias, 1);
    for (std::size_t i = 0; i < lhs.size(); ++i)
        EXPECT_NEAR(lhs[i], a * cx[i] + b * cy[i], 1e-10);
}

TEST(Conv2d, ShapeErrorNamesAxis) {
    Tensor<double> in({2, 5, 5});
    Tensor<double> ker({3, 4, 3, 3});
    Tensor<double> bias({3});
    try {
        dufal::conv2d(in, ker, bias, 1);
        FAIL() << "expected ShapeError";
    } catch (const dufal::ShapeError& e) {
        EXPECT_NE(std::string(e.what()).find("channel"), std::string::npos);
    }
}

TEST(Conv2d, GradientCheck) {
    dufal::Rng rng(5);
    Tensor<double> in = random_tensor({2, 5, 5}, rng);
    Tensor<double> ker = random_tensor({2, 2, 3, 3}, rng);
    ker.set_requires_grad(true);
    Tensor<double> bias = random_tensor({2}, rng);
    bias.set_requires_grad(true);

    auto loss_of_input = [&](Tensor<double>& t) {
        Tensor<double> c = dufal::conv2d(t, ker, bias, 1);
        return dufal::sum(dufal::mul(c, c));
    };
    EXPECT_LT(dufal::check_gradient(loss_of_input, in), 1e-6);

    auto loss_of_kernel = [&](Tensor<double>& kt) {
        Tensor<double> c = dufal::conv2d(in, kt, bias, 1);
        return dufal::sum(dufal::mul(c, c));
    };
    EXPECT_LT(dufal::check_gradient(loss_of_kernel, ker), 1e-6);
}

TEST(ConvTranspose, SingleSiteScatter) {
    Tensor<double> in = Tensor<double>::from_data({1, 1, 1}, {2.5});
    Tensor<double> ker = Tensor<double>::from_data({1, 1, 2, 2}, {1, 1, 1, 1});
    Tensor<double> bias({1});
    Tensor<double> out = dufal::conv_transpose2d_2x2(in, ker, bias);
    ASSERT_EQ(out.shape(), (std::vector<std::size_t>{1, 2, 2}));
    for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(out[i], 2.5);
}

TEST(ConvTranspose, ZerosToZeros) {
    dufal::Rng rng(6);
    Tensor<double> in({3, 4, 4});
    Tensor<double> ker = random_tensor({3, 2, 2, 2}, rng);
    Tensor<double> bias({2});
    Tensor<double> out = dufal::conv_transpose2d_2x2(in, ker, bias);
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], 0.0);
}

TEST(ConvTranspose, MatchesScatterAddOracle) {
    dufal::Rng rng(7);
    Tensor<double> in = random_tensor({2, 3, 3}, rng);
    Tensor<double> ker = random_tensor({2, 4, 2, 2}, rng);
    Tensor<double> bias = random_tensor({4}, rng);
    Tensor<double> out = dufal::conv_transpose2d_2x2(in, ker, bias);
    std::vector<double> expect = convt_oracle(in, ker, bias);
    ASSERT_EQ(out.size(), expect.size());
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], expect[i], 1e-12);
}

TEST(ConvTranspose, GradientCheck) {
    dufal::Rng rng(8);
    Tensor<double> in = random_tensor({2, 3, 3}, rng);
    Tensor<double> ker = random_tensor({2, 2, 2, 2}, rng);
    ker.set_requires_grad(true);
    auto loss = [&](Tensor<double>& t) {
        Tensor<double> bias({2});
        Tensor<double> c = dufal::conv_transpose2d_2x2(t, ker, bias);
        return dufal::sum(dufal::mul(c, c));
    };
    EXPECT_LT(dufal::check_gradient(loss, in), 1e-6);
}

TEST(MaxPool, ConstantInput) {
    Tensor<double> in({2, 4, 4}, 3.25);
    Tensor<double> out = dufal::maxpool_2x2(in);
    ASSERT_EQ(out.shape(), (std::vector<std::size_t>{2, 2, 2}));
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_DOUBLE_EQ(out[i], 3.25);
}

TEST(MaxPool, WindowMax) {
    Tensor<double> in = Tensor<double>::from_data({1, 2, 2}, {1, 2, 3, 4});
    Tensor<double> out = dufal::maxpool_2x2(in);
    EXPECT_DOUBLE_EQ(out[0], 4.0);
}

TEST(MaxPool, OddSizeRejected) {
    Tensor<double> in({1, 3, 4});
    EXPECT_THROW(dufal::maxpool_2x2(in), dufal::ShapeError);
}

TEST(MaxPool, GradientRoutesToArgmax) {
    Tensor<double> in = Tensor<double>::from_data({1, 2, 4}, {5, 1, 0, 7, 2, 3, 7, 4});
    in.set_requires_grad(true);
    Tensor<double> out = dufal::maxpool_2x2(in);
    dufal::sum(out).backward();
    const std::vector<double> expect = {1, 0, 0, 1, 0, 0, 0, 0};
    for (std::size_t i = 0; i < 8; ++i) EXPECT_DOUBLE_EQ(in.grad()[i], expect[i]);
}

TEST(MaxPool, TieBreaksToFirstRowMajorIndex) {
    Tensor<double> in = Tensor<double>::from_data({1, 2, 2}, {2, 2, 2, 2});
    in.set_requires_grad(true);
    dufal::sum(dufal::maxpool_2x2(in)).backward();
    EXPECT_DOUBLE_EQ(in.grad()[0], 1.0);
    EXPECT_DOUBLE_EQ(in.grad()[1], 0.0);
    EXPECT_DOUBLE_EQ(in.grad()[2], 0.0);
    EXPECT_DOUBLE_EQ(in.grad()[3], 0.0);
}

TEST(Gelu, KnownValues) {
    Tensor<double> in = Tensor<double>::from_data({3}, {0.0, 10.0, 1.0});
    Tensor<double> out = dufal::gelu(in);
    EXPECT_DOUBLE_EQ(out[0], 0.0);
    EXPECT_NEAR(out[1], 10.0, 1e-9);
    // Phi(1) from the erf-based oracle.
    const double phi1 = 0.5 * (1.0 + std::erf(1.0 / std::sqrt(2.0)));
    EXPECT_NEAR(out[2], phi1, 1e-7);
    EXPECT_NEAR(out[2], 0.8413447, 1e-6);
}

TEST(Gelu, GradientCheck) {
    dufal::Rng rng(9);
    Tensor<double> in = random_tensor({7}, rng, -2.0, 2.0);
    auto loss = [](Tensor<double>& t) { return dufal::sum(dufal::gelu(t)); };
    EXPECT_LT(dufal::check_gradient(loss, in), 1e-8);
}

TEST(Linear, IdentityWeight) {
    dufal::Rng rng(10);
    Tensor<double> in = random_tensor({4, 3}, rng);
    std::vector<double> eye(9, 0.0);
    eye[0] = eye[4] = eye[8] = 1.0;
    Tensor<double> w = Tensor<double>::from_data({3, 3}, std::move(eye));
    Tensor<double> b({3});
    Tensor<double> out = dufal::linear(in, w, b);
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_DOUBLE_EQ(out[i], in[i]);
}

TEST(Linear, ZeroWeightBroadcastsBias) {
    Tensor<double> in({2, 3}, 5.0);
    Tensor<double> w({4, 3});
    Tensor<double> b = Tensor<double>::from_data({4}, {1, 2, 3, 4});
    Tensor<double> out = dufal::linear(in, w, b);
    for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t c = 0; c < 4; ++c) EXPECT_DOUBLE_EQ(out[r * 4 + c], b[c]);
}

TEST(Linear, MatchesTripleLoopOracle) {
    dufal::Rng rng(11);
    Tensor<double> in = random_tensor({2, 3, 5}, rng);
    Tensor<double> w = random_tensor({4, 5}, rng);
    Tensor<double> b = random_tensor({4}, rng);
    Tensor<double> out = dufal::linear(in, w, b);
    ASSERT_EQ(out.shape(), (std::vector<std::size_t>{2, 3, 4}));
    for (std::size_t r = 0; r < 6; ++r)
        for (std::size_t co = 0; co < 4; ++co) {
            double acc = b[co];
            for (std::size_t ci = 0; ci < 5; ++ci) acc += in[r * 5 + ci] * w[co * 5 + ci];
            EXPECT_NEAR(out[r * 4 + co], acc, 1e-12);
        }
}

TEST(Linear, TrailingAxisMismatch) {
    Tensor<double> in({2, 3});
    Tensor<double> w({4, 5});
    Tensor<double> b({4});
    EXPECT_THROW(dufal::linear(in, w, b), dufal::ShapeError);
}

TEST(Linear, GradientCheck) {
    dufal::Rng rng(12);
    Tensor<double> in = random_tensor({3, 4}, rng);
    Tensor<double> w = random_tensor({2, 4}, rng);
    w.set_requires_grad(true);
    Tensor<double> b = random_tensor({2}, rng);
    auto loss_w = [&](Tensor<double>& t) {
        return dufal::sum(dufal::mul(dufal::linear(in, t, b), dufal::linear(in, t, b)));
    };
    EXPECT_LT(dufal::check_gradient(loss_w, w), 1e-6);
}

TEST(LayerNorm, ConstantVectorNormalizesToOffset) {
    Tensor<double> in({2, 5}, 3.0);
    Tensor<double> g({5}, 1.0);
    Tensor<double> b({5});
    Tensor<double> out = dufal::layer_norm(in, g, b);
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], 0.0, 1e-12);
}

TEST(LayerNorm, AlreadyNormalizedPair) {
    Tensor<double> in = Tensor<double>::from_data({1, 2}, {-1.0, 1.0});
    Tensor<double> g({2}, 1.0);
    Tensor<double> b({2});
    Tensor<double> out = dufal::layer_norm(in, g, b);
    EXPECT_NEAR(out[0], -1.0, 1e-4);  // eps shifts the scale slightly
    EXPECT_NEAR(out[1], 1.0, 1e-4);
}

TEST(LayerNorm, MatchesTwoPassOracle) {
    dufal::Rng rng(13);
    Tensor<double> in = random_tensor({3, 6}, rng);
    Tensor<double> g = random_tensor({6}, rng);
    Tensor<double> b = random_tensor({6}, rng);
    Tensor<double> out = dufal::layer_norm(in, g, b);
    for (std::size_t r = 0; r < 3; ++r) {
        double m = 0;
        for (std::size_t i = 0; i < 6; ++i) m += in[r * 6 + i];
        m /= 6.0;
        double var = 0;
        for (std::size_t i = 0; i < 6; ++i) var += (in[r * 6 + i] - m) * (in[r * 6 + i] - m);
        var /= 6.0;
        for (std::size_t i = 0; i < 6; ++i) {
            const double expect = (in[r * 6 + i] - m) / std::sqrt(var + 1e-5) * g[i] + b[i];
            EXPECT_NEAR(out[r * 6 + i], expect, 1e-12);
        }
    }
}

TEST(LayerNorm, GradientCheck) {
    dufal::Rng rng(14);
    Tensor<double> in = random_tensor({2, 5}, rng);
    Tensor<double> g = random_tensor({5}, rng, 0.5, 1.5);
    Tensor<double> b = random_tensor({5}, rng);
    auto loss = [&](Tensor<double>& t) {
        Tensor<double> y = dufal::layer_norm(t, g, b);
        return dufal::sum(dufal::mul(y, y));
    };
    EXPECT_LT(dufal::check_gradient(loss, in), 1e-6);
}

TEST(Adam, ZeroGradientKeepsParameters) {
    dufal::Parameter<double> p{Tensor<double>::from_data({3}, {1.0, -2.0, 0.5}, true), "p"};
    std::vector<dufal::Parameter<double>*> params{&p};
    auto state = dufal::make_adam_state(params);
    p.tensor.zero_grad();
    dufal::adam_step(params, state, 0.1);
    EXPECT_EQ(state.step, 1);
    EXPECT_DOUBLE_EQ(p.tensor[0], 1.0);
    EXPECT_DOUBLE_EQ(p.tensor[1], -2.0);
    EXPECT_DOUBLE_EQ(p.tensor[2], 0.5);
}

TEST(Adam, FirstStepIsSignedLr) {
    dufal::Parameter<double> p{Tensor<double>::from_data({2}, {1.0, 1.0}, true), "p"};
    std::vector<dufal::Parameter<double>*> params{&p};
    auto state = dufal::make_adam_state(params);
    p.tensor.grad() = {0.3, -0.7};
    dufal::adam_step(params, state, 0.1);
    // First bias-corrected step is -lr * sign(g) up to the eps correction.
    EXPECT_NEAR(p.tensor[0], 1.0 - 0.1, 1e-6);
    EXPECT_NEAR(p.tensor[1], 1.0 + 0.1, 1e-6);
}

TEST(Adam, QuadraticDescentShrinksX) {
    // Scalar simulation oracle: f(x) = x^2 from x = 1, lr = 0.1.
    dufal::Parameter<double> p{Tensor<double>::scalar(1.0, true), "x"};
    std::vector<dufal::Parameter<double>*> params{&p};
    auto state = dufal::make_adam_state(params);
    double prev = std::fabs(p.tensor[0]);
    for (int step = 0; step < 10; ++step) {
        p.tensor.zero_grad();
        p.tensor.grad()[0] = 2.0 * p.tensor[0];
        dufal::adam_step(params, state, 0.1);
        const double cur = std::fabs(p.tensor[0]);
        EXPECT_LT(cur, prev);
        prev = cur;
    }
}

TEST(Adam, NonFiniteGradientRejected) {
    dufal::Parameter<double> p{Tensor<double>::scalar(1.0, true), "x"};
    std::vector<dufal::Parameter<double>*> params{&p};
    auto state = dufal::make_adam_state(params);
    p.tensor.grad()[0] = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(dufal::adam_step(params, state, 0.1), dufal::ValueError);
}

TEST(CosineLr, Endpoints) {
    EXPECT_DOUBLE_EQ(dufal::cosine_annealing_lr(0, 100, 2e-4), 2e-4);
    EXPECT_NEAR(dufal::cosine_annealing_lr(100, 100, 2e-4), 0.0, 1e-20);
    EXPECT_NEAR(dufal::cosine_annealing_lr(50, 100, 2e-4), 1e-4, 1e-18);
    EXPECT_THROW(dufal::cosine_annealing_lr(0, 0, 2e-4), dufal::ValueError);
}

TEST(GradCheck, SumHasUnitGradient) {
    dufal::Rng rng(15);
    Tensor<double> in = random_tensor({6}, rng);
    auto loss = [](Tensor<double>& t) { return dufal::sum(t); };
    EXPECT_LT(dufal::check_gradient(loss, in), 1e-10);
}

TEST(GradCheck, QuadraticGradient) {
    Tensor<double> in = Tensor<double>::from_data({2}, {1.0, 2.0});
    auto loss = [](Tensor<double>& t) { return dufal::sum(dufal::mul(t, t)); };
    in.set_requires_grad(true);
    Tensor<double> l = loss(in);
    l.backward();
    EXPECT_DOUBLE_EQ(in.grad()[0], 2.0);
    EXPECT_DOUBLE_EQ(in.grad()[1], 4.0);
    in = Tensor<double>::from_data({2}, {1.0, 2.0});
    EXPECT_LT(dufal::check_gradient(loss, in), 1e-8);
}

TEST(Tensor, ShapeDataInvariant) {
    EXPECT_THROW(Tensor<double>::from_data({2, 3}, {1.0, 2.0}), dufal::ShapeError);
}

TEST(Tensor, FiniteCheck) {
    Tensor<double> t = Tensor<double>::from_data({2}, {1.0, 2.0});
    EXPECT_TRUE(dufal::all_finite(t));
    t[1] = std::numeric_limits<double>::infinity();
    EXPECT_FALSE(dufal::all_finite(t));
    EXPECT_THROW(dufal::require_finite(t, "t"), dufal::ValueError);
}

TEST(Tensor, BackwardThroughSharedSubgraph) {
    // d/dx of (x*x + x*x) = 4x.
    Tensor<double> x = Tensor<double>::scalar(3.0, true);
    Tensor<double> sq = dufal::mul(x, x);
    Tensor<double> y = dufal::add(sq, sq);
    y.backward();
    EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
}

TEST(Tensor, MaxPairTieRoutesToFirst) {
    Tensor<double> a = Tensor<double>::from_data({2}, {1.0, 5.0}, true);
    Tensor<double> b = Tensor<double>::from_data({2}, {1.0, 3.0}, true);
    dufal::sum(dufal::max_pair(a, b)).backward();
    EXPECT_DOUBLE_EQ(a.grad()[0], 1.0);
    EXPECT_DOUBLE_EQ(b.grad()[0], 0.0);
    EXPECT_DOUBLE_EQ(a.grad()[1], 1.0);
}

TEST(Parallel, MatchesSerialBitExact) {
    dufal::Rng rng(16);
    Tensor<double> in = random_tensor({3, 16, 16}, rng);
    Tensor<double> ker = random_tensor({4, 3, 3, 3}, rng);
    Tensor<double> bias = random_tensor({4}, rng);
    Tensor<double> serial = dufal::conv2d(in, ker, bias, 1);
    dufal::set_num_threads(4);
    Tensor<double> parallel = dufal::conv2d(in, ker, bias, 1);
    dufal::set_num_threads(1);
    for (std::size_t i = 0; i < serial.size(); ++i) EXPECT_EQ(serial[i], parallel[i]);
}
