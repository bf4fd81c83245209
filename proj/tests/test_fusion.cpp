#include <gtest/gtest.h>

#include "qpose/error.hpp"
#include "qpose/fusion.hpp"
#include "qpose/ops.hpp"
#include "test_util.hpp"

using namespace qpose;
using namespace qpose::test;

namespace {

constexpr double kEps = 1e-5;

struct Layer {
    ConvParams params;
    BnParams bn;
    Tensor input;
};

Layer random_layer(Rng& rng) {
    for (;;) {
        const std::size_t c_in = pick(rng, 1, 6), c_out = pick(rng, 1, 6);
        const std::size_t k = pick(rng, 0, 1) ? 3 : 1;
        const std::size_t stride = pick(rng, 1, 2), pad = k == 3 ? pick(rng, 0, 1) : 0;
        const std::size_t h = pick(rng, 4, 9), w = pick(rng, 4, 9);
        if ((h + 2 * pad - k) % stride || (w + 2 * pad - k) % stride) continue;
        Layer l;
        std::optional<std::vector<double>> bias;
        if (pick(rng, 0, 1)) bias = random_vec(rng, c_out, -0.5, 0.5);
        l.params = ConvParams(random_tensor(rng, {c_out, c_in, k, k}, 0.4), bias, stride, pad);
        l.bn = BnParams(random_vec(rng, c_out, -0.5, 0.5), random_vec(rng, c_out, 0.3, 2.0), random_vec(rng, c_out, -1.5, 1.5),
                        random_vec(rng, c_out, -0.5, 0.5));
        l.input = random_tensor(rng, {pick(rng, 1, 2), c_in, h, w});
        return l;
    }
}

/// The four-step reference: integer conv, rescale (+ bias), batchnorm, relu.
Tensor unfused(const Layer& l, const QuantSpec& ws, const QTensor& a, bool with_relu) {
    Tensor y = dequantize(qconv(quantize(l.params.weight, ws), a, l.params.stride, l.params.pad));
    if (l.params.bias) {
        const Dims d = y.dims();
        for (std::size_t n = 0; n < d.n; ++n)
            for (std::size_t c = 0; c < d.c; ++c)
                for (std::size_t i = 0; i < d.h * d.w; ++i) y.plane(n, c)[i] += (*l.params.bias)[c];
    }
    y = batchnorm(y, l.bn);
    return with_relu ? relu(y) : y;
}

}  // namespace

TEST(Fuse, IdentityBatchNormReducesToDequantization) {
    const double sigma = std::sqrt(0.7 + kEps);
    const BnParams bn({0.3}, {0.7}, {sigma}, {0.3});
    const ConvParams p(Tensor({1, 1, 1, 1}, 1.0), std::nullopt, 1, 0);
    const QuantizedConv qc = QuantizedConv::from_float(p, QuantSpec::make(8, true, 0.1), QuantSpec::make(8, true, 0.2));
    const FusedLayer f = fuse(qc, bn, false, std::nullopt);
    EXPECT_NEAR(f.alpha[0], 0.1 * 0.2, 1e-15);
    EXPECT_NEAR(f.delta[0], 0.0, 1e-15);
}

TEST(Fuse, HandEvaluation) {
    const BnParams bn({0.0}, {1.0 - kEps}, {2.0}, {0.5});
    const ConvParams p(Tensor({1, 1, 1, 1}, 1.0), std::nullopt, 1, 0);
    const FusedLayer f = fuse(QuantizedConv::from_float(p, QuantSpec::make(8, true, 0.1), QuantSpec::make(8, true, 0.2)),
                              bn, true, std::nullopt);
    EXPECT_NEAR(f.alpha[0], 0.04, 1e-12);
    EXPECT_NEAR(f.delta[0], 0.5, 1e-12);
}

TEST(Fuse, BiasFoldsIntoDelta) {
    const BnParams bn({0.25}, {3.0}, {1.5}, {-0.5});
    const ConvParams p(Tensor({1, 1, 1, 1}, 1.0), std::vector<double>{0.8}, 1, 0);
    const FusedLayer f = fuse(QuantizedConv::from_float(p, QuantSpec::make(8, true, 0.1), QuantSpec::make(8, true, 0.2)),
                              bn, false, std::nullopt);
    const double s = std::sqrt(3.0 + kEps);
    EXPECT_NEAR(f.delta[0], -0.5 - 0.25 * 1.5 / s + 1.5 * 0.8 / s, 1e-15);
}

TEST(Fuse, ScaleCancellation) {
    // (gamma * c, sigma * c) leaves alpha unchanged.
    const double c = 3.0;
    const double var = 0.8;
    const double sigma_c_sq = c * c * (var + kEps) - kEps;
    const ConvParams p(Tensor({1, 1, 1, 1}, 1.0), std::nullopt, 1, 0);
    const QuantizedConv qc = QuantizedConv::from_float(p, QuantSpec::make(8, true, 0.1), QuantSpec::make(8, true, 0.2));
    const FusedLayer a = fuse(qc, BnParams({0.1}, {var}, {1.2}, {0.0}), false, std::nullopt);
    const FusedLayer b = fuse(qc, BnParams({0.1}, {sigma_c_sq}, {1.2 * c}, {0.0}), false, std::nullopt);
    EXPECT_NEAR(a.alpha[0], b.alpha[0], 1e-15);
}

TEST(Fuse, ZeroActivationsGiveReluDelta) {
    const BnParams bn({0.0, 0.0}, {1.0, 1.0}, {1.0, 1.0}, {0.7, -50.0});
    const ConvParams p(Tensor({2, 1, 3, 3}, 0.5), std::nullopt, 1, 1);
    const QuantSpec as = QuantSpec::make(8, true, 0.2);
    const FusedLayer f = fuse(QuantizedConv::from_float(p, QuantSpec::make(8, true, 0.1), as), bn, true, std::nullopt);
    const FusedResult r = run_fused(f, QTensor({1, 1, 4, 4}, std::vector<std::int32_t>(16, 0), as));
    for (std::size_t i = 0; i < 16; ++i) {
        EXPECT_NEAR(r.pre_quant[i], 0.7, 1e-15);
        EXPECT_EQ(r.pre_quant[16 + i], 0.0);  // large negative delta: channel fully zeroed
    }
    EXPECT_FALSE(r.codes.has_value());
}

TEST(Fuse, ZeroSigmaIsNumericError) {
    BnParams bn({0.0}, {0.0}, {1.0}, {0.0}, 1e-300);
    bn.epsilon = 0.0;
    const ConvParams p(Tensor({1, 1, 1, 1}, 1.0), std::nullopt, 1, 0);
    const QuantizedConv qc = QuantizedConv::from_float(p, QuantSpec::make(8, true, 0.1), QuantSpec::make(8, true, 0.2));
    EXPECT_THROW(fuse(qc, bn, false, std::nullopt), NumericError);
}

TEST(Fuse, EquivalenceOverRandomLayers) {
    Rng rng(31);
    int layers = 0;
    for (int bits : {3, 8}) {
        for (int i = 0; i < 60; ++i, ++layers) {
            const Layer l = random_layer(rng);
            const bool with_relu = i % 4 != 0;
            const QuantSpec ws = QuantSpec::make(bits, true, init_scale(l.params.weight, QuantSpec::make(bits, true, 1)));
            const QuantSpec as = QuantSpec::make(bits, true, init_scale(l.input, QuantSpec::make(bits, true, 1)));
            const QTensor a = quantize(l.input, as);
            const Tensor ref = unfused(l, ws, a, with_relu);
            const QuantSpec next = QuantSpec::make(bits, !with_relu, init_scale(ref, QuantSpec::make(bits, !with_relu, 1)));

            const FusedLayer f = fuse(QuantizedConv::from_float(l.params, ws, as), l.bn, with_relu, next);
            const FusedResult r = run_fused(f, a);
            EXPECT_LE(max_abs_diff(r.pre_quant, ref), 1e-9);
            ASSERT_TRUE(r.codes.has_value());
            EXPECT_EQ(*r.codes, quantize(ref, next));
        }
    }
    EXPECT_GE(layers, 100);
}

TEST(Fuse, TwoLayerChainCodesMatch) {
    Rng rng(32);
    for (int trial = 0; trial < 20; ++trial) {
        const int bits = trial % 2 ? 3 : 8;
        const std::size_t c0 = 3, c1 = 4, c2 = 5;
        Layer l1{ConvParams(random_tensor(rng, {c1, c0, 3, 3}, 0.4), std::nullopt, 1, 1),
                 BnParams(random_vec(rng, c1, -0.5, 0.5), random_vec(rng, c1, 0.5, 2), random_vec(rng, c1, 0.5, 1.5),
                          random_vec(rng, c1, -0.5, 0.5)),
                 random_tensor(rng, {1, c0, 6, 6})};
        Layer l2{ConvParams(random_tensor(rng, {c2, c1, 3, 3}, 0.4), std::nullopt, 1, 1),
                 BnParams(random_vec(rng, c2, -0.5, 0.5), random_vec(rng, c2, 0.5, 2), random_vec(rng, c2, 0.5, 1.5),
                          random_vec(rng, c2, -0.5, 0.5)),
                 Tensor()};
        const QuantSpec w1 = QuantSpec::make(bits, true, init_scale(l1.params.weight, QuantSpec::make(bits, true, 1)));
        const QuantSpec w2 = QuantSpec::make(bits, true, init_scale(l2.params.weight, QuantSpec::make(bits, true, 1)));
        const QuantSpec a1 = QuantSpec::make(bits, true, init_scale(l1.input, QuantSpec::make(bits, true, 1)));

        // Unfused: layer 1 float output, quantized as layer 2's input, then layer 2.
        const QTensor in = quantize(l1.input, a1);
        const Tensor y1 = unfused(l1, w1, in, true);
        const QuantSpec a2 = QuantSpec::make(bits, false, init_scale(y1, QuantSpec::make(bits, false, 1)));
        const Tensor y2 = unfused(l2, w2, quantize(y1, a2), true);
        const QuantSpec a3 = QuantSpec::make(bits, false, init_scale(y2, QuantSpec::make(bits, false, 1)));

        // Fused chain: layer 1 requantizes straight into layer 2's codes.
        const FusedLayer f1 = fuse(QuantizedConv::from_float(l1.params, w1, a1), l1.bn, true, a2);
        const FusedLayer f2 = fuse(QuantizedConv::from_float(l2.params, w2, a2), l2.bn, true, a3);
        const FusedResult r1 = run_fused(f1, in);
        const FusedResult r2 = run_fused(f2, *r1.codes);
        EXPECT_EQ(*r1.codes, quantize(y1, a2));
        EXPECT_EQ(*r2.codes, quantize(y2, a3));
    }
}
