#include <gtest/gtest.h>

#include <sstream>

#include "qpose/error.hpp"
#include "qpose/ops.hpp"
#include "qpose/quant.hpp"
#include "test_util.hpp"

using namespace qpose;
using namespace qpose::test;

namespace {

Tensor row(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor({1, 1, 1, n}, std::move(v));
}

}  // namespace

TEST(QuantSpec, ClipLimits) {
    const QuantSpec s3 = QuantSpec::make(3, true, 1.0);
    EXPECT_EQ(s3.q_neg, -4);
    EXPECT_EQ(s3.q_pos, 3);
    const QuantSpec u8 = QuantSpec::make(8, false, 1.0);
    EXPECT_EQ(u8.q_neg, 0);
    EXPECT_EQ(u8.q_pos, 255);
    EXPECT_THROW(QuantSpec::make(8, true, 0.0), NumericError);
    EXPECT_THROW(QuantSpec::make(8, true, -1.0), NumericError);
}

TEST(Quantize, HandExamples) {
    const QuantSpec s3 = QuantSpec::make(3, true, 1.0);
    EXPECT_EQ(quantize(row({2.6, -9.0, 0.0}), s3).values(), (std::vector<std::int32_t>{3, -4, 0}));
    const QuantSpec s8 = QuantSpec::make(8, true, 0.5);
    EXPECT_EQ(quantize(row({1.25, -1.25}), s8).values(), (std::vector<std::int32_t>{3, -3}));
    EXPECT_EQ(round_half_away(2.5), 3.0);
    EXPECT_EQ(round_half_away(-2.5), -3.0);
    EXPECT_EQ(round_half_away(0.49999999999999994), 0.0);
}

TEST(Quantize, ZeroIsFixedPoint) {
    for (int b = 2; b <= 8; ++b) {
        for (bool sgn : {true, false}) {
            EXPECT_EQ(quantize(row({0.0}), QuantSpec::make(b, sgn, 0.37)).values()[0], 0);
        }
    }
}

TEST(Quantize, RejectsNonFinite) {
    Tensor t({1, 1, 1, 1});
    t.data()[0] = std::numeric_limits<double>::infinity();
    EXPECT_THROW(quantize(t, QuantSpec::make(8, true, 1.0)), NumericError);
}

TEST(Dequantize, Definition) {
    const QuantSpec s = QuantSpec::make(8, true, 0.5);
    EXPECT_EQ(dequantize(QTensor({1, 1, 1, 1}, {3}, s))[0], 1.5);
    EXPECT_EQ(dequantize(QTensor({1, 1, 1, 3}, {0, 0, 0}, s)), Tensor({1, 1, 1, 3}));
    EXPECT_THROW(QTensor({1, 1, 1, 1}, {200}, s), NumericError);
}

TEST(Quantize, IdempotenceRoundTripAndMonotonicity) {
    Rng rng(21);
    std::uniform_real_distribution<double> scale(0.01, 1.0);
    for (int t = 0; t < 200; ++t) {
        const QuantSpec spec = QuantSpec::make(static_cast<int>(pick(rng, 2, 8)), pick(rng, 0, 1) == 1, scale(rng));
        const Tensor x = random_tensor(rng, {1, 2, 3, 4}, 3.0 * spec.scale * spec.q_pos / 2.0);
        const QTensor q = quantize(x, spec);
        EXPECT_EQ(quantize(dequantize(q), spec), q);
        Tensor y = x;
        for (double& v : y.data()) v += std::abs(v) * 0.1 + 0.01;
        const QTensor qy = quantize(y, spec);
        for (std::size_t i = 0; i < q.numel(); ++i) EXPECT_LE(q.values()[i], qy.values()[i]);
    }
}

TEST(QConv, HandExampleAndZeros) {
    const QTensor w({1, 1, 1, 1}, {2}, QuantSpec::make(8, true, 0.1));
    const QTensor a({1, 1, 1, 1}, {3}, QuantSpec::make(8, true, 0.2));
    const IntTensor y = qconv(w, a, 1, 0);
    EXPECT_EQ(y.values[0], 6);
    EXPECT_NEAR(dequantize(y)[0], 0.12, 1e-15);

    const QTensor zeros({1, 1, 3, 3}, std::vector<std::int32_t>(9, 0), QuantSpec::make(8, true, 0.2));
    const QTensor w3({2, 1, 3, 3}, std::vector<std::int32_t>(18, 5), QuantSpec::make(8, true, 0.1));
    for (auto v : qconv(w3, zeros, 1, 1).values) EXPECT_EQ(v, 0);
}

TEST(QConv, MatchesFloatConvOfDequantizedValues) {
    Rng rng(22);
    for (int bits : {3, 8}) {
        const QuantSpec sw = QuantSpec::make(bits, true, 0.03);
        const QuantSpec sa = QuantSpec::make(bits, false, 0.07);
        const QTensor w = quantize(random_tensor(rng, {6, 4, 3, 3}, 0.1), sw);
        Tensor act = random_tensor(rng, {2, 4, 7, 7}, 0.5);
        for (double& v : act.data()) v = std::abs(v);
        const QTensor a = quantize(act, sa);
        const IntTensor acc = qconv(w, a, 2, 1);
        const Tensor ref = conv2d(dequantize(a), ConvParams(dequantize(w), std::nullopt, 2, 1));
        EXPECT_LE(max_abs_diff(dequantize(acc), ref), 1e-9);
        EXPECT_DOUBLE_EQ(acc.scale, sw.scale * sa.scale);
    }
}

TEST(QConv, WideAccumulatorSelectionAndOverflow) {
    const QuantSpec s8 = QuantSpec::make(8, true, 1.0);
    EXPECT_FALSE(needs_wide_accumulator(s8, s8, 9));
    EXPECT_TRUE(needs_wide_accumulator(s8, s8, 1u << 16));

    // 2^17 taps of (-128) * (-128) = 2^31: overflows int32, fits int64.
    const std::size_t c = 1u << 17;
    const QTensor w({1, c, 1, 1}, std::vector<std::int32_t>(c, -128), s8);
    const QTensor a({1, c, 1, 1}, std::vector<std::int32_t>(c, -128), s8);
    EXPECT_THROW(qconv(w, a, 1, 0, AccumulatorPolicy::Int32), OverflowError);
    const IntTensor wide = qconv(w, a, 1, 0);
    EXPECT_TRUE(wide.wide_accumulator);
    EXPECT_EQ(wide.values[0], std::int64_t{1} << 31);
}

TEST(Lsq, PassThroughInRange) {
    const QuantSpec s = QuantSpec::make(8, true, 0.1);
    const Tensor x = row({0.33, -1.01, 2.47});
    const LsqGrads g = lsq_backward(x, s, Tensor(x.dims(), 1.0));
    EXPECT_EQ(g.grad_x, Tensor(x.dims(), 1.0));
}

TEST(Lsq, ClippedElementsContributeLimit) {
    const QuantSpec s = QuantSpec::make(4, true, 0.5);
    const Tensor x = row({100.0, -100.0});
    const LsqGrads g = lsq_backward(x, s, Tensor(x.dims(), 1.0));
    EXPECT_EQ(g.grad_x, Tensor(x.dims()));
    const double norm = 1.0 / std::sqrt(2.0 * s.q_pos);
    EXPECT_NEAR(g.grad_scale, (s.q_pos + s.q_neg) * norm, 1e-15);
}

TEST(Lsq, ScaleGradientRule) {
    // In range: round(v) - v; normalizer 1 / sqrt(numel * q_pos).
    const QuantSpec s = QuantSpec::make(8, true, 1.0);
    const Tensor x = row({1.2, -2.7});
    const Tensor up = row({2.0, -1.0});
    const LsqGrads g = lsq_backward(x, s, up);
    const double expect = (2.0 * (1.0 - 1.2) - 1.0 * (-3.0 + 2.7)) / std::sqrt(2.0 * 127.0);
    EXPECT_NEAR(g.grad_scale, expect, 1e-15);
}

TEST(Lsq, ScaleGradientMatchesStraightThroughFiniteDifference) {
    Rng rng(23);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int t = 0; t < 50; ++t) {
        const QuantSpec spec = QuantSpec::make(static_cast<int>(pick(rng, 2, 8)), pick(rng, 0, 1) == 1,
                                               std::uniform_real_distribution<double>(0.05, 0.5)(rng));
        const std::size_t n = pick(rng, 5, 100);
        std::uniform_real_distribution<double> code(spec.q_neg - 2.0, spec.q_pos + 2.0);
        Tensor x({1, 1, 1, n});
        for (std::size_t i = 0; i < n; ++i) {
            double v;
            do {
                v = code(rng);
            } while (std::abs(v - std::floor(v) - 0.5) < 1e-3 || std::abs(v - spec.q_neg) < 1e-3 ||
                     std::abs(v - spec.q_pos) < 1e-3);
            x[i] = v * spec.scale;
        }
        Tensor up({1, 1, 1, n});
        for (double& u : up.data()) u = normal(rng);
        const LsqGrads g = lsq_backward(x, spec, up);

        const double s0 = spec.scale;
        auto surrogate = [&](double s) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double v0 = x[i] / s0;
                const double q = std::clamp(std::round(x[i] / s), double(spec.q_neg), double(spec.q_pos));
                acc += up[i] * (v0 > spec.q_neg && v0 < spec.q_pos ? s * q - s * v0 : s * q);
            }
            return acc;
        };
        const double h = 1e-7 * s0;
        const double fd = (surrogate(s0 + h) - surrogate(s0 - h)) / (2 * h) / std::sqrt(double(n) * spec.q_pos);
        EXPECT_LE(std::abs(g.grad_scale - fd), 1e-3 * std::max(std::abs(fd), 1e-12));
        for (std::size_t i = 0; i < n; ++i) {
            const double v = x[i] / s0;
            EXPECT_EQ(g.grad_x[i], v > spec.q_neg && v < spec.q_pos ? up[i] : 0.0);
        }
    }
}

TEST(InitScale, Examples) {
    const QuantSpec s3 = QuantSpec::make(3, true, 1.0);
    EXPECT_EQ(init_scale(Tensor({1, 1, 2, 2}), s3), 1e-8);
    EXPECT_NEAR(init_scale(row({1, -1, 1, -1}), s3), 2.0 / std::sqrt(3.0), 1e-15);
    const QuantSpec s8 = QuantSpec::make(8, true, 1.0);
    EXPECT_NEAR(init_scale(Tensor({1, 1, 3, 3}, -0.4), s8), 0.8 / std::sqrt(127.0), 1e-15);
}

TEST(Qpw, PackingSizes) {
    EXPECT_EQ(packed_bytes(8, 3), 3u);
    EXPECT_EQ(packed_bytes(9, 3), 4u);
    EXPECT_EQ(packed_bytes(5, 8), 5u);
    const std::vector<std::int32_t> codes{-4, 3, 0, -1, 2, -3, 1, -2};
    const auto bytes = pack_codes(codes, 3);
    EXPECT_EQ(bytes.size(), 3u);
    EXPECT_EQ(unpack_codes(bytes, codes.size(), 3, true), codes);
}

TEST(Qpw, RoundTripAllWidths) {
    Rng rng(24);
    for (int b = 2; b <= 8; ++b) {
        for (bool sgn : {true, false}) {
            const QuantSpec spec = QuantSpec::make(b, sgn, 0.0625 * b);
            const QTensor q = quantize(random_tensor(rng, {3, 2, 3, 3}, spec.scale * spec.q_pos), spec);
            std::stringstream ss;
            write_qpw(ss, q);
            EXPECT_EQ(ss.str().size(), kQpwHeaderBytes + packed_bytes(q.numel(), b));
            EXPECT_EQ(read_qpw(ss), q);
        }
    }
    std::stringstream bad("QPW2xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx");
    EXPECT_THROW(read_qpw(bad), FormatError);
}
