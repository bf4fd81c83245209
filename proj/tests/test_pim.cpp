#include <gtest/gtest.h>

#include "qpose/ca_model.hpp"
#include "qpose/error.hpp"
#include "qpose/pim.hpp"
#include "test_util.hpp"

using namespace qpose;

namespace {

constexpr std::uint64_t kDeployMacs = 128ull * 128 * 128 * 64 * 9;

const Dims kDeployIn[] = {kDeploymentInput};

NetGraph two_conv_graph() {
    NetGraph g;
    const auto x = g.add_input("x");
    const auto a = g.add_conv_shape("a", x, ConvGeometry{2, 3, 1, 1, 1, 0}, true, Region::Backbone);
    const auto b = g.add_batchnorm("bn", a, BnParams::identity(3), Region::Backbone);
    const auto c = g.add_conv_shape("c", b, ConvGeometry{3, 4, 3, 3, 1, 1}, false, Region::Head);
    g.add_tap("out", c);
    return g;
}

}  // namespace

TEST(CountOps, DeploymentConv) {
    const OpCount c = count_ops(deployment_conv_graph(), kDeployIn, QuantMode::I);
    EXPECT_EQ(c.int_macs, kDeployMacs);
    EXPECT_EQ(c.float_macs, 0u);
    EXPECT_EQ(c.int_ops(), 2 * kDeployMacs);
    EXPECT_EQ(c.percentage(), 1.0);
}

TEST(CountOps, EmptyGraph) {
    const OpCount c = count_ops(NetGraph{}, std::span<const Dims>{}, QuantMode::III);
    EXPECT_EQ(c, OpCount{});
    EXPECT_EQ(c.percentage(), 0.0);
}

TEST(CountOps, PerLayerRowsAddUpAndFollowModes) {
    const NetGraph g = two_conv_graph();
    const Dims in[] = {{1, 2, 5, 5}};
    const auto rows = count_ops_per_layer(g, in, QuantMode::I, 8);
    ASSERT_EQ(rows.size(), 4u);
    EXPECT_EQ(rows[1].ops.int_macs, 25u * 3 * 2);
    EXPECT_EQ(rows[2].ops.float_macs, 25u * 3);
    EXPECT_EQ(rows[3].ops.float_macs, 25u * 4 * 3 * 9);
    EXPECT_EQ(rows[1].bytes_packed, 6u + 3u);  // weights and bias at 8 bits
    OpCount sum;
    for (const auto& r : rows) sum += r.ops;
    EXPECT_EQ(sum, count_ops(g, in, QuantMode::I));

    const OpCount iii = count_ops(g, in, QuantMode::III);
    EXPECT_EQ(iii.int_macs, 25u * 3 * 2 + 25u * 4 * 3 * 9);
    EXPECT_GT(iii.percentage(), count_ops(g, in, QuantMode::I).percentage());

    const std::string csv = ops_csv(rows);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "layer,kind,int_macs,float_macs,bytes_packed");
    EXPECT_NE(csv.find("a,conv,150,0,9"), std::string::npos) << csv;
}

TEST(CountOps, ToyModesIncreaseIntegerShare) {
    const NetGraph g = inference_graph(build_toy_model(ToyModelConfig{}, 1));
    const Dims in[] = {{1, 3, 32, 32}};
    const double p1 = count_ops(g, in, QuantMode::I).percentage();
    const double p2 = count_ops(g, in, QuantMode::II).percentage();
    const double p3 = count_ops(g, in, QuantMode::III).percentage();
    EXPECT_LT(p1, p2);
    EXPECT_LT(p2, p3);
    EXPECT_LT(p3, 1.0);  // the float input layer and the elementwise ops remain
}

TEST(Storage, Examples) {
    const StorageReport r = storage_footprint(two_conv_graph(), 3);
    // a: 6 weights + 3 bias; bn: 4 x 3; c: 108 weights
    EXPECT_EQ(r.param_count, 9u + 12u + 108u);
    EXPECT_EQ(r.tensor_count, 2u + 4u + 1u);
    EXPECT_EQ(r.packed_bytes, 3u + 2u + 4u * 2u + 41u);
    EXPECT_DOUBLE_EQ(r.saving_pct, 90.625);
    EXPECT_EQ(storage_footprint(two_conv_graph(), 32).packed_bytes, 4u * r.param_count);
    EXPECT_EQ(storage_footprint(NetGraph{}, 8).packed_bytes, 0u);
}

TEST(Latency, Examples) {
    const PimConfig cfg;
    EXPECT_EQ(latency(2048, cfg).cycles, 1u);
    EXPECT_EQ(latency(2049, cfg).cycles, 2u);
    EXPECT_EQ(latency(0, cfg).cycles, 0u);
    const Latency d = latency(kDeployMacs, cfg);
    EXPECT_EQ(d.cycles, 589824u);
    EXPECT_DOUBLE_EQ(d.seconds, 589824.0 / 100e6);
    EXPECT_EQ(latency(deployment_conv_graph(), kDeployIn, QuantMode::I, cfg).cycles, d.cycles);

    PimConfig fast = cfg;
    fast.clock_hz = 2 * cfg.clock_hz;
    EXPECT_DOUBLE_EQ(latency(kDeployMacs, fast).seconds, d.seconds / 2);

    PimConfig bad = cfg;
    bad.efficiency = 1.5;
    EXPECT_THROW(latency(1, bad), ConfigError);
    bad = cfg;
    bad.units = 0;
    EXPECT_THROW(latency(1, bad), ConfigError);
}

TEST(Latency, MonotoneInUnitsAndWork) {
    PimConfig cfg;
    cfg.efficiency = 0.9;
    std::uint64_t prev = UINT64_MAX;
    for (std::uint64_t u : {1, 2, 16, 64, 100, 256}) {
        cfg.units = u;
        const std::uint64_t c = latency(kDeployMacs, cfg).cycles;
        EXPECT_LE(c, prev);
        prev = c;
    }
    for (std::uint64_t w = 1; w < 10000; w += 997) EXPECT_LE(latency(w, cfg).cycles, latency(w + 1, cfg).cycles);
}

TEST(Latency, RejectsFloatWork) {
    const NetGraph g = two_conv_graph();
    const Dims in[] = {{1, 2, 5, 5}};
    EXPECT_THROW(latency(g, in, QuantMode::I, PimConfig{}), ModelError);
    EXPECT_THROW(latency(g.layer(1), in[0], PimConfig{}), ModelError);
    EXPECT_THROW(latency(g.layer(2), in[0], PimConfig{}), ModelError);
}

TEST(Calibrate, Examples) {
    const PimConfig cfg;
    const double ideal = latency(kDeployMacs, cfg).seconds;
    EXPECT_DOUBLE_EQ(calibrate(cfg, ideal, kDeployMacs).efficiency, 1.0);
    EXPECT_DOUBLE_EQ(calibrate(cfg, 2 * ideal, kDeployMacs).efficiency, 0.5);
    EXPECT_THROW(calibrate(cfg, 0.5 * ideal, kDeployMacs), CalibrationError);
    EXPECT_THROW(calibrate(cfg, 0.0, kDeployMacs), CalibrationError);

    const PimConfig fit = calibrate(cfg, kObservedPimLatency, kDeployMacs);
    EXPECT_NEAR(fit.efficiency, 0.984681, 1e-6);
    EXPECT_NEAR(latency(kDeployMacs, fit).seconds, kObservedPimLatency, 1e-8);
}

TEST(FormatFixed, RoundsHalfAwayFromZero) {
    EXPECT_EQ(format_fixed(2.5, 0), "3");
    EXPECT_EQ(format_fixed(-2.5, 0), "-3");
    EXPECT_EQ(format_fixed(0.125, 2), "0.13");
    EXPECT_EQ(format_fixed(5.99e-3 * 1e3, 4), "5.9900");
    EXPECT_EQ(format_fixed(100.0, 1), "100.0");
}
