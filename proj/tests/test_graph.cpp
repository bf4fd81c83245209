#include <gtest/gtest.h>

#include <map>

#include "qpose/ca_model.hpp"
#include "qpose/error.hpp"
#include "qpose/fusion_graph.hpp"
#include "qpose/graph_exec.hpp"
#include "test_util.hpp"

using namespace qpose;
using namespace qpose::test;

namespace {

NetGraph small_graph(Rng& rng) {
    NetGraph g;
    const auto x = g.add_input("x");
    const auto c1 = g.add_conv("c1", x, ConvParams(random_tensor(rng, {4, 2, 3, 3}, 0.3), std::nullopt, 1, 1), Region::Backbone);
    const auto b1 = g.add_batchnorm("b1", c1,
                                    BnParams(random_vec(rng, 4, -0.2, 0.2), random_vec(rng, 4, 0.5, 1.5),
                                             random_vec(rng, 4, 0.5, 1.5), random_vec(rng, 4, -0.2, 0.2)),
                                    Region::Backbone);
    const auto r1 = g.add_relu("r1", b1, Region::Backbone);
    const auto c2 = g.add_conv("c2", r1, ConvParams(random_tensor(rng, {3, 4, 2, 2}, 0.3), random_vec(rng, 3, -0.1, 0.1), 2, 0),
                               Region::Fpn);
    const auto u = g.add_upsample("u", c2, Region::Fpn);
    g.add_tap("out", u);
    return g;
}

const CaModel& toy() {
    static const CaModel m = build_toy_model(ToyModelConfig{}, 7);
    return m;
}

std::size_t count_kind(const NetGraph& g, LayerKind k) {
    std::size_t n = 0;
    for (const auto& l : g.layers()) n += l.kind == k;
    return n;
}

}  // namespace

TEST(Graph, AddLayerRejectsForwardReferences) {
    NetGraph g;
    LayerSpec s;
    s.name = "relu";
    s.kind = LayerKind::Relu;
    s.inputs = {0};
    EXPECT_THROW(g.add_layer(s), GraphError);
}

TEST(Graph, ValidateCatchesBrokenEdges) {
    Rng rng(41);
    NetGraph g = small_graph(rng);
    EXPECT_NO_THROW(g.validate());
    g.mutable_layer(2).inputs = {2};
    EXPECT_THROW(g.validate(), GraphError);

    NetGraph h = small_graph(rng);
    h.mutable_layer(3).inputs.push_back(0);
    EXPECT_THROW(h.validate(), GraphError);
}

TEST(Graph, InferShapes) {
    Rng rng(42);
    const NetGraph g = small_graph(rng);
    const Dims in[] = {{2, 2, 6, 8}};
    const auto d = infer_shapes(g, in);
    ASSERT_EQ(d.size(), g.size());
    EXPECT_EQ(d[1], (Dims{2, 4, 6, 8}));
    EXPECT_EQ(d[4], (Dims{2, 3, 3, 4}));
    EXPECT_EQ(d[5], (Dims{2, 3, 6, 8}));
    EXPECT_EQ(g.consumers(3), (std::vector<std::size_t>{4}));
    EXPECT_EQ(g.find("c2"), std::optional<std::size_t>{4});
    EXPECT_FALSE(g.find("missing").has_value());
}

TEST(Graph, AppendGraphBindsInputsAndPrefixes) {
    Rng rng(43);
    const NetGraph src = small_graph(rng);
    NetGraph dst;
    const auto x = dst.add_input("image");
    const std::size_t bind[] = {x};
    const auto taps = append_graph(dst, src, bind, "p/");
    ASSERT_EQ(taps.size(), 1u);
    EXPECT_EQ(dst.size(), src.size());  // the source input is bound, not copied
    EXPECT_TRUE(dst.find("p/c1").has_value());
    EXPECT_EQ(dst.layer(*dst.find("p/c1")).inputs, (std::vector<std::size_t>{x}));
    dst.add_tap("out", taps[0]);

    const Tensor img = random_tensor(rng, {1, 2, 4, 4});
    const Tensor in[] = {img};
    EXPECT_EQ(evaluate(dst, in)[0], evaluate(src, in)[0]);
}

TEST(Graph, EvaluateMatchesForwardCache) {
    Rng rng(44);
    const NetGraph g = small_graph(rng);
    const Tensor in[] = {random_tensor(rng, {2, 2, 6, 8})};
    const auto cache = forward_cached(g, in);
    EXPECT_EQ(tap_values(g, cache)[0], evaluate(g, in)[0]);
    EXPECT_THROW(backward(g, ForwardCache{}, std::vector<Tensor>{Tensor()}), StateError);
}

TEST(Graph, BackwardMatchesFiniteDifferences) {
    Rng rng(45);
    NetGraph g = small_graph(rng);
    Tensor x = random_tensor(rng, {1, 2, 6, 8});
    const Tensor r = random_tensor(rng, {1, 3, 6, 8});
    auto loss = [&] {
        const Tensor in[] = {x};
        return dot(r, evaluate(g, in)[0]);
    };
    const Tensor in[] = {x};
    const auto cache = forward_cached(g, in);
    const Tensor up[] = {r};
    const GraphGrads gg = backward(g, cache, up);
    EXPECT_LE(fd_error(gg.inputs[0].data(), x.data(), loss), 1e-5);
    auto& w = g.mutable_layer(4).conv_params->weight;
    EXPECT_LE(fd_error(gg.layers[4].conv->weight.data(), w.data(), loss), 1e-5);
    auto& gamma = g.mutable_layer(2).bn_params->gamma;
    EXPECT_LE(fd_error(gg.layers[2].bn->gamma, gamma, loss), 1e-5);
}

TEST(Graph, AnnotateQuantSignedness) {
    Rng rng(46);
    const NetGraph g = small_graph(rng);
    const Tensor in[] = {random_tensor(rng, {2, 2, 6, 8})};
    const NetGraph q = annotate_quant(g, QuantMode::III, 8, in);
    ASSERT_TRUE(q.layer(1).quant.has_value());
    ASSERT_TRUE(q.layer(4).quant.has_value());
    EXPECT_TRUE(q.layer(1).quant->act_spec.is_signed);   // raw input
    EXPECT_FALSE(q.layer(4).quant->act_spec.is_signed);  // after relu
    EXPECT_TRUE(q.layer(4).quant->weight_spec.is_signed);

    const NetGraph q1 = annotate_quant(g, QuantMode::I, 8, in);
    EXPECT_TRUE(q1.layer(1).quant.has_value());
    EXPECT_FALSE(q1.layer(4).quant.has_value());
    EXPECT_EQ(strip_quant(q), g);
}

TEST(Graph, ModeRegionTable) {
    EXPECT_TRUE(mode_quantizes(QuantMode::I, Region::Backbone));
    EXPECT_FALSE(mode_quantizes(QuantMode::I, Region::Fpn));
    EXPECT_TRUE(mode_quantizes(QuantMode::II, Region::Fpn));
    EXPECT_FALSE(mode_quantizes(QuantMode::II, Region::Head));
    EXPECT_TRUE(mode_quantizes(QuantMode::III, Region::Head));
    EXPECT_EQ(parse_quant_mode(name(QuantMode::II)), QuantMode::II);
}

TEST(FuseGraph, EmptyGraphStaysEmpty) { EXPECT_TRUE(fuse_graph(NetGraph{}).empty()); }

TEST(FuseGraph, BatchNormAfterNonConvIsRejected) {
    NetGraph g;
    const auto x = g.add_input("x");
    const auto r = g.add_relu("r", x, Region::Backbone);
    g.add_batchnorm("bn", r, BnParams::identity(1), Region::Backbone);
    EXPECT_THROW(fuse_graph(g), GraphError);
}

TEST(FuseGraph, FloatGraphIsUnchanged) {
    Rng rng(47);
    const NetGraph g = small_graph(rng);
    EXPECT_EQ(fuse_graph(g), g);
}

TEST(FuseGraph, ModesFuseTheirRegions) {
    const NetGraph g = inference_graph(toy());
    const Tensor in[] = {Tensor({1, 3, 32, 32}, 0.25)};
    for (QuantMode mode : {QuantMode::I, QuantMode::II, QuantMode::III}) {
        const NetGraph f = fuse_graph(annotate_quant(g, mode, 8, in));
        for (const auto& l : f.layers()) {
            if (l.kind == LayerKind::Fused) {
                EXPECT_TRUE(mode_quantizes(mode, l.region)) << l.name;
            }
            if (l.kind == LayerKind::Conv) {
                EXPECT_TRUE(l.keep_float || !mode_quantizes(mode, l.region)) << l.name;
            }
        }
    }
    const NetGraph f3 = fuse_graph(annotate_quant(g, QuantMode::III, 8, in));
    EXPECT_EQ(g.size(), 66u);
    EXPECT_EQ(f3.size(), 38u);
    EXPECT_EQ(count_kind(f3, LayerKind::Fused), 23u);
    EXPECT_EQ(count_kind(f3, LayerKind::Conv), 1u);  // the network input layer stays float
    EXPECT_TRUE(g.layer(1).keep_float);
    EXPECT_EQ(f3.layer(*f3.find(g.layer(1).name)).kind, LayerKind::Conv);
}

TEST(FuseGraph, FusedGraphMatchesUnfusedQuantizedGraph) {
    Rng rng(48);
    const NetGraph g = inference_graph(toy());
    const Tensor calib[] = {random_tensor(rng, {2, 3, 32, 32}, 0.5)};
    for (int bits : {3, 8}) {
        const NetGraph q = annotate_quant(g, QuantMode::III, bits, calib);
        const NetGraph f = fuse_graph(q);
        const Tensor in[] = {random_tensor(rng, {1, 3, 32, 32}, 0.5)};
        CodeTrace tq, tf;
        const auto yq = evaluate(q, in, &tq);
        const auto yf = evaluate(f, in, &tf);
        ASSERT_EQ(yq.size(), yf.size());
        for (std::size_t i = 0; i < yq.size(); ++i) EXPECT_LE(max_abs_diff(yq[i], yf[i]), 1e-9);

        std::map<std::string, const QuantBoundary*> by_name;
        for (const auto& b : tq.boundaries) by_name[b.layer] = &b;
        ASSERT_EQ(tf.boundaries.size(), tq.boundaries.size());
        for (const auto& b : tf.boundaries) {
            ASSERT_TRUE(by_name.count(b.layer)) << b.layer;
            EXPECT_EQ(b.codes, by_name[b.layer]->codes) << b.layer;
        }
    }
}
