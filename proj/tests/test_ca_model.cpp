#include <gtest/gtest.h>

#include <fstream>

#include "qpose/ca_model.hpp"
#include "qpose/error.hpp"
#include "qpose/graph_exec.hpp"
#include "qpose/ops.hpp"
#include "qpose/scene.hpp"
#include "qpose/tensor_io.hpp"
#include "test_util.hpp"

using namespace qpose;
using namespace qpose::test;

namespace {

std::vector<MaskedScene> views(std::size_t n) {
    std::vector<MaskedScene> out;
    for (const Scene& s : gen_scenes(3, n, std::nullopt, 0.0)) out.push_back(s.view);
    return out;
}

void copy_params(const NetGraph& from, NetGraph& to) {
    for (std::size_t i = 0; i < from.size(); ++i) {
        to.mutable_layer(i).conv_params = from.layer(i).conv_params;
        to.mutable_layer(i).bn_params = from.layer(i).bn_params;
    }
}

FeatureSet level(double v) { return {Tensor({1, 1, 1, 1}, v)}; }

}  // namespace

TEST(EraseTarget, Examples) {
    const Tensor img({1, 3, 2, 2}, 2.0);
    Tensor mask({1, 1, 2, 2});
    mask.at(0, 0, 1, 0) = 1.0;
    const MaskedScene s{img, mask};
    const Tensor e = erase_target(s);
    for (std::size_t c = 0; c < 3; ++c) {
        EXPECT_EQ(e.at(0, c, 1, 0), 0.0);
        EXPECT_EQ(e.at(0, c, 0, 0), 2.0);
    }
    EXPECT_EQ(erase_target(s, 0.5).at(0, 2, 1, 0), 0.5);
    EXPECT_EQ(erase_target(MaskedScene{img, Tensor({1, 1, 2, 2})}), img);
    EXPECT_THROW(erase_target(MaskedScene{img, Tensor({1, 1, 2, 3})}), ShapeError);
    EXPECT_THROW(erase_target(MaskedScene{img, Tensor({1, 1, 2, 2}, 0.5)}), NumericError);
}

TEST(CaModel, BuildIsDeterministicAndValid) {
    const CaModel a = build_toy_model(ToyModelConfig{}, 5);
    const CaModel b = build_toy_model(ToyModelConfig{}, 5);
    EXPECT_EQ(param_digest(a.backbone), param_digest(b.backbone));
    EXPECT_NE(param_digest(a.fpn_pc), param_digest(build_toy_model(ToyModelConfig{}, 6).fpn_pc));
    EXPECT_TRUE(a.backbone.frozen());
    EXPECT_TRUE(same_topology(a.fpn_f, a.fpn_pc));
    EXPECT_TRUE(same_topology(a.fpn_f, a.fpn_c));

    CaModel broken = a;
    broken.backbone.set_frozen(false);
    EXPECT_THROW(broken.validate(), GraphError);
}

TEST(CaModel, ForwardShapesAndDecomposition) {
    const CaModel m = build_toy_model(ToyModelConfig{}, 5);
    Rng rng(51);
    const Tensor img = random_tensor(rng, {2, 3, 32, 32}, 0.5);
    const FeatureSet c = backbone_features(m, img);
    ASSERT_EQ(c.size(), kPyramidLevels);
    const FeatureSet f = forward_factual(m, img);
    const FeatureSet pc = forward_pseudo(m, img);
    ASSERT_EQ(f.size(), kPyramidLevels);
    for (std::size_t l = 0; l < f.size(); ++l) {
        EXPECT_EQ(f[l].dims().c, 16u);
        EXPECT_EQ(f[l].dims().h, 32u >> (l + 1));
    }
    EXPECT_EQ(f, evaluate(m.fpn_f, c));
    const FeatureSet d = tde_approx(f, pc);
    for (std::size_t l = 0; l < f.size(); ++l) EXPECT_EQ(d[l], sub(f[l], pc[l]));
    EXPECT_EQ(tde_ideal(f, f)[0], Tensor(f[0].dims()));
    EXPECT_THROW(tde_ideal(f, FeatureSet(f.begin(), f.begin() + 2)), ShapeError);
}

TEST(SimLoss, Examples) {
    EXPECT_DOUBLE_EQ(sim_loss(level(0.5), level(0.0)).loss, 0.125);
    EXPECT_DOUBLE_EQ(sim_loss(level(-2.0), level(0.0)).loss, 1.5);
    const FeatureSet two{Tensor({1, 1, 1, 1}, 0.5), Tensor({1, 1, 1, 1}, 2.0)};
    const FeatureSet zero{Tensor({1, 1, 1, 1}), Tensor({1, 1, 1, 1})};
    EXPECT_DOUBLE_EQ(sim_loss(two, zero).loss, 1.625);
    EXPECT_EQ(sim_loss(two, two).loss, 0.0);
}

TEST(SimLoss, GradientMatchesFiniteDifferences) {
    Rng rng(52);
    FeatureSet p{random_tensor(rng, {2, 3, 4, 4}, 1.5), random_tensor(rng, {2, 3, 2, 2}, 1.5)};
    const FeatureSet c{random_tensor(rng, {2, 3, 4, 4}, 1.5), random_tensor(rng, {2, 3, 2, 2}, 1.5)};
    const SimLoss s = sim_loss(p, c);
    for (std::size_t l = 0; l < p.size(); ++l) {
        EXPECT_LE(fd_error(s.grad[l].data(), p[l].data(), [&] { return sim_loss(p, c).loss; }), 1e-6);
    }
}

TEST(TotalLoss, Weighting) {
    EXPECT_EQ(total_loss(0, 0, 0), 0.0);
    EXPECT_DOUBLE_EQ(total_loss(1.0, 1.0, 4.0), 3.0);
    EXPECT_DOUBLE_EQ(total_loss(0.4, 0.3, 0.8), 0.9);
    EXPECT_THROW(total_loss(std::nan(""), 0, 0), NumericError);
    EXPECT_THROW(total_loss(0, 0, std::numeric_limits<double>::infinity()), NumericError);
}

TEST(Distill, FixedPointWhenStudentEqualsTeacherOnUnmaskedScenes) {
    CaModel m = build_toy_model(ToyModelConfig{}, 5);
    copy_params(m.fpn_c, m.fpn_pc);
    std::vector<MaskedScene> scenes = views(3);
    for (auto& s : scenes) s.mask = Tensor(s.mask.dims());
    const std::string before = param_digest(m.fpn_pc);
    const DistillTrace t = distill_pseudo_path(m, scenes, DistillConfig{5, 1e-2, 0.9});
    for (double l : t.losses) EXPECT_EQ(l, 0.0);
    EXPECT_EQ(param_digest(m.fpn_pc), before);
}

TEST(Distill, ReducesLossAndTouchesOnlyTheStudent) {
    CaModel m = build_toy_model(ToyModelConfig{}, 5);
    const auto scenes = views(6);
    const std::string bb = param_digest(m.backbone), ff = param_digest(m.fpn_f), fc = param_digest(m.fpn_c),
                      hd = param_digest(m.head), pc = param_digest(m.fpn_pc);
    const double gap0 = mean_pseudo_gap(m, scenes);
    const DistillTrace t = distill_pseudo_path(m, scenes, DistillConfig{20, 1e-2, 0.9});
    ASSERT_EQ(t.losses.size(), 21u);
    EXPECT_LT(t.losses.back(), t.losses.front());
    EXPECT_LT(mean_pseudo_gap(m, scenes), gap0);
    EXPECT_EQ(param_digest(m.backbone), bb);
    EXPECT_EQ(param_digest(m.fpn_f), ff);
    EXPECT_EQ(param_digest(m.fpn_c), fc);
    EXPECT_EQ(param_digest(m.head), hd);
    EXPECT_NE(param_digest(m.fpn_pc), pc);
    EXPECT_THROW(distill_pseudo_path(m, std::span<const MaskedScene>{}, DistillConfig{}), ShapeError);
}

TEST(InferenceGraph, DropsCounterfactualPathAndMatchesComposition) {
    const CaModel m = build_toy_model(ToyModelConfig{}, 5);
    const NetGraph g = inference_graph(m);
    g.validate();
    std::size_t backbone_layers = 0;
    for (const auto& l : g.layers()) {
        EXPECT_NE(l.origin, "fpn_c") << l.name;
        backbone_layers += l.name.rfind("backbone/", 0) == 0;
    }
    // One backbone shared by both remaining paths.
    EXPECT_EQ(backbone_layers, m.backbone.size() - 1);
    EXPECT_EQ(g.input_nodes().size(), 1u);

    Rng rng(53);
    const Tensor img = random_tensor(rng, {2, 3, 32, 32}, 0.5);
    const Tensor in[] = {img};
    const auto out = evaluate(g, in);
    const auto ref = evaluate(m.head, tde_approx(forward_factual(m, img), forward_pseudo(m, img)));
    ASSERT_EQ(out.size(), ref.size());
    for (std::size_t l = 0; l < out.size(); ++l) {
        EXPECT_EQ(out[l].dims().c, 3 * m.config.keypoints);
        EXPECT_LE(max_abs_diff(out[l], ref[l]), 1e-12);
    }
}

TEST(CaModel, GoldenFactualFeatures) {
    const CaModel m = build_toy_model(ToyModelConfig{}, 7);
    std::ifstream in(std::string(QPOSE_FIXTURE_DIR) + "/toy_seed7_factual.qpt", std::ios::binary);
    ASSERT_TRUE(in) << "missing fixture";
    const Tensor img = read_qpt(in);
    const FeatureSet f = forward_factual(m, img);
    for (std::size_t l = 0; l < f.size(); ++l) EXPECT_LE(max_abs_diff(f[l], read_qpt(in)), 1e-12) << "level " << l;
}
