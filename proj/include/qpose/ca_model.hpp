#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qpose/graph.hpp"
#include "qpose/tensor.hpp"

namespace qpose {

/// One tensor per pyramid level, finest level first.
using FeatureSet = std::vector<Tensor>;

/// Dimensions of the desk-scale model: six conv-bn-relu backbone blocks
/// (stride 2 at blocks 2, 4, 6), a three-level FPN and a per-level keypoint head.
struct ToyModelConfig {
    std::size_t image_channels = 3;
    std::size_t image_size = 32;
    std::size_t stage_channels[3] = {8, 16, 32};
    std::size_t fpn_channels = 16;
    std::size_t keypoints = 8;
};

inline constexpr std::size_t kPyramidLevels = 3;

/// Shared frozen backbone, three FPNs of identical topology and a head.
struct CaModel {
    ToyModelConfig config;
    NetGraph backbone;  // input "image" -> taps c1, c2, c3
    NetGraph fpn_f;     // factual
    NetGraph fpn_pc;    // pseudo-counterfactual (student)
    NetGraph fpn_c;     // counterfactual (teacher)
    NetGraph head;      // inputs t1..t3 -> taps h1..h3 with 3K channels each
    std::size_t n_levels = kPyramidLevels;

    /// Throws GraphError if the FPNs differ structurally or the backbone is not frozen.
    void validate() const;
};

NetGraph build_backbone(const ToyModelConfig& cfg, std::uint64_t seed);
NetGraph build_fpn(const ToyModelConfig& cfg, const std::string& origin, std::uint64_t seed);
NetGraph build_head(const ToyModelConfig& cfg, std::uint64_t seed);

/// Deterministic He-initialised toy model; each sub-graph gets its own stream.
CaModel build_toy_model(const ToyModelConfig& cfg, std::uint64_t seed);

/// True if two graphs have the same layers, edges and extents (weights ignored).
bool same_topology(const NetGraph& a, const NetGraph& b);

/// Image plus binary target mask (1 = target pixel), mask extents (N, 1, H, W).
struct MaskedScene {
    Tensor image;
    Tensor mask;
};

/// I_m = I * (1 - mask) + fill * mask.
Tensor erase_target(const MaskedScene& scene, double fill = 0.0);

/// Concatenates single-image tensors along the batch axis.
Tensor stack_batch(std::span<const Tensor> items);

FeatureSet backbone_features(const CaModel& m, const Tensor& image);
FeatureSet forward_factual(const CaModel& m, const Tensor& image);
FeatureSet forward_counterfactual(const CaModel& m, const Tensor& erased_image);
FeatureSet forward_pseudo(const CaModel& m, const Tensor& image);

/// Total direct effect F^f - F^c.
FeatureSet tde_ideal(const FeatureSet& factual, const FeatureSet& counterfactual);
/// Approximate total direct effect F^f - F^pc.
FeatureSet tde_approx(const FeatureSet& factual, const FeatureSet& pseudo);

struct SimLoss {
    double loss = 0.0;
    FeatureSet grad;  // d loss / d pseudo
};

/// Smooth-L1 (beta = 1) between pseudo and counterfactual features: mean over
/// the elements of each level, summed over levels.
SimLoss sim_loss(const FeatureSet& pseudo, const FeatureSet& counterfactual);

inline constexpr double kLambda3d = 1.0;
inline constexpr double kLambdaCls = 1.0;
inline constexpr double kLambdaSim = 0.25;

double total_loss(double l3d, double lcls, double lsim);

struct DistillConfig {
    std::size_t steps = 200;
    double lr = 1e-3;
    double momentum = 0.9;
};

struct DistillTrace {
    std::vector<double> losses;  // L_sim before each update; losses.back() is after the last
};

/// Trains fpn_pc to imitate fpn_c with full-batch SGD on L_sim. The backbone,
/// fpn_f, fpn_c and head are read-only. Throws NumericError on a non-finite loss.
DistillTrace distill_pseudo_path(CaModel& m, std::span<const MaskedScene> scenes, const DistillConfig& cfg);

/// Mean over scenes and levels of ||F^c - F^pc||_1 / numel.
double mean_pseudo_gap(const CaModel& m, std::span<const MaskedScene> scenes);

/// Single-input deployment graph head(F^f - F^pc) with the counterfactual path removed.
NetGraph inference_graph(const CaModel& m);

/// SHA-256 (hex) over every parameter name and value of the graph.
std::string param_digest(const NetGraph& g);

}  // namespace qpose
