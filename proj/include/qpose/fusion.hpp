#pragma once

#include <optional>
#include <vector>

#include "qpose/quant.hpp"
#include "qpose/tensor.hpp"

namespace qpose {

/// A convolution whose weights are already quantized, plus the step size of
/// the activations it consumes.
struct QuantizedConv {
    QTensor weight;  // codes + s_w
    std::optional<std::vector<double>> bias;
    std::size_t stride = 1;
    std::size_t pad = 0;
    QuantSpec input_spec;  // s_a

    /// Quantizes `params.weight` with `weight_spec`.
    static QuantizedConv from_float(const ConvParams& params, const QuantSpec& weight_spec, const QuantSpec& input_spec);
};

/// conv + BatchNorm (+ ReLU) (+ next-layer activation quantization) folded into
/// one integer convolution followed by a per-channel affine:
///   y_i = alpha_i * Yhat_i + delta_i,
///   alpha_i = gamma_i / sigma_i * s_w * s_a,
///   delta_i = beta_i - mu_i * gamma_i / sigma_i + gamma_i * bias_i / sigma_i.
struct FusedLayer {
    QuantizedConv conv;
    std::vector<double> alpha;
    std::vector<double> delta;
    bool relu = false;
    std::optional<QuantSpec> next_act_spec;

    [[nodiscard]] std::size_t out_channels() const { return alpha.size(); }
};

/// Without `bn` the affine reduces to alpha = s_w * s_a, delta = bias.
/// Throws NumericError if some sigma_i is zero or alpha_i is not finite.
FusedLayer fuse(const QuantizedConv& conv, const std::optional<BnParams>& bn, bool relu,
                std::optional<QuantSpec> next_act_spec);

struct FusedResult {
    Tensor pre_quant;             // y after the affine and optional ReLU
    std::optional<QTensor> codes;  // quantize(y, next_act_spec) when the layer requantizes
};

/// Runs the fused layer on activation codes quantized with `layer.conv.input_spec`.
FusedResult run_fused(const FusedLayer& layer, const QTensor& a);

}  // namespace qpose
