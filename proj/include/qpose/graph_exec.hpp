#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qpose/graph.hpp"
#include "qpose/ops.hpp"

namespace qpose {

/// Activation codes observed where the float domain meets the integer path.
struct QuantBoundary {
    std::string layer;  // consuming conv / fused layer
    Tensor pre_quant;   // float value that was (or would have been) quantized
    QTensor codes;
};

struct CodeTrace {
    std::vector<QuantBoundary> boundaries;
};

/// Evaluates the graph on `inputs` (one tensor per input node, in node order)
/// and returns the tap tensors in tap order.
///
/// Quantized convolutions run on the integer path (quantize input, qconv,
/// rescale by s_w * s_a); fused layers run run_fused. If `trace` is given, every
/// quantization boundary is appended to it in layer order.
std::vector<Tensor> evaluate(const NetGraph& g, std::span<const Tensor> inputs, CodeTrace* trace = nullptr);

/// Float-path activations of every layer, kept for backpropagation.
struct ForwardCache {
    std::vector<Tensor> values;
    [[nodiscard]] bool valid() const { return !values.empty(); }
};

/// Float forward pass over a graph without quantized or fused layers.
ForwardCache forward_cached(const NetGraph& g, std::span<const Tensor> inputs);

[[nodiscard]] std::vector<Tensor> tap_values(const NetGraph& g, const ForwardCache& cache);

struct LayerGrads {
    std::optional<ConvGrads> conv;
    std::optional<BnGrads> bn;
};

struct GraphGrads {
    std::vector<LayerGrads> layers;  // indexed like g.layers()
    std::vector<Tensor> inputs;      // one per input node
};

/// Backpropagates `tap_grads` (one per tap; an empty Tensor means zero) through
/// the cached forward pass. Throws StateError if `cache` holds no forward pass.
GraphGrads backward(const NetGraph& g, const ForwardCache& cache, std::span<const Tensor> tap_grads);

/// True if `l` is a conv the given mode moves onto the integer path.
bool layer_quantized_in_mode(const LayerSpec& l, QuantMode mode);

/// Copy of `g` with LayerQuant attached to every convolution the mode
/// quantizes. Step sizes are initialised from the weights and from the float
/// activations produced by `calibration_inputs`. Activations that follow a ReLU
/// use unsigned codes, all others signed.
NetGraph annotate_quant(const NetGraph& g, QuantMode mode, int bit_width, std::span<const Tensor> calibration_inputs);

/// Copy of `g` with all quantization annotations removed.
NetGraph strip_quant(const NetGraph& g);

}  // namespace qpose
