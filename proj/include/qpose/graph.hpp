#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qpose/fusion.hpp"
#include "qpose/quant.hpp"
#include "qpose/tensor.hpp"

namespace qpose {

enum class LayerKind { Input, Conv, BatchNorm, Relu, Upsample, Add, Sub, Fused };

/// Which part of the network a layer belongs to; quantization modes select by region.
enum class Region { None, Backbone, Fpn, Head };

/// Mode I quantizes the backbone, II adds the FPNs, III quantizes everything.
enum class QuantMode { I, II, III };

std::string_view name(LayerKind k);
std::string_view name(Region r);
std::string_view name(QuantMode m);
LayerKind parse_layer_kind(std::string_view s);
Region parse_region(std::string_view s);
QuantMode parse_quant_mode(std::string_view s);

/// True if `mode` quantizes layers in `region`. Region::None is quantized in every mode.
bool mode_quantizes(QuantMode mode, Region region);

/// Quantizers attached to a convolution that runs on the integer path.
struct LayerQuant {
    QuantSpec weight_spec;
    QuantSpec act_spec;
};

struct LayerSpec {
    std::string name;
    LayerKind kind = LayerKind::Input;
    std::vector<std::size_t> inputs;
    Region region = Region::None;
    std::string origin;       // sub-model that contributed the node, e.g. "fpn_pc"
    bool keep_float = false;  // never quantized (network input layer)

    ConvGeometry conv{};  // Conv and Fused
    bool has_bias = false;
    std::size_t channels = 0;  // BatchNorm

    std::optional<ConvParams> conv_params;  // absent in shape-only graphs
    std::optional<BnParams> bn_params;
    std::optional<LayerQuant> quant;
    std::shared_ptr<const FusedLayer> fused;

    /// Parameters owned by the layer (conv weight + bias, or 4 per BN channel).
    [[nodiscard]] std::size_t param_count() const;
};

/// Ordered layer graph. Inputs always reference earlier layers, so the layer
/// order is a topological order and the graph is acyclic by construction.
class NetGraph {
public:
    std::size_t add_input(std::string name, std::string origin = {});
    std::size_t add_conv(std::string name, std::size_t input, ConvParams params, Region region, std::string origin = {});
    /// Shape-only convolution (no weights), for op counting and storage accounting.
    std::size_t add_conv_shape(std::string name, std::size_t input, ConvGeometry geometry, bool has_bias, Region region,
                               std::string origin = {});
    std::size_t add_batchnorm(std::string name, std::size_t input, BnParams params, Region region, std::string origin = {});
    std::size_t add_relu(std::string name, std::size_t input, Region region, std::string origin = {});
    std::size_t add_upsample(std::string name, std::size_t input, Region region, std::string origin = {});
    std::size_t add_add(std::string name, std::size_t a, std::size_t b, Region region, std::string origin = {});
    std::size_t add_sub(std::string name, std::size_t a, std::size_t b, Region region, std::string origin = {});
    std::size_t add_layer(LayerSpec spec);

    void add_tap(std::string name, std::size_t node);

    [[nodiscard]] const std::vector<LayerSpec>& layers() const { return layers_; }
    std::vector<LayerSpec>& mutable_layers() { return layers_; }
    [[nodiscard]] const LayerSpec& layer(std::size_t i) const { return layers_.at(i); }
    LayerSpec& mutable_layer(std::size_t i) { return layers_.at(i); }
    [[nodiscard]] std::size_t size() const { return layers_.size(); }
    [[nodiscard]] bool empty() const { return layers_.empty(); }

    [[nodiscard]] const std::vector<std::pair<std::string, std::size_t>>& taps() const { return taps_; }
    std::vector<std::pair<std::string, std::size_t>>& mutable_taps() { return taps_; }
    [[nodiscard]] std::vector<std::size_t> input_nodes() const;
    [[nodiscard]] std::optional<std::size_t> find(std::string_view name) const;
    /// Indices of layers consuming node `i`.
    [[nodiscard]] std::vector<std::size_t> consumers(std::size_t i) const;

    [[nodiscard]] bool frozen() const { return frozen_; }
    void set_frozen(bool f) { frozen_ = f; }

    /// Structural checks: edge indices, arity, parameter extents. Throws GraphError.
    void validate() const;

    [[nodiscard]] std::size_t param_count() const;

    bool operator==(const NetGraph& other) const;

private:
    std::vector<LayerSpec> layers_;
    std::vector<std::pair<std::string, std::size_t>> taps_;
    bool frozen_ = false;
};

/// Per-layer output extents for the given input extents (one per input node).
std::vector<Dims> infer_shapes(const NetGraph& g, std::span<const Dims> input_dims);

/// Appends `src` into `dst`, binding src's input nodes (in order) to existing
/// dst nodes. Layer names get `prefix`; returns dst indices of src's taps.
std::vector<std::size_t> append_graph(NetGraph& dst, const NetGraph& src, std::span<const std::size_t> input_bindings,
                                      const std::string& prefix);

/// Visits every floating-point parameter vector in layer order (conv weight,
/// conv bias, bn mu, sigma_sq, gamma, beta).
void for_each_param(const NetGraph& g, const std::function<void(const std::string&, std::span<const double>)>& fn);

}  // namespace qpose
