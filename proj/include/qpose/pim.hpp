#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qpose/graph.hpp"

namespace qpose {

/// 1 MAC counts as 2 ops (integer) or 2 FLOPs (float).
struct OpCount {
    std::uint64_t int_macs = 0;
    std::uint64_t float_macs = 0;

    [[nodiscard]] std::uint64_t int_ops() const { return 2 * int_macs; }
    [[nodiscard]] std::uint64_t float_flops() const { return 2 * float_macs; }
    [[nodiscard]] std::uint64_t total_ops() const { return int_ops() + float_flops(); }
    /// int_ops / (int_ops + float_flops); 0 for an empty count.
    [[nodiscard]] double percentage() const;

    OpCount& operator+=(const OpCount& o);
    bool operator==(const OpCount&) const = default;
};

struct LayerOps {
    std::string name;
    LayerKind kind = LayerKind::Input;
    OpCount ops;
    std::uint64_t bytes_packed = 0;  // layer parameters at the bit width the mode assigns them
};

/// Convolutions count H_out*W_out*C_out*C_in*k_h*k_w MACs per image, as integer
/// work when `mode` quantizes them (layers marked keep_float never are) and as
/// float work otherwise; fused layers are always integer. Unfused batchnorm,
/// relu, add and sub cost 1 float MAC per output element; upsampling is free.
std::vector<LayerOps> count_ops_per_layer(const NetGraph& g, std::span<const Dims> input_dims, QuantMode mode,
                                          int bit_width = 8);
OpCount count_ops(const NetGraph& g, std::span<const Dims> input_dims, QuantMode mode);

/// `layer,kind,int_macs,float_macs,bytes_packed` with a header row.
std::string ops_csv(std::span<const LayerOps> rows);

struct StorageReport {
    std::uint64_t param_count = 0;
    std::uint64_t packed_bytes = 0;  // sum over parameter tensors of ceil(numel * bits / 8)
    std::uint64_t header_bytes = 0;  // one QPW1 header per tensor, reported separately
    std::uint64_t tensor_count = 0;
    int bit_width = 32;
    double saving_pct = 0.0;  // (1 - bits / 32) * 100

    [[nodiscard]] double megabytes() const { return static_cast<double>(packed_bytes) / 1e6; }
};

/// Every parameter tensor (conv weight and bias, the four batchnorm vectors) stored at `bit_width`.
StorageReport storage_footprint(const NetGraph& g, int bit_width);

struct PimConfig {
    std::uint64_t units = 64;
    std::uint64_t macs_per_unit_per_cycle = 32;
    double clock_hz = 100e6;
    double efficiency = 1.0;

    /// Throws ConfigError unless every field is positive and efficiency <= 1.
    void validate() const;
    [[nodiscard]] double peak_macs_per_cycle() const { return static_cast<double>(units * macs_per_unit_per_cycle); }
};

struct Latency {
    std::uint64_t cycles = 0;
    double seconds = 0.0;
};

/// cycles = ceil(int_macs / (units * lanes * efficiency)), seconds = cycles / clock_hz.
Latency latency(std::uint64_t int_macs, const PimConfig& cfg);
/// Throws ModelError if the layer is not a quantized or fused convolution.
Latency latency(const LayerSpec& layer, const Dims& input, const PimConfig& cfg);
/// Throws ModelError if any work in the graph is float under `mode`.
Latency latency(const NetGraph& g, std::span<const Dims> input_dims, QuantMode mode, const PimConfig& cfg);

/// Fits efficiency = ideal / observed for `int_macs` of work. Throws
/// CalibrationError if `observed_seconds` is faster than the ideal.
PimConfig calibrate(const PimConfig& templ, double observed_seconds, std::uint64_t int_macs);

/// Shape-only 3x3 conv, 64 -> 128 channels, stride 1, pad 1 on a 128x128 map.
NetGraph deployment_conv_graph();
inline constexpr Dims kDeploymentInput{1, 64, 128, 128};
inline constexpr double kObservedPimLatency = 5.99e-3;

/// Fixed-point text with `decimals` digits, rounding half away from zero.
std::string format_fixed(double v, int decimals);

}  // namespace qpose
