#include "qpose/pim.hpp"

#include <fmt/format.h>

#include <cmath>

#include "qpose/error.hpp"
#include "qpose/graph_exec.hpp"
#include "qpose/quant.hpp"

namespace qpose {
namespace {

std::uint64_t bytes_at(std::uint64_t count, int bits) {
    return (count * static_cast<std::uint64_t>(bits) + 7) / 8;
}

/// Parameter tensor sizes owned by a layer, in storage order.
std::vector<std::uint64_t> param_tensors(const LayerSpec& l) {
    switch (l.kind) {
        case LayerKind::Conv:
        case LayerKind::Fused: {
            std::vector<std::uint64_t> t{l.conv.weight_numel()};
            if (l.has_bias) t.push_back(l.conv.c_out);
            return t;
        }
        case LayerKind::BatchNorm: return std::vector<std::uint64_t>(4, l.channels);
        default: return {};
    }
}

bool integer_in_mode(const LayerSpec& l, QuantMode mode) {
    return l.kind == LayerKind::Fused || layer_quantized_in_mode(l, mode);
}

void check_bits(int bits) {
    if (bits < 1 || bits > 32) throw ConfigError("bit width must be in [1, 32], got " + std::to_string(bits));
}

}  // namespace

double OpCount::percentage() const {
    const std::uint64_t total = total_ops();
    return total == 0 ? 0.0 : static_cast<double>(int_ops()) / static_cast<double>(total);
}

OpCount& OpCount::operator+=(const OpCount& o) {
    int_macs += o.int_macs;
    float_macs += o.float_macs;
    return *this;
}

std::vector<LayerOps> count_ops_per_layer(const NetGraph& g, std::span<const Dims> input_dims, QuantMode mode,
                                          int bit_width) {
    check_bits(bit_width);
    if (g.empty()) return {};
    g.validate();
    const std::vector<Dims> dims = infer_shapes(g, input_dims);
    std::vector<LayerOps> rows;
    rows.reserve(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        const LayerSpec& l = g.layer(i);
        LayerOps row{l.name, l.kind, {}, 0};
        const Dims& out = dims[i];
        const bool integer = integer_in_mode(l, mode);
        switch (l.kind) {
            case LayerKind::Conv:
            case LayerKind::Fused: {
                const std::uint64_t macs = static_cast<std::uint64_t>(out.numel()) * l.conv.c_in * l.conv.k_h * l.conv.k_w;
                (integer ? row.ops.int_macs : row.ops.float_macs) = macs;
                break;
            }
            case LayerKind::BatchNorm:
            case LayerKind::Relu:
            case LayerKind::Add:
            case LayerKind::Sub: row.ops.float_macs = out.numel(); break;
            case LayerKind::Input:
            case LayerKind::Upsample: break;
        }
        for (std::uint64_t n : param_tensors(l)) row.bytes_packed += bytes_at(n, integer ? bit_width : 32);
        rows.push_back(std::move(row));
    }
    return rows;
}

OpCount count_ops(const NetGraph& g, std::span<const Dims> input_dims, QuantMode mode) {
    OpCount total;
    for (const auto& row : count_ops_per_layer(g, input_dims, mode)) total += row.ops;
    return total;
}

std::string ops_csv(std::span<const LayerOps> rows) {
    std::string out = "layer,kind,int_macs,float_macs,bytes_packed\n";
    for (const auto& r : rows) {
        out += fmt::format("{},{},{},{},{}\n", r.name, name(r.kind), r.ops.int_macs, r.ops.float_macs, r.bytes_packed);
    }
    return out;
}

StorageReport storage_footprint(const NetGraph& g, int bit_width) {
    check_bits(bit_width);
    g.validate();
    StorageReport r;
    r.bit_width = bit_width;
    for (const auto& l : g.layers()) {
        for (std::uint64_t n : param_tensors(l)) {
            r.param_count += n;
            r.packed_bytes += bytes_at(n, bit_width);
            r.header_bytes += kQpwHeaderBytes;
            ++r.tensor_count;
        }
    }
    r.saving_pct = (1.0 - static_cast<double>(bit_width) / 32.0) * 100.0;
    return r;
}

void PimConfig::validate() const {
    if (units == 0 || macs_per_unit_per_cycle == 0 || !(clock_hz > 0.0) || !std::isfinite(clock_hz) ||
        !(efficiency > 0.0) || !(efficiency <= 1.0)) {
        throw ConfigError(fmt::format("invalid PIM config: units={} lanes={} clock={} efficiency={}", units,
                                      macs_per_unit_per_cycle, clock_hz, efficiency));
    }
}

Latency latency(std::uint64_t int_macs, const PimConfig& cfg) {
    cfg.validate();
    const std::uint64_t peak = cfg.units * cfg.macs_per_unit_per_cycle;
    Latency l;
    if (cfg.efficiency == 1.0) {
        l.cycles = (int_macs + peak - 1) / peak;
    } else {
        l.cycles = static_cast<std::uint64_t>(
            std::ceil(static_cast<double>(int_macs) / (static_cast<double>(peak) * cfg.efficiency)));
    }
    l.seconds = static_cast<double>(l.cycles) / cfg.clock_hz;
    return l;
}

Latency latency(const LayerSpec& layer, const Dims& input, const PimConfig& cfg) {
    const bool conv = layer.kind == LayerKind::Conv || layer.kind == LayerKind::Fused;
    if (!conv || (layer.kind == LayerKind::Conv && !layer.quant)) {
        throw ModelError("latency: layer '" + layer.name + "' is not a quantized convolution; quantize and fuse it first");
    }
    const Dims out = conv_output_dims(input, layer.conv);
    return latency(static_cast<std::uint64_t>(out.numel()) * layer.conv.c_in * layer.conv.k_h * layer.conv.k_w, cfg);
}

Latency latency(const NetGraph& g, std::span<const Dims> input_dims, QuantMode mode, const PimConfig& cfg) {
    const auto rows = count_ops_per_layer(g, input_dims, mode);
    OpCount total;
    for (const auto& r : rows) {
        if (r.ops.float_macs != 0) {
            throw ModelError("latency: layer '" + r.name + "' (" + std::string(name(r.kind)) + ") runs in float under mode " +
                             std::string(name(mode)) + "; quantize and fuse the graph first");
        }
        total += r.ops;
    }
    return latency(total.int_macs, cfg);
}

PimConfig calibrate(const PimConfig& templ, double observed_seconds, std::uint64_t int_macs) {
    PimConfig cfg = templ;
    cfg.efficiency = 1.0;
    cfg.validate();
    if (!(observed_seconds > 0.0) || !std::isfinite(observed_seconds)) {
        throw CalibrationError("calibrate: observed latency must be positive");
    }
    const double ideal = static_cast<double>(int_macs) / cfg.peak_macs_per_cycle() / cfg.clock_hz;
    if (observed_seconds < ideal) {
        throw CalibrationError(fmt::format("calibrate: observed {:.6g} s is faster than the ideal {:.6g} s", observed_seconds,
                                           ideal));
    }
    cfg.efficiency = ideal / observed_seconds;
    return cfg;
}

NetGraph deployment_conv_graph() {
    NetGraph g;
    const std::size_t in = g.add_input("input");
    const std::size_t c = g.add_conv_shape("deploy_conv", in, ConvGeometry{64, 128, 3, 3, 1, 1}, false, Region::None);
    g.add_tap("out", c);
    return g;
}

std::string format_fixed(double v, int decimals) {
    const double scale = std::pow(10.0, decimals);
    const double r = std::round(v * scale) / scale;
    return fmt::format("{:.{}f}", r, decimals);
}

}  // namespace qpose
