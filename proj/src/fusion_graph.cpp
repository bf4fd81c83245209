#include "qpose/fusion_graph.hpp"

#include <memory>
#include <string>

#include "qpose/error.hpp"

namespace qpose {
namespace {

bool is_tap(const NetGraph& g, std::size_t node) {
    for (const auto& [name, n] : g.taps()) {
        if (n == node) return true;
    }
    return false;
}

/// The sole consumer of `node` if it has exactly one and is not a tap.
std::optional<std::size_t> sole_consumer(const NetGraph& g, std::size_t node) {
    if (is_tap(g, node)) return std::nullopt;
    const auto c = g.consumers(node);
    if (c.size() != 1) return std::nullopt;
    return c.front();
}

}  // namespace

NetGraph fuse_graph(const NetGraph& g) {
    g.validate();
    NetGraph out;
    out.set_frozen(g.frozen());
    constexpr std::size_t kUnmapped = static_cast<std::size_t>(-1);
    std::vector<std::size_t> remap(g.size(), kUnmapped);

    for (std::size_t i = 0; i < g.size(); ++i) {
        if (remap[i] != kUnmapped) continue;  // absorbed into an earlier fused layer
        const LayerSpec& l = g.layer(i);

        if (l.kind == LayerKind::BatchNorm) {
            const LayerSpec& producer = g.layer(l.inputs[0]);
            if (producer.kind != LayerKind::Conv) {
                throw GraphError("fuse_graph: batchnorm '" + l.name + "' follows " + std::string(name(producer.kind)) +
                                 ", not a conv");
            }
            if (producer.quant) {
                throw GraphError("fuse_graph: batchnorm '" + l.name + "' cannot be folded into quantized conv '" +
                                 producer.name + "'");
            }
        }

        if (l.kind == LayerKind::Conv && l.quant) {
            if (!l.conv_params) throw GraphError("fuse_graph: conv '" + l.name + "' has no weights");
            std::optional<BnParams> bn;
            bool with_relu = false;
            std::vector<std::size_t> absorbed;
            if (auto c = sole_consumer(g, i); c && g.layer(*c).kind == LayerKind::BatchNorm) {
                bn = g.layer(*c).bn_params;
                if (!bn) throw GraphError("fuse_graph: batchnorm '" + g.layer(*c).name + "' has no parameters");
                absorbed.push_back(*c);
                if (auto r = sole_consumer(g, *c); r && g.layer(*r).kind == LayerKind::Relu) {
                    with_relu = true;
                    absorbed.push_back(*r);
                }
            }
            const QuantizedConv qc = QuantizedConv::from_float(*l.conv_params, l.quant->weight_spec, l.quant->act_spec);
            LayerSpec f;
            f.name = l.name;
            f.kind = LayerKind::Fused;
            f.inputs = {remap[l.inputs[0]]};
            f.region = l.region;
            f.origin = l.origin;
            f.conv = l.conv;
            f.has_bias = l.has_bias;
            f.quant = l.quant;
            f.fused = std::make_shared<const FusedLayer>(fuse(qc, bn, with_relu, std::nullopt));
            const std::size_t idx = out.add_layer(std::move(f));
            remap[i] = idx;
            for (std::size_t a : absorbed) remap[a] = idx;
            continue;
        }

        LayerSpec copy = l;
        for (auto& in : copy.inputs) in = remap[in];
        remap[i] = out.add_layer(std::move(copy));
    }
    for (const auto& [name, node] : g.taps()) out.add_tap(name, remap[node]);

    // Requantization absorption.
    for (std::size_t i = 0; i < out.size(); ++i) {
        LayerSpec& l = out.mutable_layer(i);
        if (l.kind != LayerKind::Fused || is_tap(out, i)) continue;
        const auto consumers = out.consumers(i);
        if (consumers.empty()) continue;
        std::optional<QuantSpec> next;
        bool ok = true;
        for (std::size_t c : consumers) {
            const LayerSpec& cl = out.layer(c);
            if (cl.kind != LayerKind::Fused || (next && !(*next == cl.fused->conv.input_spec))) {
                ok = false;
                break;
            }
            next = cl.fused->conv.input_spec;
        }
        if (!ok) continue;
        FusedLayer updated = *l.fused;
        updated.next_act_spec = next;
        l.fused = std::make_shared<const FusedLayer>(std::move(updated));
    }
    return out;
}

}  // namespace qpose
