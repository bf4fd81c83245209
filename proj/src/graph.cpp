#include "qpose/graph.hpp"

#include <string>

#include "qpose/error.hpp"
#include "qpose/tensor.hpp"

namespace qpose {

std::string_view name(LayerKind k) {
    switch (k) {
        case LayerKind::Input: return "input";
        case LayerKind::Conv: return "conv";
        case LayerKind::BatchNorm: return "bn";
        case LayerKind::Relu: return "relu";
        case LayerKind::Upsample: return "upsample";
        case LayerKind::Add: return "add";
        case LayerKind::Sub: return "sub";
        case LayerKind::Fused: return "fused";
    }
    return "?";
}

std::string_view name(Region r) {
    switch (r) {
        case Region::None: return "none";
        case Region::Backbone: return "backbone";
        case Region::Fpn: return "fpn";
        case Region::Head: return "head";
    }
    return "?";
}

std::string_view name(QuantMode m) {
    switch (m) {
        case QuantMode::I: return "I";
        case QuantMode::II: return "II";
        case QuantMode::III: return "III";
    }
    return "?";
}

LayerKind parse_layer_kind(std::string_view s) {
    for (auto k : {LayerKind::Input, LayerKind::Conv, LayerKind::BatchNorm, LayerKind::Relu, LayerKind::Upsample,
                   LayerKind::Add, LayerKind::Sub, LayerKind::Fused}) {
        if (name(k) == s) return k;
    }
    throw FormatError("unknown layer kind '" + std::string(s) + "'");
}

Region parse_region(std::string_view s) {
    for (auto r : {Region::None, Region::Backbone, Region::Fpn, Region::Head}) {
        if (name(r) == s) return r;
    }
    throw FormatError("unknown region '" + std::string(s) + "'");
}

QuantMode parse_quant_mode(std::string_view s) {
    if (s == "I" || s == "1") return QuantMode::I;
    if (s == "II" || s == "2") return QuantMode::II;
    if (s == "III" || s == "3") return QuantMode::III;
    throw ConfigError("unknown quantization mode '" + std::string(s) + "' (expected I, II or III)");
}

bool mode_quantizes(QuantMode mode, Region region) {
    switch (region) {
        case Region::None: return true;
        case Region::Backbone: return true;
        case Region::Fpn: return mode != QuantMode::I;
        case Region::Head: return mode == QuantMode::III;
    }
    return false;
}

std::size_t LayerSpec::param_count() const {
    switch (kind) {
        case LayerKind::Conv:
        case LayerKind::Fused: return conv.weight_numel() + (has_bias ? conv.c_out : 0);
        case LayerKind::BatchNorm: return 4 * channels;
        default: return 0;
    }
}

std::size_t NetGraph::add_layer(LayerSpec spec) {
    for (std::size_t in : spec.inputs) {
        if (in >= layers_.size()) throw GraphError("layer '" + spec.name + "' references a later or missing node");
    }
    layers_.push_back(std::move(spec));
    return layers_.size() - 1;
}

std::size_t NetGraph::add_input(std::string name, std::string origin) {
    LayerSpec s;
    s.name = std::move(name);
    s.kind = LayerKind::Input;
    s.origin = std::move(origin);
    return add_layer(std::move(s));
}

std::size_t NetGraph::add_conv(std::string name, std::size_t input, ConvParams params, Region region, std::string origin) {
    LayerSpec s;
    s.name = std::move(name);
    s.kind = LayerKind::Conv;
    s.inputs = {input};
    s.region = region;
    s.origin = std::move(origin);
    s.conv = params.geometry();
    s.has_bias = params.bias.has_value();
    s.conv_params = std::move(params);
    return add_layer(std::move(s));
}

std::size_t NetGraph::add_conv_shape(std::string name, std::size_t input, ConvGeometry geometry, bool has_bias,
                                     Region region, std::string origin) {
    LayerSpec s;
    s.name = std::move(name);
    s.kind = LayerKind::Conv;
    s.inputs = {input};
    s.region = region;
    s.origin = std::move(origin);
    s.conv = geometry;
    s.has_bias = has_bias;
    return add_layer(std::move(s));
}

std::size_t NetGraph::add_batchnorm(std::string name, std::size_t input, BnParams params, Region region,
                                    std::string origin) {
    LayerSpec s;
    s.name = std::move(name);
    s.kind = LayerKind::BatchNorm;
    s.inputs = {input};
    s.region = region;
    s.origin = std::move(origin);
    s.channels = params.channels();
    s.bn_params = std::move(params);
    return add_layer(std::move(s));
}

namespace {

LayerSpec simple(std::string name, LayerKind kind, std::vector<std::size_t> inputs, Region region, std::string origin) {
    LayerSpec s;
    s.name = std::move(name);
    s.kind = kind;
    s.inputs = std::move(inputs);
    s.region = region;
    s.origin = std::move(origin);
    return s;
}

std::size_t arity(LayerKind k) {
    switch (k) {
        case LayerKind::Input: return 0;
        case LayerKind::Add:
        case LayerKind::Sub: return 2;
        default: return 1;
    }
}

}  // namespace

std::size_t NetGraph::add_relu(std::string name, std::size_t input, Region region, std::string origin) {
    return add_layer(simple(std::move(name), LayerKind::Relu, {input}, region, std::move(origin)));
}

std::size_t NetGraph::add_upsample(std::string name, std::size_t input, Region region, std::string origin) {
    return add_layer(simple(std::move(name), LayerKind::Upsample, {input}, region, std::move(origin)));
}

std::size_t NetGraph::add_add(std::string name, std::size_t a, std::size_t b, Region region, std::string origin) {
    return add_layer(simple(std::move(name), LayerKind::Add, {a, b}, region, std::move(origin)));
}

std::size_t NetGraph::add_sub(std::string name, std::size_t a, std::size_t b, Region region, std::string origin) {
    return add_layer(simple(std::move(name), LayerKind::Sub, {a, b}, region, std::move(origin)));
}

void NetGraph::add_tap(std::string name, std::size_t node) {
    if (node >= layers_.size()) throw GraphError("tap '" + name + "' references a missing node");
    taps_.emplace_back(std::move(name), node);
}

std::vector<std::size_t> NetGraph::input_nodes() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (layers_[i].kind == LayerKind::Input) out.push_back(i);
    }
    return out;
}

std::optional<std::size_t> NetGraph::find(std::string_view name) const {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (layers_[i].name == name) return i;
    }
    return std::nullopt;
}

std::vector<std::size_t> NetGraph::consumers(std::size_t i) const {
    std::vector<std::size_t> out;
    for (std::size_t j = i + 1; j < layers_.size(); ++j) {
        for (std::size_t in : layers_[j].inputs) {
            if (in == i) {
                out.push_back(j);
                break;
            }
        }
    }
    return out;
}

void NetGraph::validate() const {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const LayerSpec& l = layers_[i];
        if (l.inputs.size() != arity(l.kind)) {
            throw GraphError("layer '" + l.name + "' (" + std::string(name(l.kind)) + ") has " +
                             std::to_string(l.inputs.size()) + " inputs");
        }
        for (std::size_t in : l.inputs) {
            if (in >= i) throw GraphError("layer '" + l.name + "' is not topologically ordered");
        }
        if (l.kind == LayerKind::Conv && l.conv_params) {
            if (l.conv_params->geometry() != l.conv) throw GraphError("layer '" + l.name + "': weight extents disagree");
            if (l.conv_params->bias.has_value() != l.has_bias) throw GraphError("layer '" + l.name + "': bias flag");
        }
        if (l.kind == LayerKind::BatchNorm && l.bn_params && l.bn_params->channels() != l.channels) {
            throw GraphError("layer '" + l.name + "': batchnorm channel count");
        }
        if (l.kind == LayerKind::Fused && !l.fused) throw GraphError("layer '" + l.name + "': fused node without payload");
    }
    for (const auto& [tap, node] : taps_) {
        if (node >= layers_.size()) throw GraphError("tap '" + tap + "' out of range");
    }
}

std::size_t NetGraph::param_count() const {
    std::size_t total = 0;
    for (const auto& l : layers_) total += l.param_count();
    return total;
}

namespace {

bool same_params(const LayerSpec& a, const LayerSpec& b) {
    if (a.conv_params.has_value() != b.conv_params.has_value()) return false;
    if (a.conv_params) {
        if (!(a.conv_params->weight == b.conv_params->weight) || a.conv_params->bias != b.conv_params->bias) return false;
    }
    if (a.bn_params.has_value() != b.bn_params.has_value()) return false;
    if (a.bn_params) {
        const BnParams& x = *a.bn_params;
        const BnParams& y = *b.bn_params;
        if (x.mu != y.mu || x.sigma_sq != y.sigma_sq || x.gamma != y.gamma || x.beta != y.beta || x.epsilon != y.epsilon) {
            return false;
        }
    }
    if (a.quant.has_value() != b.quant.has_value()) return false;
    if (a.quant && !(a.quant->weight_spec == b.quant->weight_spec && a.quant->act_spec == b.quant->act_spec)) return false;
    return true;
}

}  // namespace

bool NetGraph::operator==(const NetGraph& other) const {
    if (layers_.size() != other.layers_.size() || taps_ != other.taps_ || frozen_ != other.frozen_) return false;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const LayerSpec& a = layers_[i];
        const LayerSpec& b = other.layers_[i];
        if (a.name != b.name || a.kind != b.kind || a.inputs != b.inputs || a.region != b.region ||
            a.origin != b.origin || a.keep_float != b.keep_float || a.conv != b.conv || a.has_bias != b.has_bias ||
            a.channels != b.channels || !same_params(a, b)) {
            return false;
        }
    }
    return true;
}

std::vector<Dims> infer_shapes(const NetGraph& g, std::span<const Dims> input_dims) {
    const auto inputs = g.input_nodes();
    if (inputs.size() != input_dims.size()) {
        throw ShapeError("graph has " + std::to_string(inputs.size()) + " inputs, got " +
                         std::to_string(input_dims.size()) + " extents");
    }
    std::vector<Dims> out(g.size());
    std::size_t next_input = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        const LayerSpec& l = g.layer(i);
        switch (l.kind) {
            case LayerKind::Input: out[i] = input_dims[next_input++]; break;
            case LayerKind::Conv:
            case LayerKind::Fused: out[i] = conv_output_dims(out[l.inputs[0]], l.conv); break;
            case LayerKind::BatchNorm:
                if (out[l.inputs[0]].c != l.channels) throw ShapeError("layer '" + l.name + "': channel mismatch");
                out[i] = out[l.inputs[0]];
                break;
            case LayerKind::Relu: out[i] = out[l.inputs[0]]; break;
            case LayerKind::Upsample: {
                const Dims d = out[l.inputs[0]];
                out[i] = {d.n, d.c, 2 * d.h, 2 * d.w};
                break;
            }
            case LayerKind::Add:
            case LayerKind::Sub:
                if (out[l.inputs[0]] != out[l.inputs[1]]) {
                    throw ShapeError("layer '" + l.name + "': operand extents " + to_string(out[l.inputs[0]]) +
                                     " vs " + to_string(out[l.inputs[1]]));
                }
                out[i] = out[l.inputs[0]];
                break;
        }
    }
    return out;
}

std::vector<std::size_t> append_graph(NetGraph& dst, const NetGraph& src, std::span<const std::size_t> input_bindings,
                                      const std::string& prefix) {
    const auto src_inputs = src.input_nodes();
    if (src_inputs.size() != input_bindings.size()) {
        throw GraphError("append_graph: " + std::to_string(src_inputs.size()) + " inputs, " +
                         std::to_string(input_bindings.size()) + " bindings");
    }
    std::vector<std::size_t> remap(src.size());
    std::size_t next_input = 0;
    for (std::size_t i = 0; i < src.size(); ++i) {
        const LayerSpec& l = src.layer(i);
        if (l.kind == LayerKind::Input) {
            remap[i] = input_bindings[next_input++];
            continue;
        }
        LayerSpec copy = l;
        copy.name = prefix + l.name;
        for (auto& in : copy.inputs) in = remap[in];
        remap[i] = dst.add_layer(std::move(copy));
    }
    std::vector<std::size_t> taps;
    taps.reserve(src.taps().size());
    for (const auto& [tap, node] : src.taps()) taps.push_back(remap[node]);
    return taps;
}

void for_each_param(const NetGraph& g, const std::function<void(const std::string&, std::span<const double>)>& fn) {
    for (const auto& l : g.layers()) {
        if (l.conv_params) {
            fn(l.name + ".weight", l.conv_params->weight.data());
            if (l.conv_params->bias) fn(l.name + ".bias", *l.conv_params->bias);
        }
        if (l.bn_params) {
            fn(l.name + ".mu", l.bn_params->mu);
            fn(l.name + ".sigma_sq", l.bn_params->sigma_sq);
            fn(l.name + ".gamma", l.bn_params->gamma);
            fn(l.name + ".beta", l.bn_params->beta);
        }
    }
}

}  // namespace qpose
