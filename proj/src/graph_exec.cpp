#include "qpose/graph_exec.hpp"

#include <string>

#include "qpose/error.hpp"

namespace qpose {
namespace {

struct Value {
    Tensor real;
    std::optional<QTensor> codes;  // set when a fused producer already requantized
};

const ConvParams& conv_params_of(const LayerSpec& l) {
    if (!l.conv_params) throw GraphError("layer '" + l.name + "' has no weights (shape-only graph)");
    return *l.conv_params;
}

const BnParams& bn_params_of(const LayerSpec& l) {
    if (!l.bn_params) throw GraphError("layer '" + l.name + "' has no batchnorm parameters");
    return *l.bn_params;
}

QTensor input_codes(const Value& v, const QuantSpec& spec, const std::string& layer, CodeTrace* trace) {
    QTensor codes = (v.codes && v.codes->spec() == spec) ? *v.codes : quantize(v.real, spec);
    if (trace) trace->boundaries.push_back({layer, v.real, codes});
    return codes;
}

void bind_inputs(const NetGraph& g, std::span<const Tensor> inputs, std::vector<std::size_t>& input_nodes) {
    input_nodes = g.input_nodes();
    if (input_nodes.size() != inputs.size()) {
        throw ShapeError("graph expects " + std::to_string(input_nodes.size()) + " inputs, got " +
                         std::to_string(inputs.size()));
    }
}

}  // namespace

std::vector<Tensor> evaluate(const NetGraph& g, std::span<const Tensor> inputs, CodeTrace* trace) {
    std::vector<std::size_t> input_nodes;
    bind_inputs(g, inputs, input_nodes);
    std::vector<Value> values(g.size());
    std::size_t next_input = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        const LayerSpec& l = g.layer(i);
        auto in = [&](std::size_t k) -> const Value& { return values[l.inputs[k]]; };
        Value& out = values[i];
        switch (l.kind) {
            case LayerKind::Input: out.real = inputs[next_input++]; break;
            case LayerKind::Conv: {
                const ConvParams& p = conv_params_of(l);
                if (!l.quant) {
                    out.real = conv2d(in(0).real, p);
                    break;
                }
                const QTensor a = input_codes(in(0), l.quant->act_spec, l.name, trace);
                const QTensor w = quantize(p.weight, l.quant->weight_spec);
                out.real = dequantize(qconv(w, a, p.stride, p.pad));
                if (p.bias) {
                    const Dims& d = out.real.dims();
                    for (std::size_t n = 0; n < d.n; ++n) {
                        for (std::size_t c = 0; c < d.c; ++c) {
                            double* dst = out.real.plane(n, c);
                            for (std::size_t k = 0; k < d.h * d.w; ++k) dst[k] += (*p.bias)[c];
                        }
                    }
                }
                break;
            }
            case LayerKind::Fused: {
                const FusedLayer& f = *l.fused;
                const QTensor a = input_codes(in(0), f.conv.input_spec, l.name, trace);
                FusedResult r = run_fused(f, a);
                out.real = std::move(r.pre_quant);
                out.codes = std::move(r.codes);
                break;
            }
            case LayerKind::BatchNorm: out.real = batchnorm(in(0).real, bn_params_of(l)); break;
            case LayerKind::Relu: out.real = relu(in(0).real); break;
            case LayerKind::Upsample: out.real = upsample2x_nearest(in(0).real); break;
            case LayerKind::Add: out.real = add(in(0).real, in(1).real); break;
            case LayerKind::Sub: out.real = sub(in(0).real, in(1).real); break;
        }
    }
    std::vector<Tensor> taps;
    taps.reserve(g.taps().size());
    for (const auto& [name, node] : g.taps()) taps.push_back(values[node].real);
    return taps;
}

ForwardCache forward_cached(const NetGraph& g, std::span<const Tensor> inputs) {
    std::vector<std::size_t> input_nodes;
    bind_inputs(g, inputs, input_nodes);
    ForwardCache cache;
    cache.values.resize(g.size());
    std::size_t next_input = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        const LayerSpec& l = g.layer(i);
        auto in = [&](std::size_t k) -> const Tensor& { return cache.values[l.inputs[k]]; };
        Tensor& out = cache.values[i];
        switch (l.kind) {
            case LayerKind::Input: out = inputs[next_input++]; break;
            case LayerKind::Conv:
                if (l.quant) throw GraphError("forward_cached: layer '" + l.name + "' is quantized");
                out = conv2d(in(0), conv_params_of(l));
                break;
            case LayerKind::Fused: throw GraphError("forward_cached: fused layer '" + l.name + "' is not differentiable");
            case LayerKind::BatchNorm: out = batchnorm(in(0), bn_params_of(l)); break;
            case LayerKind::Relu: out = relu(in(0)); break;
            case LayerKind::Upsample: out = upsample2x_nearest(in(0)); break;
            case LayerKind::Add: out = add(in(0), in(1)); break;
            case LayerKind::Sub: out = sub(in(0), in(1)); break;
        }
    }
    return cache;
}

std::vector<Tensor> tap_values(const NetGraph& g, const ForwardCache& cache) {
    if (!cache.valid()) throw StateError("tap_values: no forward pass cached");
    std::vector<Tensor> out;
    for (const auto& [name, node] : g.taps()) out.push_back(cache.values.at(node));
    return out;
}

GraphGrads backward(const NetGraph& g, const ForwardCache& cache, std::span<const Tensor> tap_grads) {
    if (!cache.valid() || cache.values.size() != g.size()) {
        throw StateError("backward: no forward pass cached for this graph");
    }
    if (tap_grads.size() != g.taps().size()) throw ShapeError("backward: one gradient per tap required");

    std::vector<Tensor> grad(g.size());
    auto accumulate = [&](std::size_t node, const Tensor& gtensor) {
        if (grad[node].empty()) {
            grad[node] = gtensor;
        } else {
            for (std::size_t k = 0; k < gtensor.numel(); ++k) grad[node][k] += gtensor[k];
        }
    };
    for (std::size_t t = 0; t < tap_grads.size(); ++t) {
        if (tap_grads[t].empty()) continue;
        const std::size_t node = g.taps()[t].second;
        if (tap_grads[t].dims() != cache.values[node].dims()) {
            throw ShapeError("backward: gradient for tap '" + g.taps()[t].first + "' has wrong extents");
        }
        accumulate(node, tap_grads[t]);
    }

    GraphGrads out;
    out.layers.resize(g.size());
    for (std::size_t ii = g.size(); ii-- > 0;) {
        const LayerSpec& l = g.layer(ii);
        if (grad[ii].empty() || l.kind == LayerKind::Input) continue;
        const Tensor& up = grad[ii];
        const Tensor& x0 = cache.values[l.inputs[0]];
        switch (l.kind) {
            case LayerKind::Conv: {
                ConvGrads cg = conv2d_backward(up, x0, conv_params_of(l));
                accumulate(l.inputs[0], cg.input);
                out.layers[ii].conv = std::move(cg);
                break;
            }
            case LayerKind::BatchNorm: {
                BnGrads bg = batchnorm_backward(up, x0, bn_params_of(l));
                accumulate(l.inputs[0], bg.input);
                out.layers[ii].bn = std::move(bg);
                break;
            }
            case LayerKind::Relu: accumulate(l.inputs[0], relu_backward(up, x0)); break;
            case LayerKind::Upsample: accumulate(l.inputs[0], upsample2x_backward(up, x0.dims())); break;
            case LayerKind::Add: {
                auto [ga, gb] = add_backward(up);
                accumulate(l.inputs[0], ga);
                accumulate(l.inputs[1], gb);
                break;
            }
            case LayerKind::Sub: {
                auto [ga, gb] = sub_backward(up);
                accumulate(l.inputs[0], ga);
                accumulate(l.inputs[1], gb);
                break;
            }
            case LayerKind::Fused: throw GraphError("backward: fused layer '" + l.name + "'");
            case LayerKind::Input: break;
        }
    }
    for (std::size_t node : g.input_nodes()) {
        out.inputs.push_back(grad[node].empty() ? Tensor(cache.values[node].dims()) : grad[node]);
    }
    return out;
}

bool layer_quantized_in_mode(const LayerSpec& l, QuantMode mode) {
    return l.kind == LayerKind::Conv && !l.keep_float && mode_quantizes(mode, l.region);
}

NetGraph annotate_quant(const NetGraph& g, QuantMode mode, int bit_width, std::span<const Tensor> calibration_inputs) {
    NetGraph out = strip_quant(g);
    const ForwardCache cache = forward_cached(out, calibration_inputs);
    for (std::size_t i = 0; i < out.size(); ++i) {
        LayerSpec& l = out.mutable_layer(i);
        if (!layer_quantized_in_mode(l, mode)) continue;
        const ConvParams& p = conv_params_of(l);
        const LayerSpec& producer = out.layer(l.inputs[0]);
        const bool post_relu = producer.kind == LayerKind::Relu || (producer.kind == LayerKind::Fused && producer.fused->relu);
        const QuantSpec w_unit = QuantSpec::make(bit_width, true, 1.0);
        const QuantSpec a_unit = QuantSpec::make(bit_width, !post_relu, 1.0);
        l.quant = LayerQuant{w_unit.with_scale(init_scale(p.weight, w_unit)),
                             a_unit.with_scale(init_scale(cache.values[l.inputs[0]], a_unit))};
    }
    return out;
}

NetGraph strip_quant(const NetGraph& g) {
    NetGraph out = g;
    for (auto& l : out.mutable_layers()) {
        if (l.kind == LayerKind::Fused) throw GraphError("strip_quant: graph is already fused");
        l.quant.reset();
    }
    return out;
}

}  // namespace qpose
