#include "qpose/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "qpose/error.hpp"

namespace qpose {

QuantizedConv QuantizedConv::from_float(const ConvParams& params, const QuantSpec& weight_spec,
                                        const QuantSpec& input_spec) {
    return {quantize(params.weight, weight_spec), params.bias, params.stride, params.pad, input_spec};
}

FusedLayer fuse(const QuantizedConv& conv, const std::optional<BnParams>& bn, bool relu,
                std::optional<QuantSpec> next_act_spec) {
    const std::size_t c_out = conv.weight.dims().n;
    if (bn && bn->channels() != c_out) {
        throw ShapeError("fuse: batchnorm has " + std::to_string(bn->channels()) + " channels, conv produces " +
                         std::to_string(c_out));
    }
    if (conv.bias && conv.bias->size() != c_out) throw ShapeError("fuse: bias length mismatch");

    const double s_ws_a = conv.weight.spec().scale * conv.input_spec.scale;
    FusedLayer f{conv, std::vector<double>(c_out), std::vector<double>(c_out), relu, next_act_spec};
    for (std::size_t i = 0; i < c_out; ++i) {
        const double bias = conv.bias ? (*conv.bias)[i] : 0.0;
        if (bn) {
            const double sigma = bn->sigma(i);
            if (!(sigma > 0.0)) throw NumericError("fuse: sigma is zero in channel " + std::to_string(i));
            const double g = bn->gamma[i] / sigma;
            f.alpha[i] = g * s_ws_a;
            f.delta[i] = bn->beta[i] - bn->mu[i] * g + g * bias;
        } else {
            f.alpha[i] = s_ws_a;
            f.delta[i] = bias;
        }
        if (!std::isfinite(f.alpha[i]) || !std::isfinite(f.delta[i])) {
            throw NumericError("fuse: non-finite coefficient in channel " + std::to_string(i));
        }
    }
    return f;
}

FusedResult run_fused(const FusedLayer& layer, const QTensor& a) {
    if (!(a.spec() == layer.conv.input_spec)) {
        throw NumericError("run_fused: activation codes were produced with a different quantizer");
    }
    const IntTensor acc = qconv(layer.conv.weight, a, layer.conv.stride, layer.conv.pad);
    Tensor y(acc.dims);
    const std::size_t hw = acc.dims.h * acc.dims.w;
    for (std::size_t n = 0; n < acc.dims.n; ++n) {
        for (std::size_t c = 0; c < acc.dims.c; ++c) {
            const std::int64_t* src = acc.values.data() + (n * acc.dims.c + c) * hw;
            double* dst = y.plane(n, c);
            const double alpha = layer.alpha[c];
            const double delta = layer.delta[c];
            for (std::size_t i = 0; i < hw; ++i) {
                const double v = alpha * static_cast<double>(src[i]) + delta;
                dst[i] = layer.relu ? std::max(0.0, v) : v;
            }
        }
    }
    FusedResult r{std::move(y), std::nullopt};
    if (layer.next_act_spec) r.codes = quantize(r.pre_quant, *layer.next_act_spec);
    return r;
}

}  // namespace qpose
