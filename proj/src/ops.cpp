#include "qpose/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "qpose/error.hpp"
#include "qpose/simd/conv_kernels.hpp"

namespace qpose {
namespace {

void require_same(const Tensor& a, const Tensor& b, const char* op) {
    if (a.dims() != b.dims()) {
        throw ShapeError(std::string(op) + ": extent mismatch " + to_string(a.dims()) + " vs " + to_string(b.dims()));
    }
}

void require_bn_channels(const Tensor& input, const BnParams& p) {
    if (input.dims().c != p.channels()) {
        throw ShapeError("batchnorm: input has " + std::to_string(input.dims().c) + " channels, parameters have " +
                         std::to_string(p.channels()));
    }
}

kernels::ConvShape shape_of(const Dims& in, const ConvGeometry& g, const Dims& out) {
    return {in.c, in.h, in.w, g.c_out, g.k_h, g.k_w, g.stride, g.pad, out.h, out.w};
}

}  // namespace

Tensor conv2d(const Tensor& input, const ConvParams& params) {
    const ConvGeometry g = params.geometry();
    const Dims out_dims = conv_output_dims(input.dims(), g);
    Tensor out(out_dims);
    const kernels::ConvShape s = shape_of(input.dims(), g, out_dims);
    for (std::size_t n = 0; n < input.dims().n; ++n) {
        kernels::conv2d_f64(s, input.plane(n, 0), params.weight.data().data(), out.plane(n, 0));
    }
    if (params.bias) {
        const std::size_t hw = out_dims.h * out_dims.w;
        for (std::size_t n = 0; n < out_dims.n; ++n) {
            for (std::size_t c = 0; c < out_dims.c; ++c) {
                double* p = out.plane(n, c);
                const double b = (*params.bias)[c];
                for (std::size_t i = 0; i < hw; ++i) p[i] += b;
            }
        }
    }
    return out;
}

Tensor batchnorm(const Tensor& input, const BnParams& params) {
    require_bn_channels(input, params);
    const Dims& d = input.dims();
    Tensor out(d);
    const std::size_t hw = d.h * d.w;
    for (std::size_t c = 0; c < d.c; ++c) {
        const double sigma = params.sigma(c);
        for (std::size_t n = 0; n < d.n; ++n) {
            const double* x = input.plane(n, c);
            double* y = out.plane(n, c);
            for (std::size_t i = 0; i < hw; ++i) {
                y[i] = (x[i] - params.mu[c]) / sigma * params.gamma[c] + params.beta[c];
            }
        }
    }
    return out;
}

Tensor relu(const Tensor& input) {
    Tensor out(input.dims());
    for (std::size_t i = 0; i < input.numel(); ++i) out[i] = std::max(0.0, input[i]);
    return out;
}

Tensor upsample2x_nearest(const Tensor& input) {
    const Dims& d = input.dims();
    Tensor out({d.n, d.c, 2 * d.h, 2 * d.w});
    for (std::size_t n = 0; n < d.n; ++n) {
        for (std::size_t c = 0; c < d.c; ++c) {
            for (std::size_t y = 0; y < 2 * d.h; ++y) {
                for (std::size_t x = 0; x < 2 * d.w; ++x) out.at(n, c, y, x) = input.at(n, c, y / 2, x / 2);
            }
        }
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same(a, b, "add");
    Tensor out(a.dims());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same(a, b, "sub");
    Tensor out(a.dims());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] - b[i];
    return out;
}

ConvGrads conv2d_backward(const Tensor& upstream, const Tensor& input, const ConvParams& params) {
    const ConvGeometry g = params.geometry();
    const Dims out_dims = conv_output_dims(input.dims(), g);
    if (upstream.dims() != out_dims) {
        throw ShapeError("conv2d_backward: upstream " + to_string(upstream.dims()) + " expected " + to_string(out_dims));
    }
    const Dims& in = input.dims();
    ConvGrads grads{Tensor(in), Tensor(params.weight.dims()), std::nullopt};
    const auto H = static_cast<std::ptrdiff_t>(in.h);
    const auto W = static_cast<std::ptrdiff_t>(in.w);
    for (std::size_t n = 0; n < in.n; ++n) {
        for (std::size_t co = 0; co < g.c_out; ++co) {
            for (std::size_t oh = 0; oh < out_dims.h; ++oh) {
                for (std::size_t ow = 0; ow < out_dims.w; ++ow) {
                    const double go = upstream.at(n, co, oh, ow);
                    if (go == 0.0) continue;
                    const std::ptrdiff_t ih0 = static_cast<std::ptrdiff_t>(oh * g.stride) - static_cast<std::ptrdiff_t>(g.pad);
                    const std::ptrdiff_t iw0 = static_cast<std::ptrdiff_t>(ow * g.stride) - static_cast<std::ptrdiff_t>(g.pad);
                    for (std::size_t ci = 0; ci < g.c_in; ++ci) {
                        for (std::size_t kh = 0; kh < g.k_h; ++kh) {
                            const std::ptrdiff_t ih = ih0 + static_cast<std::ptrdiff_t>(kh);
                            if (ih < 0 || ih >= H) continue;
                            for (std::size_t kw = 0; kw < g.k_w; ++kw) {
                                const std::ptrdiff_t iw = iw0 + static_cast<std::ptrdiff_t>(kw);
                                if (iw < 0 || iw >= W) continue;
                                const auto uh = static_cast<std::size_t>(ih);
                                const auto uw = static_cast<std::size_t>(iw);
                                grads.weight.at(co, ci, kh, kw) += go * input.at(n, ci, uh, uw);
                                grads.input.at(n, ci, uh, uw) += go * params.weight.at(co, ci, kh, kw);
                            }
                        }
                    }
                }
            }
        }
    }
    if (params.bias) {
        std::vector<double> gb(g.c_out, 0.0);
        for (std::size_t n = 0; n < out_dims.n; ++n) {
            for (std::size_t co = 0; co < g.c_out; ++co) {
                const double* p = upstream.plane(n, co);
                for (std::size_t i = 0; i < out_dims.h * out_dims.w; ++i) gb[co] += p[i];
            }
        }
        grads.bias = std::move(gb);
    }
    return grads;
}

BnGrads batchnorm_backward(const Tensor& upstream, const Tensor& input, const BnParams& params) {
    require_bn_channels(input, params);
    require_same(upstream, input, "batchnorm_backward");
    const Dims& d = input.dims();
    const std::size_t C = d.c;
    BnGrads g{Tensor(d), std::vector<double>(C, 0.0), std::vector<double>(C, 0.0), std::vector<double>(C, 0.0),
              std::vector<double>(C, 0.0)};
    const std::size_t hw = d.h * d.w;
    for (std::size_t c = 0; c < C; ++c) {
        const double var_eps = params.sigma_sq[c] + params.epsilon;
        const double sigma = std::sqrt(var_eps);
        const double scale = params.gamma[c] / sigma;
        double sum_g = 0.0;
        double sum_gx = 0.0;  // sum of g * (x - mu)
        for (std::size_t n = 0; n < d.n; ++n) {
            const double* x = input.plane(n, c);
            const double* up = upstream.plane(n, c);
            double* gx = g.input.plane(n, c);
            for (std::size_t i = 0; i < hw; ++i) {
                gx[i] = up[i] * scale;
                sum_g += up[i];
                sum_gx += up[i] * (x[i] - params.mu[c]);
            }
        }
        g.beta[c] = sum_g;
        g.gamma[c] = sum_gx / sigma;
        g.mu[c] = -sum_g * scale;
        g.sigma_sq[c] = -0.5 * params.gamma[c] * sum_gx / (var_eps * sigma);
    }
    return g;
}

Tensor relu_backward(const Tensor& upstream, const Tensor& input) {
    require_same(upstream, input, "relu_backward");
    Tensor out(input.dims());
    for (std::size_t i = 0; i < input.numel(); ++i) out[i] = input[i] > 0.0 ? upstream[i] : 0.0;
    return out;
}

Tensor upsample2x_backward(const Tensor& upstream, const Dims& input_dims) {
    const Dims expected{input_dims.n, input_dims.c, 2 * input_dims.h, 2 * input_dims.w};
    if (upstream.dims() != expected) {
        throw ShapeError("upsample2x_backward: upstream " + to_string(upstream.dims()) + " expected " +
                         to_string(expected));
    }
    Tensor out(input_dims);
    for (std::size_t n = 0; n < expected.n; ++n) {
        for (std::size_t c = 0; c < expected.c; ++c) {
            for (std::size_t y = 0; y < expected.h; ++y) {
                for (std::size_t x = 0; x < expected.w; ++x) out.at(n, c, y / 2, x / 2) += upstream.at(n, c, y, x);
            }
        }
    }
    return out;
}

std::pair<Tensor, Tensor> add_backward(const Tensor& upstream) { return {upstream, upstream}; }

std::pair<Tensor, Tensor> sub_backward(const Tensor& upstream) {
    Tensor neg(upstream.dims());
    for (std::size_t i = 0; i < upstream.numel(); ++i) neg[i] = -upstream[i];
    return {upstream, std::move(neg)};
}

}  // namespace qpose
