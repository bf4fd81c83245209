#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "qpose/tensor.hpp"

namespace qpose {

// Forward ops. All are pure; errors are ShapeError / GeometryError.

Tensor conv2d(const Tensor& input, const ConvParams& params);

/// Inference-mode batch normalisation: (x - mu) / sqrt(var + eps) * gamma + beta.
Tensor batchnorm(const Tensor& input, const BnParams& params);

Tensor relu(const Tensor& input);
Tensor upsample2x_nearest(const Tensor& input);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);

// Backward ops take the upstream gradient plus the forward inputs.

struct ConvGrads {
    Tensor input;
    Tensor weight;
    std::optional<std::vector<double>> bias;
};
ConvGrads conv2d_backward(const Tensor& upstream, const Tensor& input, const ConvParams& params);

struct BnGrads {
    Tensor input;
    std::vector<double> mu;
    std::vector<double> sigma_sq;
    std::vector<double> gamma;
    std::vector<double> beta;
};
BnGrads batchnorm_backward(const Tensor& upstream, const Tensor& input, const BnParams& params);

Tensor relu_backward(const Tensor& upstream, const Tensor& input);
Tensor upsample2x_backward(const Tensor& upstream, const Dims& input_dims);

/// Gradients w.r.t. (a, b).
std::pair<Tensor, Tensor> add_backward(const Tensor& upstream);
std::pair<Tensor, Tensor> sub_backward(const Tensor& upstream);

}  // namespace qpose
