#include "qpose/tensor.hpp"

#include <cmath>
#include <sstream>

#include "qpose/error.hpp"

namespace qpose {

std::string to_string(const Dims& d) {
    std::ostringstream os;
    os << d.n << "x" << d.c << "x" << d.h << "x" << d.w;
    return os.str();
}

Tensor::Tensor(Dims dims, double fill) : dims_(dims), data_(dims.numel(), fill) {}

Tensor::Tensor(Dims dims, std::vector<double> data) : dims_(dims), data_(std::move(data)) {
    if (data_.size() != dims_.numel()) {
        throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match extents " +
                         to_string(dims_));
    }
    require_finite(*this, "tensor");
}

void require_finite(const Tensor& t, const char* what) {
    for (double v : t.data()) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string(what) + ": non-finite value");
        }
    }
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.dims() != b.dims()) {
        throw ShapeError("max_abs_diff: " + to_string(a.dims()) + " vs " + to_string(b.dims()));
    }
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        m = std::max(m, std::abs(a[i] - b[i]));
    }
    return m;
}

double sum_abs(const Tensor& t) {
    double s = 0.0;
    for (double v : t.data()) s += std::abs(v);
    return s;
}

Dims conv_output_dims(const Dims& input, const ConvGeometry& g) {
    if (input.c != g.c_in) {
        throw ShapeError("conv: input has " + std::to_string(input.c) + " channels, weight expects " +
                         std::to_string(g.c_in));
    }
    if (g.k_h == 0 || g.k_w == 0 || g.stride == 0) {
        throw GeometryError("conv: kernel extents and stride must be positive");
    }
    const std::size_t ph = input.h + 2 * g.pad;
    const std::size_t pw = input.w + 2 * g.pad;
    if (ph < g.k_h || pw < g.k_w) {
        throw GeometryError("conv: kernel larger than padded input");
    }
    if ((ph - g.k_h) % g.stride != 0 || (pw - g.k_w) % g.stride != 0) {
        throw GeometryError("conv: output extent is not an integer for input " + to_string(input) +
                            " stride " + std::to_string(g.stride));
    }
    return {input.n, g.c_out, (ph - g.k_h) / g.stride + 1, (pw - g.k_w) / g.stride + 1};
}

ConvParams::ConvParams(Tensor w, std::optional<std::vector<double>> b, std::size_t stride_, std::size_t pad_)
    : weight(std::move(w)), bias(std::move(b)), stride(stride_), pad(pad_) {
    const Dims& d = weight.dims();
    if (d.h < 1 || d.w < 1 || d.n < 1 || d.c < 1) {
        throw ShapeError("conv weight extents must be positive, got " + to_string(d));
    }
    if (stride < 1) {
        throw GeometryError("conv stride must be >= 1");
    }
    if (bias && bias->size() != d.n) {
        throw ShapeError("conv bias length does not match output channels");
    }
}

ConvGeometry ConvParams::geometry() const {
    const Dims& d = weight.dims();
    return {d.c, d.n, d.h, d.w, stride, pad};
}

BnParams::BnParams(std::vector<double> mu_, std::vector<double> sigma_sq_, std::vector<double> gamma_,
                   std::vector<double> beta_, double eps)
    : mu(std::move(mu_)), sigma_sq(std::move(sigma_sq_)), gamma(std::move(gamma_)), beta(std::move(beta_)),
      epsilon(eps) {
    const std::size_t c = mu.size();
    if (sigma_sq.size() != c || gamma.size() != c || beta.size() != c) {
        throw ShapeError("batchnorm parameter vectors differ in length");
    }
    if (!(epsilon > 0.0)) {
        throw NumericError("batchnorm epsilon must be positive");
    }
    for (double v : sigma_sq) {
        if (!(v >= 0.0)) throw NumericError("batchnorm variance must be non-negative");
    }
}

BnParams BnParams::identity(std::size_t channels, double eps) {
    return BnParams(std::vector<double>(channels, 0.0), std::vector<double>(channels, 1.0),
                    std::vector<double>(channels, 1.0), std::vector<double>(channels, 0.0), eps);
}

double BnParams::sigma(std::size_t c) const { return std::sqrt(sigma_sq[c] + epsilon); }

}  // namespace qpose
