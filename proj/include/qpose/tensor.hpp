#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace qpose {

/// Extents of a 4-D tensor in (batch, channels, height, width) order.
struct Dims {
    std::size_t n = 0;
    std::size_t c = 0;
    std::size_t h = 0;
    std::size_t w = 0;

    [[nodiscard]] std::size_t numel() const { return n * c * h * w; }
    [[nodiscard]] std::array<std::size_t, 4> as_array() const { return {n, c, h, w}; }
    bool operator==(const Dims&) const = default;
};

std::string to_string(const Dims& d);

/// Dense row-major NCHW tensor of doubles.
///
/// The float path is the correctness oracle for the integer path, so storage is
/// 64-bit throughout. Construction from external data rejects NaN and Inf.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Dims dims, double fill = 0.0);
    Tensor(Dims dims, std::vector<double> data);

    static Tensor zeros(Dims dims) { return Tensor(dims); }
    static Tensor scalar(double v) { return Tensor({1, 1, 1, 1}, std::vector<double>{v}); }

    [[nodiscard]] const Dims& dims() const { return dims_; }
    [[nodiscard]] std::size_t numel() const { return data_.size(); }
    [[nodiscard]] bool empty() const { return data_.empty(); }

    [[nodiscard]] std::span<const double> data() const { return data_; }
    [[nodiscard]] std::span<double> data() { return data_; }
    [[nodiscard]] const std::vector<double>& vec() const { return data_; }

    [[nodiscard]] std::size_t offset(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return ((n * dims_.c + c) * dims_.h + h) * dims_.w + w;
    }
    double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) { return data_[offset(n, c, h, w)]; }
    [[nodiscard]] double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return data_[offset(n, c, h, w)];
    }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    /// Pointer to the H*W plane of (n, c).
    [[nodiscard]] const double* plane(std::size_t n, std::size_t c) const { return data_.data() + offset(n, c, 0, 0); }
    double* plane(std::size_t n, std::size_t c) { return data_.data() + offset(n, c, 0, 0); }

    bool operator==(const Tensor&) const = default;

private:
    Dims dims_{};
    std::vector<double> data_;
};

/// Throws NumericError if any element is NaN or Inf.
void require_finite(const Tensor& t, const char* what);

double max_abs_diff(const Tensor& a, const Tensor& b);
double sum_abs(const Tensor& t);

/// Spatial window geometry of a convolution layer.
struct ConvGeometry {
    std::size_t c_in = 0;
    std::size_t c_out = 0;
    std::size_t k_h = 1;
    std::size_t k_w = 1;
    std::size_t stride = 1;
    std::size_t pad = 0;

    [[nodiscard]] std::size_t weight_numel() const { return c_out * c_in * k_h * k_w; }
    bool operator==(const ConvGeometry&) const = default;
};

/// Output extents of a convolution; throws ShapeError / GeometryError.
Dims conv_output_dims(const Dims& input, const ConvGeometry& g);

struct ConvParams {
    Tensor weight;  // (C_out, C_in, k_h, k_w)
    std::optional<std::vector<double>> bias;
    std::size_t stride = 1;
    std::size_t pad = 0;

    ConvParams() = default;
    ConvParams(Tensor w, std::optional<std::vector<double>> b, std::size_t stride_, std::size_t pad_);

    [[nodiscard]] ConvGeometry geometry() const;
};

struct BnParams {
    std::vector<double> mu;
    std::vector<double> sigma_sq;
    std::vector<double> gamma;
    std::vector<double> beta;
    double epsilon = 1e-5;

    BnParams() = default;
    BnParams(std::vector<double> mu_, std::vector<double> sigma_sq_, std::vector<double> gamma_,
             std::vector<double> beta_, double eps = 1e-5);

    /// Identity-initialised parameters for `channels` channels.
    static BnParams identity(std::size_t channels, double eps = 1e-5);

    [[nodiscard]] std::size_t channels() const { return mu.size(); }
    [[nodiscard]] double sigma(std::size_t c) const;
};

}  // namespace qpose
