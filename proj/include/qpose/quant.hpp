#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "qpose/tensor.hpp"

namespace qpose {

/// Round half away from zero. Every quantizer in the engine rounds through here.
double round_half_away(double v);

/// Clip limits and step size of a uniform quantizer.
///
/// Signed specs use [-2^(b-1), 2^(b-1) - 1]; unsigned specs use [0, 2^b - 1].
struct QuantSpec {
    int bit_width = 8;
    bool is_signed = true;
    std::int32_t q_neg = -128;
    std::int32_t q_pos = 127;
    double scale = 1.0;

    /// Validated constructor; throws NumericError on a bad width or scale.
    static QuantSpec make(int bit_width, bool is_signed, double scale);

    [[nodiscard]] QuantSpec with_scale(double s) const { return make(bit_width, is_signed, s); }
    /// Largest code magnitude the quantizer admits.
    [[nodiscard]] std::int64_t max_magnitude() const;
    bool operator==(const QuantSpec&) const = default;
};

/// Integer codes plus the quantizer that produced them. Every code lies within the
/// spec's clip limits (checked on construction).
class QTensor {
public:
    QTensor() = default;
    QTensor(Dims dims, std::vector<std::int32_t> values, QuantSpec spec);

    [[nodiscard]] const Dims& dims() const { return dims_; }
    [[nodiscard]] const std::vector<std::int32_t>& values() const { return values_; }
    [[nodiscard]] const QuantSpec& spec() const { return spec_; }
    [[nodiscard]] std::size_t numel() const { return values_.size(); }
    [[nodiscard]] const std::int32_t* plane(std::size_t n, std::size_t c) const {
        return values_.data() + (n * dims_.c + c) * dims_.h * dims_.w;
    }

    bool operator==(const QTensor&) const = default;

private:
    Dims dims_{};
    std::vector<std::int32_t> values_;
    QuantSpec spec_{};
};

/// Integer convolution accumulator; `scale` is s_w * s_a.
struct IntTensor {
    Dims dims{};
    std::vector<std::int64_t> values;
    double scale = 1.0;
    bool wide_accumulator = false;  // true if accumulated in 64 bits
};

enum class AccumulatorPolicy {
    Auto,   // 32-bit unless bits_w + bits_a + ceil(log2(kernel volume)) > 30
    Int32,  // forced; overflow raises OverflowError
    Int64,
};

QTensor quantize(const Tensor& x, const QuantSpec& spec);
Tensor dequantize(const QTensor& q);
/// Accumulator times its combined scale s_w * s_a.
Tensor dequantize(const IntTensor& acc);

/// Integer convolution of activation codes `a` with weight codes `w`.
IntTensor qconv(const QTensor& w, const QTensor& a, std::size_t stride, std::size_t pad,
                AccumulatorPolicy policy = AccumulatorPolicy::Auto);

/// True if the Auto policy picks a 64-bit accumulator for this layer.
bool needs_wide_accumulator(const QuantSpec& w, const QuantSpec& a, std::size_t kernel_volume);

struct LsqGrads {
    Tensor grad_x;
    double grad_scale = 0.0;
};

/// Straight-through gradients of the learned-step-size quantizer
/// x_hat = round(clip(x / s)) * s, with the step-size gradient scaled by
/// 1 / sqrt(numel * q_pos).
LsqGrads lsq_backward(const Tensor& x, const QuantSpec& spec, const Tensor& upstream);

/// 2 * mean(|x|) / sqrt(q_pos), floored at 1e-8.
double init_scale(const Tensor& x, const QuantSpec& spec);

// QPW1: magic "QPW1", four u32 extents, u8 bit width, u8 signed flag, f64
// scale, then the codes as a little-endian bit stream of b-bit two's
// complement values (LSB first).

inline constexpr std::size_t kQpwHeaderBytes = 4 + 16 + 1 + 1 + 8;

/// ceil(count * bit_width / 8).
std::uint64_t packed_bytes(std::uint64_t count, int bit_width);

std::vector<std::uint8_t> pack_codes(const std::vector<std::int32_t>& codes, int bit_width);
std::vector<std::int32_t> unpack_codes(const std::vector<std::uint8_t>& bytes, std::size_t count, int bit_width,
                                       bool is_signed);

void write_qpw(std::ostream& os, const QTensor& q);
QTensor read_qpw(std::istream& is);
void save_qpw(const std::filesystem::path& path, const QTensor& q);
QTensor load_qpw(const std::filesystem::path& path);

}  // namespace qpose
