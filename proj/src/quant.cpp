#include "qpose/quant.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <string>

#include "qpose/error.hpp"
#include "qpose/simd/conv_kernels.hpp"
#include "qpose/tensor_io.hpp"

namespace qpose {

double round_half_away(double v) { return std::round(v); }

QuantSpec QuantSpec::make(int bit_width, bool is_signed, double scale) {
    if (bit_width < 2 || bit_width > 8) {
        throw NumericError("quant: bit width " + std::to_string(bit_width) + " outside [2, 8]");
    }
    if (!(scale > 0.0) || !std::isfinite(scale)) {
        throw NumericError("quant: scale must be positive and finite");
    }
    QuantSpec s;
    s.bit_width = bit_width;
    s.is_signed = is_signed;
    if (is_signed) {
        s.q_neg = -(1 << (bit_width - 1));
        s.q_pos = (1 << (bit_width - 1)) - 1;
    } else {
        s.q_neg = 0;
        s.q_pos = (1 << bit_width) - 1;
    }
    s.scale = scale;
    return s;
}

std::int64_t QuantSpec::max_magnitude() const {
    return std::max<std::int64_t>(std::abs(static_cast<std::int64_t>(q_neg)), q_pos);
}

QTensor::QTensor(Dims dims, std::vector<std::int32_t> values, QuantSpec spec)
    : dims_(dims), values_(std::move(values)), spec_(spec) {
    if (values_.size() != dims_.numel()) throw ShapeError("QTensor: value count does not match extents");
    for (std::int32_t v : values_) {
        if (v < spec_.q_neg || v > spec_.q_pos) {
            throw NumericError("QTensor: code " + std::to_string(v) + " outside clip limits");
        }
    }
}

QTensor quantize(const Tensor& x, const QuantSpec& spec) {
    std::vector<std::int32_t> codes(x.numel());
    const double lo = spec.q_neg;
    const double hi = spec.q_pos;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double v = x[i];
        if (!std::isfinite(v)) throw NumericError("quantize: non-finite input");
        codes[i] = static_cast<std::int32_t>(round_half_away(std::clamp(v / spec.scale, lo, hi)));
    }
    return QTensor(x.dims(), std::move(codes), spec);
}

Tensor dequantize(const QTensor& q) {
    Tensor out(q.dims());
    for (std::size_t i = 0; i < q.numel(); ++i) out[i] = static_cast<double>(q.values()[i]) * q.spec().scale;
    return out;
}

Tensor dequantize(const IntTensor& acc) {
    Tensor out(acc.dims);
    for (std::size_t i = 0; i < acc.values.size(); ++i) out[i] = static_cast<double>(acc.values[i]) * acc.scale;
    return out;
}

bool needs_wide_accumulator(const QuantSpec& w, const QuantSpec& a, std::size_t kernel_volume) {
    const int log2_volume = kernel_volume <= 1 ? 0 : std::bit_width(kernel_volume - 1);
    return w.bit_width + a.bit_width + log2_volume > 30;
}

IntTensor qconv(const QTensor& w, const QTensor& a, std::size_t stride, std::size_t pad, AccumulatorPolicy policy) {
    const Dims& wd = w.dims();
    const ConvGeometry g{wd.c, wd.n, wd.h, wd.w, stride, pad};
    const Dims out_dims = conv_output_dims(a.dims(), g);
    const std::size_t volume = wd.c * wd.h * wd.w;

    // Exact worst-case magnitude of any accumulator value.
    const long double bound = static_cast<long double>(w.spec().max_magnitude()) *
                              static_cast<long double>(a.spec().max_magnitude()) * static_cast<long double>(volume);
    if (bound > static_cast<long double>(std::numeric_limits<std::int64_t>::max())) {
        throw OverflowError("qconv: accumulator bound exceeds 64 bits");
    }

    bool wide = false;
    switch (policy) {
        case AccumulatorPolicy::Auto: wide = needs_wide_accumulator(w.spec(), a.spec(), volume); break;
        case AccumulatorPolicy::Int32: wide = false; break;
        case AccumulatorPolicy::Int64: wide = true; break;
    }

    IntTensor out{out_dims, std::vector<std::int64_t>(out_dims.numel()), w.spec().scale * a.spec().scale, wide};
    const kernels::ConvShape s{a.dims().c, a.dims().h, a.dims().w, g.c_out, g.k_h, g.k_w, stride, pad, out_dims.h,
                               out_dims.w};
    const std::size_t per_image = g.c_out * out_dims.h * out_dims.w;
    if (wide) {
        for (std::size_t n = 0; n < out_dims.n; ++n) {
            kernels::qconv_i64(s, a.plane(n, 0), w.values().data(), out.values.data() + n * per_image);
        }
    } else {
        const bool fits = bound <= static_cast<long double>(std::numeric_limits<std::int32_t>::max());
        std::vector<std::int32_t> tmp(per_image);
        for (std::size_t n = 0; n < out_dims.n; ++n) {
            if (fits) {
                kernels::qconv_i32(s, a.plane(n, 0), w.values().data(), tmp.data());
            } else {
                kernels::qconv_i32_checked(s, a.plane(n, 0), w.values().data(), tmp.data());
            }
            std::copy(tmp.begin(), tmp.end(), out.values.begin() + static_cast<std::ptrdiff_t>(n * per_image));
        }
    }
    return out;
}

LsqGrads lsq_backward(const Tensor& x, const QuantSpec& spec, const Tensor& upstream) {
    if (x.dims() != upstream.dims()) throw ShapeError("lsq_backward: upstream extents differ from input");
    LsqGrads g{Tensor(x.dims()), 0.0};
    const double lo = spec.q_neg;
    const double hi = spec.q_pos;
    double acc = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double v = x[i] / spec.scale;
        double local = 0.0;
        if (v <= lo) {
            local = lo;
        } else if (v >= hi) {
            local = hi;
        } else {
            local = round_half_away(v) - v;
            g.grad_x[i] = upstream[i];
        }
        acc += upstream[i] * local;
    }
    const double normalizer = 1.0 / std::sqrt(static_cast<double>(x.numel()) * spec.q_pos);
    g.grad_scale = acc * normalizer;
    return g;
}

double init_scale(const Tensor& x, const QuantSpec& spec) {
    if (x.empty()) throw ShapeError("init_scale: empty tensor");
    double sum = 0.0;
    for (double v : x.data()) sum += std::abs(v);
    const double mean = sum / static_cast<double>(x.numel());
    return std::max(1e-8, 2.0 * mean / std::sqrt(static_cast<double>(spec.q_pos)));
}

std::uint64_t packed_bytes(std::uint64_t count, int bit_width) {
    return (count * static_cast<std::uint64_t>(bit_width) + 7) / 8;
}

std::vector<std::uint8_t> pack_codes(const std::vector<std::int32_t>& codes, int bit_width) {
    std::vector<std::uint8_t> out(packed_bytes(codes.size(), bit_width), 0);
    const std::uint32_t mask = (1u << bit_width) - 1u;
    std::size_t bit = 0;
    for (std::int32_t c : codes) {
        const std::uint32_t u = static_cast<std::uint32_t>(c) & mask;
        for (int b = 0; b < bit_width; ++b, ++bit) {
            if ((u >> b) & 1u) out[bit / 8] |= static_cast<std::uint8_t>(1u << (bit % 8));
        }
    }
    return out;
}

std::vector<std::int32_t> unpack_codes(const std::vector<std::uint8_t>& bytes, std::size_t count, int bit_width,
                                       bool is_signed) {
    if (bytes.size() != packed_bytes(count, bit_width)) throw FormatError("QPW1: packed payload has wrong length");
    std::vector<std::int32_t> out(count);
    std::size_t bit = 0;
    for (std::size_t i = 0; i < count; ++i) {
        std::uint32_t u = 0;
        for (int b = 0; b < bit_width; ++b, ++bit) {
            if ((bytes[bit / 8] >> (bit % 8)) & 1u) u |= (1u << b);
        }
        std::int32_t v = static_cast<std::int32_t>(u);
        if (is_signed && (u >> (bit_width - 1)) & 1u) v -= (1 << bit_width);
        out[i] = v;
    }
    return out;
}

void write_qpw(std::ostream& os, const QTensor& q) {
    io::write_magic(os, "QPW1");
    for (std::size_t e : q.dims().as_array()) io::write_u32(os, static_cast<std::uint32_t>(e));
    os.put(static_cast<char>(q.spec().bit_width));
    os.put(q.spec().is_signed ? 1 : 0);
    io::write_f64(os, q.spec().scale);
    const auto packed = pack_codes(q.values(), q.spec().bit_width);
    os.write(reinterpret_cast<const char*>(packed.data()), static_cast<std::streamsize>(packed.size()));
}

QTensor read_qpw(std::istream& is) {
    io::expect_magic(is, "QPW1");
    Dims d;
    d.n = io::read_u32(is);
    d.c = io::read_u32(is);
    d.h = io::read_u32(is);
    d.w = io::read_u32(is);
    const int bits = is.get();
    const int sign = is.get();
    if (!is || (sign != 0 && sign != 1)) throw FormatError("QPW1: bad header");
    const double scale = io::read_f64(is);
    QuantSpec spec;
    try {
        spec = QuantSpec::make(bits, sign == 1, scale);
    } catch (const NumericError& e) {
        throw FormatError(std::string("QPW1: ") + e.what());
    }
    std::vector<std::uint8_t> packed(packed_bytes(d.numel(), bits));
    if (!is.read(reinterpret_cast<char*>(packed.data()), static_cast<std::streamsize>(packed.size()))) {
        throw FormatError("QPW1: truncated payload");
    }
    return QTensor(d, unpack_codes(packed, d.numel(), bits, spec.is_signed), spec);
}

void save_qpw(const std::filesystem::path& path, const QTensor& q) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open " + path.string() + " for writing");
    write_qpw(os, q);
}

QTensor load_qpw(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path.string());
    return read_qpw(is);
}

}  // namespace qpose
