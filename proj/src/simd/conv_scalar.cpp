#include <limits>
#include <string>

#include "conv_common.hpp"
#include "qpose/error.hpp"
#include "qpose/simd/conv_kernels.hpp"
#include "qpose/simd/dispatch.hpp"

namespace qpose::kernels {

ColumnRange interior_columns(const ConvShape& s) {
    // ow is interior iff ow*stride >= pad and ow*stride - pad + k_w <= w.
    const std::size_t lo = (s.pad + s.stride - 1) / s.stride;
    if (s.w + s.pad < s.k_w) return {0, 0};
    std::size_t hi = (s.w + s.pad - s.k_w) / s.stride + 1;
    if (hi > s.w_out) hi = s.w_out;
    if (lo >= hi) return {0, 0};
    return {lo, hi};
}

void conv2d_f64_scalar(const ConvShape& s, const double* in, const double* weight, double* out) {
    detail::conv_scalar<double>(s, in, weight, out);
}

void qconv_i32_scalar(const ConvShape& s, const std::int32_t* in, const std::int32_t* weight, std::int32_t* out) {
    detail::conv_scalar<std::int32_t>(s, in, weight, out);
}

void qconv_i64_scalar(const ConvShape& s, const std::int32_t* in, const std::int32_t* weight, std::int64_t* out) {
    detail::conv_scalar<std::int64_t>(s, in, weight, out);
}

void qconv_i32_checked(const ConvShape& s, const std::int32_t* in, const std::int32_t* weight, std::int32_t* out) {
    const std::size_t wstride = s.c_in * s.k_h * s.k_w;
    const auto H = static_cast<std::ptrdiff_t>(s.h);
    const auto Wd = static_cast<std::ptrdiff_t>(s.w);
    for (std::size_t co = 0; co < s.c_out; ++co) {
        const std::int32_t* wco = weight + co * wstride;
        for (std::size_t oh = 0; oh < s.h_out; ++oh) {
            for (std::size_t ow = 0; ow < s.w_out; ++ow) {
                std::int32_t acc = 0;
                const std::ptrdiff_t ih0 = static_cast<std::ptrdiff_t>(oh * s.stride) - static_cast<std::ptrdiff_t>(s.pad);
                const std::ptrdiff_t iw0 = static_cast<std::ptrdiff_t>(ow * s.stride) - static_cast<std::ptrdiff_t>(s.pad);
                for (std::size_t ci = 0; ci < s.c_in; ++ci) {
                    for (std::size_t kh = 0; kh < s.k_h; ++kh) {
                        const std::ptrdiff_t ih = ih0 + static_cast<std::ptrdiff_t>(kh);
                        if (ih < 0 || ih >= H) continue;
                        for (std::size_t kw = 0; kw < s.k_w; ++kw) {
                            const std::ptrdiff_t iw = iw0 + static_cast<std::ptrdiff_t>(kw);
                            if (iw < 0 || iw >= Wd) continue;
                            std::int32_t prod = 0;
                            const std::int32_t x = in[(ci * s.h + static_cast<std::size_t>(ih)) * s.w + static_cast<std::size_t>(iw)];
                            if (__builtin_mul_overflow(wco[(ci * s.k_h + kh) * s.k_w + kw], x, &prod) ||
                                __builtin_add_overflow(acc, prod, &acc)) {
                                throw OverflowError("qconv: int32 accumulator overflow at output channel " +
                                                    std::to_string(co));
                            }
                        }
                    }
                }
                out[(co * s.h_out + oh) * s.w_out + ow] = acc;
            }
        }
    }
}

void conv2d_f64(const ConvShape& s, const double* in, const double* weight, double* out) {
#ifdef QPOSE_HAVE_AVX2_KERNELS
    if (simd::active_backend() == simd::Backend::Avx2) return conv2d_f64_avx2(s, in, weight, out);
#endif
    conv2d_f64_scalar(s, in, weight, out);
}

void qconv_i32(const ConvShape& s, const std::int32_t* in, const std::int32_t* weight, std::int32_t* out) {
#ifdef QPOSE_HAVE_AVX2_KERNELS
    if (simd::active_backend() == simd::Backend::Avx2) return qconv_i32_avx2(s, in, weight, out);
#endif
    qconv_i32_scalar(s, in, weight, out);
}

void qconv_i64(const ConvShape& s, const std::int32_t* in, const std::int32_t* weight, std::int64_t* out) {
#ifdef QPOSE_HAVE_AVX2_KERNELS
    if (simd::active_backend() == simd::Backend::Avx2) return qconv_i64_avx2(s, in, weight, out);
#endif
    qconv_i64_scalar(s, in, weight, out);
}

}  // namespace qpose::kernels
