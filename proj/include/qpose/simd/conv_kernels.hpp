#pragma once

#include <cstddef>
#include <cstdint>

// Direct convolution inner loops for a single image, one variant per backend.
//
// Every variant accumulates each output element in the same order
// (input channel, then kernel row, then kernel column, skipping taps that fall
// into the zero padding), so the float variants are bit-identical to the
// scalar reference and the integer variants are exactly equal.

namespace qpose::kernels {

struct ConvShape {
    std::size_t c_in = 0;
    std::size_t h = 0;
    std::size_t w = 0;
    std::size_t c_out = 0;
    std::size_t k_h = 1;
    std::size_t k_w = 1;
    std::size_t stride = 1;
    std::size_t pad = 0;
    std::size_t h_out = 0;
    std::size_t w_out = 0;
};

/// Output columns [lo, hi) whose horizontal taps never touch padding.
struct ColumnRange {
    std::size_t lo = 0;
    std::size_t hi = 0;
};
ColumnRange interior_columns(const ConvShape& s);

// in: (c_in, h, w) planes; weight: (c_out, c_in, k_h, k_w); out: (c_out, h_out, w_out).
void conv2d_f64_scalar(const ConvShape& s, const double* in, const double* weight, double* out);
void qconv_i32_scalar(const ConvShape& s, const std::int32_t* in, const std::int32_t* weight, std::int32_t* out);
void qconv_i64_scalar(const ConvShape& s, const std::int32_t* in, const std::int32_t* weight, std::int64_t* out);

/// Scalar int32 accumulation that throws OverflowError instead of wrapping.
void qconv_i32_checked(const ConvShape& s, const std::int32_t* in, const std::int32_t* weight, std::int32_t* out);

#if defined(__x86_64__) || defined(_M_X64)
#define QPOSE_HAVE_AVX2_KERNELS 1
void conv2d_f64_avx2(const ConvShape& s, const double* in, const double* weight, double* out);
void qconv_i32_avx2(const ConvShape& s, const std::int32_t* in, const std::int32_t* weight, std::int32_t* out);
void qconv_i64_avx2(const ConvShape& s, const std::int32_t* in, const std::int32_t* weight, std::int64_t* out);
#endif

// Dispatch on simd::active_backend().
void conv2d_f64(const ConvShape& s, const double* in, const double* weight, double* out);
void qconv_i32(const ConvShape& s, const std::int32_t* in, const std::int32_t* weight, std::int32_t* out);
void qconv_i64(const ConvShape& s, const std::int32_t* in, const std::int32_t* weight, std::int64_t* out);

}  // namespace qpose::kernels
