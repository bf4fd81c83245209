// Compiled with -mavx2; only reached when the CPU reports AVX2 support.
#include "conv_common.hpp"
#include "qpose/simd/conv_kernels.hpp"

#ifdef QPOSE_HAVE_AVX2_KERNELS

#include <immintrin.h>

namespace qpose::kernels {
namespace {

inline __m256d load4_f64(const double* p, std::size_t stride) {
    if (stride == 1) return _mm256_loadu_pd(p);
    return _mm256_set_pd(p[3 * stride], p[2 * stride], p[stride], p[0]);
}

inline __m256i load8_i32(const std::int32_t* p, std::size_t stride) {
    if (stride == 1) return _mm256_loadu_si256(reinterpret_cast<const __m256i*>(p));
    const auto s = static_cast<std::ptrdiff_t>(stride);
    return _mm256_set_epi32(p[7 * s], p[6 * s], p[5 * s], p[4 * s], p[3 * s], p[2 * s], p[s], p[0]);
}

// Four int32 lanes sign-extended to int64.
inline __m256i load4_i32_as_i64(const std::int32_t* p, std::size_t stride) {
    __m128i v;
    if (stride == 1) {
        v = _mm_loadu_si128(reinterpret_cast<const __m128i*>(p));
    } else {
        const auto s = static_cast<std::ptrdiff_t>(stride);
        v = _mm_set_epi32(p[3 * s], p[2 * s], p[s], p[0]);
    }
    return _mm256_cvtepi32_epi64(v);
}

template <typename Acc, typename In, typename Out>
void boundary_columns(const ConvShape& s, const In* in, const In* wco, Out* orow, std::size_t oh, ColumnRange r) {
    for (std::size_t ow = 0; ow < r.lo; ++ow) orow[ow] = static_cast<Out>(detail::conv_element<Acc>(s, in, wco, oh, ow));
    for (std::size_t ow = r.hi; ow < s.w_out; ++ow) {
        orow[ow] = static_cast<Out>(detail::conv_element<Acc>(s, in, wco, oh, ow));
    }
}

}  // namespace

void conv2d_f64_avx2(const ConvShape& s, const double* in, const double* weight, double* out) {
    const ColumnRange r = interior_columns(s);
    const std::size_t wstride = s.c_in * s.k_h * s.k_w;
    const auto H = static_cast<std::ptrdiff_t>(s.h);
    for (std::size_t co = 0; co < s.c_out; ++co) {
        const double* wco = weight + co * wstride;
        for (std::size_t oh = 0; oh < s.h_out; ++oh) {
            double* orow = out + (co * s.h_out + oh) * s.w_out;
            boundary_columns<double>(s, in, wco, orow, oh, r);
            const std::ptrdiff_t ih0 = static_cast<std::ptrdiff_t>(oh * s.stride) - static_cast<std::ptrdiff_t>(s.pad);
            std::size_t ow = r.lo;
            for (; ow + 4 <= r.hi; ow += 4) {
                __m256d acc = _mm256_setzero_pd();
                const std::size_t iw0 = ow * s.stride - s.pad;
                for (std::size_t ci = 0; ci < s.c_in; ++ci) {
                    const double* plane = in + ci * s.h * s.w;
                    const double* wk = wco + ci * s.k_h * s.k_w;
                    for (std::size_t kh = 0; kh < s.k_h; ++kh) {
                        const std::ptrdiff_t ih = ih0 + static_cast<std::ptrdiff_t>(kh);
                        if (ih < 0 || ih >= H) continue;
                        const double* row = plane + static_cast<std::size_t>(ih) * s.w + iw0;
                        for (std::size_t kw = 0; kw < s.k_w; ++kw) {
                            const __m256d wv = _mm256_set1_pd(wk[kh * s.k_w + kw]);
                            acc = _mm256_add_pd(acc, _mm256_mul_pd(wv, load4_f64(row + kw, s.stride)));
                        }
                    }
                }
                _mm256_storeu_pd(orow + ow, acc);
            }
            for (; ow < r.hi; ++ow) orow[ow] = detail::conv_element<double>(s, in, wco, oh, ow);
        }
    }
}

void qconv_i32_avx2(const ConvShape& s, const std::int32_t* in, const std::int32_t* weight, std::int32_t* out) {
    const ColumnRange r = interior_columns(s);
    const std::size_t wstride = s.c_in * s.k_h * s.k_w;
    const auto H = static_cast<std::ptrdiff_t>(s.h);
    for (std::size_t co = 0; co < s.c_out; ++co) {
        const std::int32_t* wco = weight + co * wstride;
        for (std::size_t oh = 0; oh < s.h_out; ++oh) {
            std::int32_t* orow = out + (co * s.h_out + oh) * s.w_out;
            boundary_columns<std::int32_t>(s, in, wco, orow, oh, r);
            const std::ptrdiff_t ih0 = static_cast<std::ptrdiff_t>(oh * s.stride) - static_cast<std::ptrdiff_t>(s.pad);
            std::size_t ow = r.lo;
            for (; ow + 8 <= r.hi; ow += 8) {
                __m256i acc = _mm256_setzero_si256();
                const std::size_t iw0 = ow * s.stride - s.pad;
                for (std::size_t ci = 0; ci < s.c_in; ++ci) {
                    const std::int32_t* plane = in + ci * s.h * s.w;
                    const std::int32_t* wk = wco + ci * s.k_h * s.k_w;
                    for (std::size_t kh = 0; kh < s.k_h; ++kh) {
                        const std::ptrdiff_t ih = ih0 + static_cast<std::ptrdiff_t>(kh);
                        if (ih < 0 || ih >= H) continue;
                        const std::int32_t* row = plane + static_cast<std::size_t>(ih) * s.w + iw0;
                        for (std::size_t kw = 0; kw < s.k_w; ++kw) {
                            const __m256i wv = _mm256_set1_epi32(wk[kh * s.k_w + kw]);
                            acc = _mm256_add_epi32(acc, _mm256_mullo_epi32(wv, load8_i32(row + kw, s.stride)));
                        }
                    }
                }
                _mm256_storeu_si256(reinterpret_cast<__m256i*>(orow + ow), acc);
            }
            for (; ow < r.hi; ++ow) orow[ow] = detail::conv_element<std::int32_t>(s, in, wco, oh, ow);
        }
    }
}

void qconv_i64_avx2(const ConvShape& s, const std::int32_t* in, const std::int32_t* weight, std::int64_t* out) {
    const ColumnRange r = interior_columns(s);
    const std::size_t wstride = s.c_in * s.k_h * s.k_w;
    const auto H = static_cast<std::ptrdiff_t>(s.h);
    for (std::size_t co = 0; co < s.c_out; ++co) {
        const std::int32_t* wco = weight + co * wstride;
        for (std::size_t oh = 0; oh < s.h_out; ++oh) {
            std::int64_t* orow = out + (co * s.h_out + oh) * s.w_out;
            boundary_columns<std::int64_t>(s, in, wco, orow, oh, r);
            const std::ptrdiff_t ih0 = static_cast<std::ptrdiff_t>(oh * s.stride) - static_cast<std::ptrdiff_t>(s.pad);
            std::size_t ow = r.lo;
            for (; ow + 4 <= r.hi; ow += 4) {
                __m256i acc = _mm256_setzero_si256();
                const std::size_t iw0 = ow * s.stride - s.pad;
                for (std::size_t ci = 0; ci < s.c_in; ++ci) {
                    const std::int32_t* plane = in + ci * s.h * s.w;
                    const std::int32_t* wk = wco + ci * s.k_h * s.k_w;
                    for (std::size_t kh = 0; kh < s.k_h; ++kh) {
                        const std::ptrdiff_t ih = ih0 + static_cast<std::ptrdiff_t>(kh);
                        if (ih < 0 || ih >= H) continue;
                        const std::int32_t* row = plane + static_cast<std::size_t>(ih) * s.w + iw0;
                        for (std::size_t kw = 0; kw < s.k_w; ++kw) {
                            // _mm256_mul_epi32 multiplies the signed low halves of each 64-bit lane.
                            const __m256i wv = _mm256_set1_epi64x(wk[kh * s.k_w + kw]);
                            acc = _mm256_add_epi64(acc, _mm256_mul_epi32(wv, load4_i32_as_i64(row + kw, s.stride)));
                        }
                    }
                }
                _mm256_storeu_si256(reinterpret_cast<__m256i*>(orow + ow), acc);
            }
            for (; ow < r.hi; ++ow) orow[ow] = detail::conv_element<std::int64_t>(s, in, wco, oh, ow);
        }
    }
}

}  // namespace qpose::kernels

#endif  // QPOSE_HAVE_AVX2_KERNELS
