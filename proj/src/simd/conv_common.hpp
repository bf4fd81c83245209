#pragma once

#include "qpose/simd/conv_kernels.hpp"

namespace qpose::kernels::detail {

/// One output element, accumulated in the canonical (ci, kh, kw) order.
template <typename Acc, typename In, typename W>
Acc conv_element(const ConvShape& s, const In* in, const W* wco, std::size_t oh, std::size_t ow) {
    Acc acc = 0;
    const std::ptrdiff_t ih0 = static_cast<std::ptrdiff_t>(oh * s.stride) - static_cast<std::ptrdiff_t>(s.pad);
    const std::ptrdiff_t iw0 = static_cast<std::ptrdiff_t>(ow * s.stride) - static_cast<std::ptrdiff_t>(s.pad);
    const auto H = static_cast<std::ptrdiff_t>(s.h);
    const auto Wd = static_cast<std::ptrdiff_t>(s.w);
    for (std::size_t ci = 0; ci < s.c_in; ++ci) {
        const In* plane = in + ci * s.h * s.w;
        const W* wk = wco + ci * s.k_h * s.k_w;
        for (std::size_t kh = 0; kh < s.k_h; ++kh) {
            const std::ptrdiff_t ih = ih0 + static_cast<std::ptrdiff_t>(kh);
            if (ih < 0 || ih >= H) continue;
            const In* row = plane + ih * Wd;
            for (std::size_t kw = 0; kw < s.k_w; ++kw) {
                const std::ptrdiff_t iw = iw0 + static_cast<std::ptrdiff_t>(kw);
                if (iw < 0 || iw >= Wd) continue;
                acc += static_cast<Acc>(wk[kh * s.k_w + kw]) * static_cast<Acc>(row[iw]);
            }
        }
    }
    return acc;
}

template <typename Acc, typename In, typename W, typename Out>
void conv_scalar(const ConvShape& s, const In* in, const W* weight, Out* out) {
    const std::size_t wstride = s.c_in * s.k_h * s.k_w;
    for (std::size_t co = 0; co < s.c_out; ++co) {
        const W* wco = weight + co * wstride;
        Out* oplane = out + co * s.h_out * s.w_out;
        for (std::size_t oh = 0; oh < s.h_out; ++oh) {
            for (std::size_t ow = 0; ow < s.w_out; ++ow) {
                oplane[oh * s.w_out + ow] = static_cast<Out>(conv_element<Acc>(s, in, wco, oh, ow));
            }
        }
    }
}

}  // namespace qpose::kernels::detail
