#include "qpose/simd/dispatch.hpp"

#include <atomic>
#include <stdexcept>
#include <string>

#include "qpose/simd/conv_kernels.hpp"

namespace qpose::simd {
namespace {

Backend probe() {
#ifdef QPOSE_HAVE_AVX2_KERNELS
    __builtin_cpu_init();
    if (__builtin_cpu_supports("avx2")) return Backend::Avx2;
#endif
    return Backend::Scalar;
}

std::atomic<Backend>& active() {
    static std::atomic<Backend> backend{detected_backend()};
    return backend;
}

}  // namespace

std::string_view name(Backend b) {
    switch (b) {
        case Backend::Scalar: return "scalar";
        case Backend::Avx2: return "avx2";
    }
    return "unknown";
}

Backend detected_backend() {
    static const Backend best = probe();
    return best;
}

bool supported(Backend b) { return b == Backend::Scalar || b == detected_backend(); }

Backend active_backend() { return active().load(std::memory_order_relaxed); }

void set_backend(Backend b) {
    if (!supported(b)) {
        throw std::invalid_argument("SIMD backend '" + std::string(name(b)) + "' is not supported on this CPU");
    }
    active().store(b, std::memory_order_relaxed);
}

}  // namespace qpose::simd
