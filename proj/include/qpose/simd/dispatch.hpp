#pragma once

#include <string_view>

namespace qpose::simd {

enum class Backend { Scalar, Avx2 };

std::string_view name(Backend b);

/// True if the running CPU (and this build) can execute `b`.
bool supported(Backend b);

/// Best backend the running CPU supports, probed once.
Backend detected_backend();

/// Backend used by the dispatching kernels. Defaults to detected_backend().
Backend active_backend();

/// Override the dispatching backend process-wide. Throws std::invalid_argument
/// if `b` is not supported here.
void set_backend(Backend b);

class ScopedBackend {
public:
    explicit ScopedBackend(Backend b) : previous_(active_backend()) { set_backend(b); }
    ~ScopedBackend() { set_backend(previous_); }
    ScopedBackend(const ScopedBackend&) = delete;
    ScopedBackend& operator=(const ScopedBackend&) = delete;

private:
    Backend previous_;
};

}  // namespace qpose::simd
