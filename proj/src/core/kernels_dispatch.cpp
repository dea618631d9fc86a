#include "prefmod/core/kernels.hpp"

#include <atomic>
#include <stdexcept>
#include <string>

namespace prefmod::kernels {

namespace {

Backend detect() noexcept {
#if PREFMOD_HAVE_AVX2_KERNELS && (defined(__GNUC__) || defined(__clang__))
    __builtin_cpu_init();
    if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) return Backend::Avx2;
#endif
    return Backend::Scalar;
}

std::atomic<Backend>& active() noexcept {
    static std::atomic<Backend> backend{detect()};
    return backend;
}

}  // namespace

Backend detected_backend() noexcept {
    static const Backend backend = detect();
    return backend;
}

Backend active_backend() noexcept { return active().load(std::memory_order_relaxed); }

bool backend_supported(Backend backend) noexcept {
    return backend == Backend::Scalar || detected_backend() == Backend::Avx2;
}

void set_backend(Backend backend) {
    if (!backend_supported(backend)) {
        throw std::invalid_argument("kernel backend '" + std::string(backend_name(backend)) +
                                    "' is not supported on this CPU");
    }
    active().store(backend, std::memory_order_relaxed);
}

std::string_view backend_name(Backend backend) noexcept {
    switch (backend) {
        case Backend::Scalar: return "scalar";
        case Backend::Avx2: return "avx2";
    }
    return "unknown";
}

ScopedBackend::ScopedBackend(Backend backend) : previous_(active_backend()) { set_backend(backend); }
ScopedBackend::~ScopedBackend() { active().store(previous_, std::memory_order_relaxed); }

#if PREFMOD_HAVE_AVX2_KERNELS
#define PREFMOD_DISPATCH(fn, ...)                                                    \
    (active_backend() == Backend::Avx2 ? avx2::fn(__VA_ARGS__) : scalar::fn(__VA_ARGS__))
#else
#define PREFMOD_DISPATCH(fn, ...) scalar::fn(__VA_ARGS__)
#endif

void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
          const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
    if (m == 0 || n == 0) return;
    PREFMOD_DISPATCH(gemm, m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

void axpy(std::size_t n, double alpha, const double* x, double* y) {
    PREFMOD_DISPATCH(axpy, n, alpha, x, y);
}
void add(std::size_t n, const double* a, const double* b, double* out) {
    PREFMOD_DISPATCH(add, n, a, b, out);
}
void sub(std::size_t n, const double* a, const double* b, double* out) {
    PREFMOD_DISPATCH(sub, n, a, b, out);
}
void mul(std::size_t n, const double* a, const double* b, double* out) {
    PREFMOD_DISPATCH(mul, n, a, b, out);
}
void mul_acc(std::size_t n, const double* a, const double* b, double* y) {
    PREFMOD_DISPATCH(mul_acc, n, a, b, y);
}
void scale(std::size_t n, double alpha, const double* x, double* out) {
    PREFMOD_DISPATCH(scale, n, alpha, x, out);
}
double dot(std::size_t n, const double* a, const double* b) { return PREFMOD_DISPATCH(dot, n, a, b); }
double sum(std::size_t n, const double* x) { return PREFMOD_DISPATCH(sum, n, x); }

#undef PREFMOD_DISPATCH

}  // namespace prefmod::kernels
