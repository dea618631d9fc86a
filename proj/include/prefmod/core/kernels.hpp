#pragma once

// Dense inner-loop kernels for 64-bit floats.
//
// Every kernel has a portable scalar reference implementation and, on x86-64,
// an AVX2+FMA variant. The active backend is picked once at startup from the
// CPU feature flags and can be forced for equivalence testing.
//
// Within one backend every output element is produced by the same operation
// sequence regardless of matrix height or row position, so a row computed as
// part of a large product is bit-identical to the same row computed alone.

#include <cstddef>
#include <string_view>

namespace prefmod::kernels {

enum class Backend { Scalar, Avx2 };

// Backend chosen by CPU detection.
Backend detected_backend() noexcept;
Backend active_backend() noexcept;
// Throws std::invalid_argument if the backend is not supported by this CPU.
void set_backend(Backend backend);
bool backend_supported(Backend backend) noexcept;
std::string_view backend_name(Backend backend) noexcept;

// RAII override of the active backend.
class ScopedBackend {
public:
    explicit ScopedBackend(Backend backend);
    ~ScopedBackend();
    ScopedBackend(const ScopedBackend&) = delete;
    ScopedBackend& operator=(const ScopedBackend&) = delete;

private:
    Backend previous_;
};

// c[m x n] (+)= a[m x k] * b[k x n], all row-major with explicit leading dims.
// When accumulate is false c is overwritten.
void gemm(std::size_t m, std::size_t n, std::size_t k,
          const double* a, std::size_t lda,
          const double* b, std::size_t ldb,
          double* c, std::size_t ldc, bool accumulate);

// y[i] += alpha * x[i]
void axpy(std::size_t n, double alpha, const double* x, double* y);
// out[i] = a[i] + b[i]
void add(std::size_t n, const double* a, const double* b, double* out);
// out[i] = a[i] - b[i]
void sub(std::size_t n, const double* a, const double* b, double* out);
// out[i] = a[i] * b[i]
void mul(std::size_t n, const double* a, const double* b, double* out);
// y[i] += a[i] * b[i]
void mul_acc(std::size_t n, const double* a, const double* b, double* y);
// out[i] = alpha * x[i]
void scale(std::size_t n, double alpha, const double* x, double* out);
double dot(std::size_t n, const double* a, const double* b);
double sum(std::size_t n, const double* x);

namespace scalar {
void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
          const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate);
void axpy(std::size_t n, double alpha, const double* x, double* y);
void add(std::size_t n, const double* a, const double* b, double* out);
void sub(std::size_t n, const double* a, const double* b, double* out);
void mul(std::size_t n, const double* a, const double* b, double* out);
void mul_acc(std::size_t n, const double* a, const double* b, double* y);
void scale(std::size_t n, double alpha, const double* x, double* out);
double dot(std::size_t n, const double* a, const double* b);
double sum(std::size_t n, const double* x);
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
#define PREFMOD_HAVE_AVX2_KERNELS 1
namespace avx2 {
void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
          const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate);
void axpy(std::size_t n, double alpha, const double* x, double* y);
void add(std::size_t n, const double* a, const double* b, double* out);
void sub(std::size_t n, const double* a, const double* b, double* out);
void mul(std::size_t n, const double* a, const double* b, double* out);
void mul_acc(std::size_t n, const double* a, const double* b, double* y);
void scale(std::size_t n, double alpha, const double* x, double* out);
double dot(std::size_t n, const double* a, const double* b);
double sum(std::size_t n, const double* x);
}  // namespace avx2
#else
#define PREFMOD_HAVE_AVX2_KERNELS 0
#endif

}  // namespace prefmod::kernels
