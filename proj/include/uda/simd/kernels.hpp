#pragma once

// Data-parallel inner loops used by the tensor core.
//
// Every kernel has a portable scalar reference in namespace `scalar`.
// Float kernels additionally have an AVX2+FMA variant that is selected at
// runtime when the CPU supports it. Double precision always runs the
// scalar reference; it only exists for the high-precision test mode.
//
// The backend can be pinned with the UDA_SIMD environment variable
// ("scalar" or "avx2") or programmatically with set_backend(). Results are
// bit-reproducible for a fixed backend; scalar and AVX2 agree to rounding.

#include <cstddef>
#include <string_view>

namespace uda::simd {

enum class Backend { scalar, avx2 };

std::string_view backend_name(Backend b);
bool backend_available(Backend b);
Backend active_backend();
// Throws std::invalid_argument if the backend is not available on this CPU.
void set_backend(Backend b);

// Row-major GEMM variants. `accumulate` adds into C instead of overwriting.
//   gemm_nn: C[m,n] (+)= A[m,k] * B[k,n]
//   gemm_nt: C[m,n] (+)= A[m,k] * B[n,k]^T
//   gemm_tn: C[m,n] (+)= A[k,m]^T * B[k,n]
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate);
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate);
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate);

// y += alpha * x
template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y);
template <typename T>
T dot(std::size_t n, const T* x, const T* y);
template <typename T>
T sum(std::size_t n, const T* x);

// out = x + y, out = x * y, out = alpha * x. `out` may alias an input.
template <typename T>
void add(std::size_t n, const T* x, const T* y, T* out);
template <typename T>
void mul(std::size_t n, const T* x, const T* y, T* out);
template <typename T>
void scale(std::size_t n, T alpha, const T* x, T* out);

// Leaky rectifier with slope `neg_slope` below zero (0 gives plain ReLU).
template <typename T>
void leaky_relu_forward(std::size_t n, T neg_slope, const T* x, T* out);
// grad_in += grad_out * (x > 0 ? 1 : neg_slope)
template <typename T>
void leaky_relu_backward(std::size_t n, T neg_slope, const T* x, const T* grad_out, T* grad_in);

// Direct entry points into each implementation, used by the equivalence
// tests and by the dispatchers above.
namespace scalar {
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate);
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate);
template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y);
template <typename T>
T dot(std::size_t n, const T* x, const T* y);
template <typename T>
T sum(std::size_t n, const T* x);
template <typename T>
void add(std::size_t n, const T* x, const T* y, T* out);
template <typename T>
void mul(std::size_t n, const T* x, const T* y, T* out);
template <typename T>
void scale(std::size_t n, T alpha, const T* x, T* out);
template <typename T>
void leaky_relu_forward(std::size_t n, T neg_slope, const T* x, T* out);
template <typename T>
void leaky_relu_backward(std::size_t n, T neg_slope, const T* x, const T* grad_out, T* grad_in);
}  // namespace scalar

namespace avx2 {
// Only defined on x86-64 builds; callers must check backend_available().
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c, bool accumulate);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c, bool accumulate);
void axpy(std::size_t n, float alpha, const float* x, float* y);
float dot(std::size_t n, const float* x, const float* y);
float sum(std::size_t n, const float* x);
void add(std::size_t n, const float* x, const float* y, float* out);
void mul(std::size_t n, const float* x, const float* y, float* out);
void scale(std::size_t n, float alpha, const float* x, float* out);
void leaky_relu_forward(std::size_t n, float neg_slope, const float* x, float* out);
void leaky_relu_backward(std::size_t n, float neg_slope, const float* x, const float* grad_out, float* grad_in);
}  // namespace avx2

}  // namespace uda::simd
