#include "uda/simd/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <vector>

namespace uda::simd {
namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) && (defined(__GNUC__) || defined(__clang__))
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend initial_backend() {
  if (const char* env = std::getenv("UDA_SIMD")) {
    const std::string v(env);
    if (v == "scalar") return Backend::scalar;
    if (v == "avx2" && cpu_has_avx2()) return Backend::avx2;
  }
  return cpu_has_avx2() ? Backend::avx2 : Backend::scalar;
}

std::atomic<Backend>& backend_slot() {
  static std::atomic<Backend> slot{initial_backend()};
  return slot;
}

bool use_avx2() { return backend_slot().load(std::memory_order_relaxed) == Backend::avx2; }

}  // namespace

std::string_view backend_name(Backend b) { return b == Backend::avx2 ? "avx2" : "scalar"; }

bool backend_available(Backend b) { return b == Backend::scalar || cpu_has_avx2(); }

Backend active_backend() { return backend_slot().load(); }

void set_backend(Backend b) {
  if (!backend_available(b)) throw std::invalid_argument("SIMD backend not available: " + std::string(backend_name(b)));
  backend_slot().store(b);
}

// Double precision is the test mode and always runs the reference loops.

template <>
void gemm_nn<float>(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c, bool acc) {
  if (use_avx2()) return avx2::gemm_nn(m, n, k, a, b, c, acc);
  scalar::gemm_nn(m, n, k, a, b, c, acc);
}
template <>
void gemm_nn<double>(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
                     bool acc) {
  scalar::gemm_nn(m, n, k, a, b, c, acc);
}

template <>
void gemm_nt<float>(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c, bool acc) {
  if (use_avx2()) return avx2::gemm_nt(m, n, k, a, b, c, acc);
  scalar::gemm_nt(m, n, k, a, b, c, acc);
}
template <>
void gemm_nt<double>(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
                     bool acc) {
  scalar::gemm_nt(m, n, k, a, b, c, acc);
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  // A is stored k x m; transpose once and reuse the NN kernel.
  std::vector<T> at(m * k);
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t i = 0; i < m; ++i) at[i * k + p] = a[p * m + i];
  }
  gemm_nn<T>(m, n, k, at.data(), b, c, accumulate);
}
template void gemm_tn<float>(std::size_t, std::size_t, std::size_t, const float*, const float*, float*, bool);
template void gemm_tn<double>(std::size_t, std::size_t, std::size_t, const double*, const double*, double*, bool);

template <>
void axpy<float>(std::size_t n, float alpha, const float* x, float* y) {
  if (use_avx2()) return avx2::axpy(n, alpha, x, y);
  scalar::axpy(n, alpha, x, y);
}
template <>
void axpy<double>(std::size_t n, double alpha, const double* x, double* y) {
  scalar::axpy(n, alpha, x, y);
}

template <>
float dot<float>(std::size_t n, const float* x, const float* y) {
  return use_avx2() ? avx2::dot(n, x, y) : scalar::dot(n, x, y);
}
template <>
double dot<double>(std::size_t n, const double* x, const double* y) {
  return scalar::dot(n, x, y);
}

template <>
float sum<float>(std::size_t n, const float* x) {
  return use_avx2() ? avx2::sum(n, x) : scalar::sum(n, x);
}
template <>
double sum<double>(std::size_t n, const double* x) {
  return scalar::sum(n, x);
}

template <>
void add<float>(std::size_t n, const float* x, const float* y, float* out) {
  if (use_avx2()) return avx2::add(n, x, y, out);
  scalar::add(n, x, y, out);
}
template <>
void add<double>(std::size_t n, const double* x, const double* y, double* out) {
  scalar::add(n, x, y, out);
}

template <>
void mul<float>(std::size_t n, const float* x, const float* y, float* out) {
  if (use_avx2()) return avx2::mul(n, x, y, out);
  scalar::mul(n, x, y, out);
}
template <>
void mul<double>(std::size_t n, const double* x, const double* y, double* out) {
  scalar::mul(n, x, y, out);
}

template <>
void scale<float>(std::size_t n, float alpha, const float* x, float* out) {
  if (use_avx2()) return avx2::scale(n, alpha, x, out);
  scalar::scale(n, alpha, x, out);
}
template <>
void scale<double>(std::size_t n, double alpha, const double* x, double* out) {
  scalar::scale(n, alpha, x, out);
}

template <>
void leaky_relu_forward<float>(std::size_t n, float neg_slope, const float* x, float* out) {
  if (use_avx2()) return avx2::leaky_relu_forward(n, neg_slope, x, out);
  scalar::leaky_relu_forward(n, neg_slope, x, out);
}
template <>
void leaky_relu_forward<double>(std::size_t n, double neg_slope, const double* x, double* out) {
  scalar::leaky_relu_forward(n, neg_slope, x, out);
}

template <>
void leaky_relu_backward<float>(std::size_t n, float neg_slope, const float* x, const float* grad_out,
                                float* grad_in) {
  if (use_avx2()) return avx2::leaky_relu_backward(n, neg_slope, x, grad_out, grad_in);
  scalar::leaky_relu_backward(n, neg_slope, x, grad_out, grad_in);
}
template <>
void leaky_relu_backward<double>(std::size_t n, double neg_slope, const double* x, const double* grad_out,
                                 double* grad_in) {
  scalar::leaky_relu_backward(n, neg_slope, x, grad_out, grad_in);
}

}  // namespace uda::simd
