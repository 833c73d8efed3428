#include "uda/simd/kernels.hpp"

#include <algorithm>

namespace uda::simd::scalar {

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T(0));
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T(0)) continue;
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const T d = dot(k, a + i * k, b + j * k);
      c[i * n + j] = accumulate ? c[i * n + j] + d : d;
    }
  }
}

template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
T dot(std::size_t n, const T* x, const T* y) {
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

template <typename T>
T sum(std::size_t n, const T* x) {
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

template <typename T>
void add(std::size_t n, const T* x, const T* y, T* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] + y[i];
}

template <typename T>
void mul(std::size_t n, const T* x, const T* y, T* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * y[i];
}

template <typename T>
void scale(std::size_t n, T alpha, const T* x, T* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = alpha * x[i];
}

template <typename T>
void leaky_relu_forward(std::size_t n, T neg_slope, const T* x, T* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > T(0) ? x[i] : neg_slope * x[i];
}

template <typename T>
void leaky_relu_backward(std::size_t n, T neg_slope, const T* x, const T* grad_out, T* grad_in) {
  for (std::size_t i = 0; i < n; ++i) grad_in[i] += x[i] > T(0) ? grad_out[i] : neg_slope * grad_out[i];
}

#define UDA_INSTANTIATE_SCALAR(T)                                                                         \
  template void gemm_nn<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool);          \
  template void gemm_nt<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool);          \
  template void axpy<T>(std::size_t, T, const T*, T*);                                                    \
  template T dot<T>(std::size_t, const T*, const T*);                                                     \
  template T sum<T>(std::size_t, const T*);                                                               \
  template void add<T>(std::size_t, const T*, const T*, T*);                                              \
  template void mul<T>(std::size_t, const T*, const T*, T*);                                              \
  template void scale<T>(std::size_t, T, const T*, T*);                                                   \
  template void leaky_relu_forward<T>(std::size_t, T, const T*, T*);                                      \
  template void leaky_relu_backward<T>(std::size_t, T, const T*, const T*, T*);

UDA_INSTANTIATE_SCALAR(float)
UDA_INSTANTIATE_SCALAR(double)

#undef UDA_INSTANTIATE_SCALAR

}  // namespace uda::simd::scalar
