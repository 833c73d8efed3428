// Compiled with -mavx2 -mfma. Only raw pointers and intrinsics here: no
// inline library templates may be instantiated in this translation unit, so
// the linker can never pick an AVX2 copy of a shared inline function.

#include "uda/simd/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

namespace uda::simd::avx2 {
namespace {

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  const __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 shuf = _mm_movehdup_ps(lo);
  __m128 sums = _mm_add_ps(lo, shuf);
  shuf = _mm_movehl_ps(shuf, sums);
  sums = _mm_add_ss(sums, shuf);
  return _mm_cvtss_f32(sums);
}

// 4 rows x 16 columns of C held in registers across the k loop.
inline void kernel_4x16(std::size_t n, std::size_t k, const float* a, const float* b, float* c) {
  __m256 c00 = _mm256_loadu_ps(c), c01 = _mm256_loadu_ps(c + 8);
  __m256 c10 = _mm256_loadu_ps(c + n), c11 = _mm256_loadu_ps(c + n + 8);
  __m256 c20 = _mm256_loadu_ps(c + 2 * n), c21 = _mm256_loadu_ps(c + 2 * n + 8);
  __m256 c30 = _mm256_loadu_ps(c + 3 * n), c31 = _mm256_loadu_ps(c + 3 * n + 8);
  for (std::size_t p = 0; p < k; ++p) {
    const __m256 b0 = _mm256_loadu_ps(b + p * n);
    const __m256 b1 = _mm256_loadu_ps(b + p * n + 8);
    __m256 av = _mm256_broadcast_ss(a + p);
    c00 = _mm256_fmadd_ps(av, b0, c00);
    c01 = _mm256_fmadd_ps(av, b1, c01);
    av = _mm256_broadcast_ss(a + k + p);
    c10 = _mm256_fmadd_ps(av, b0, c10);
    c11 = _mm256_fmadd_ps(av, b1, c11);
    av = _mm256_broadcast_ss(a + 2 * k + p);
    c20 = _mm256_fmadd_ps(av, b0, c20);
    c21 = _mm256_fmadd_ps(av, b1, c21);
    av = _mm256_broadcast_ss(a + 3 * k + p);
    c30 = _mm256_fmadd_ps(av, b0, c30);
    c31 = _mm256_fmadd_ps(av, b1, c31);
  }
  _mm256_storeu_ps(c, c00);
  _mm256_storeu_ps(c + 8, c01);
  _mm256_storeu_ps(c + n, c10);
  _mm256_storeu_ps(c + n + 8, c11);
  _mm256_storeu_ps(c + 2 * n, c20);
  _mm256_storeu_ps(c + 2 * n + 8, c21);
  _mm256_storeu_ps(c + 3 * n, c30);
  _mm256_storeu_ps(c + 3 * n + 8, c31);
}

inline void kernel_1x8(std::size_t n, std::size_t k, const float* a, const float* b, float* c) {
  __m256 acc = _mm256_loadu_ps(c);
  for (std::size_t p = 0; p < k; ++p) {
    acc = _mm256_fmadd_ps(_mm256_broadcast_ss(a + p), _mm256_loadu_ps(b + p * n), acc);
  }
  _mm256_storeu_ps(c, acc);
}

inline void kernel_1x1(std::size_t n, std::size_t k, const float* a, const float* b, float* c) {
  float acc = *c;
  for (std::size_t p = 0; p < k; ++p) acc += a[p] * b[p * n];
  *c = acc;
}

}  // namespace

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c, bool accumulate) {
  if (!accumulate) {
    for (std::size_t i = 0; i < m * n; ++i) c[i] = 0.0f;
  }
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const float* ablk = a + i * k;
    float* cblk = c + i * n;
    std::size_t j = 0;
    for (; j + 16 <= n; j += 16) kernel_4x16(n, k, ablk, b + j, cblk + j);
    for (std::size_t r = 0; r < 4; ++r) {
      std::size_t jj = j;
      for (; jj + 8 <= n; jj += 8) kernel_1x8(n, k, ablk + r * k, b + jj, cblk + r * n + jj);
      for (; jj < n; ++jj) kernel_1x1(n, k, ablk + r * k, b + jj, cblk + r * n + jj);
    }
  }
  for (; i < m; ++i) {
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8) kernel_1x8(n, k, a + i * k, b + j, c + i * n + j);
    for (; j < n; ++j) kernel_1x1(n, k, a + i * k, b + j, c + i * n + j);
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const float d = dot(k, a + i * k, b + j * k);
      c[i * n + j] = accumulate ? c[i * n + j] + d : d;
    }
  }
}

void axpy(std::size_t n, float alpha, const float* x, float* y) {
  const __m256 av = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

float dot(std::size_t n, const float* x, const float* y) {
  __m256 acc0 = _mm256_setzero_ps();
  __m256 acc1 = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc0);
    acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i + 8), _mm256_loadu_ps(y + i + 8), acc1);
  }
  for (; i + 8 <= n; i += 8) acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc0);
  float acc = hsum(_mm256_add_ps(acc0, acc1));
  for (; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

float sum(std::size_t n, const float* x) {
  __m256 acc0 = _mm256_setzero_ps();
  __m256 acc1 = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    acc0 = _mm256_add_ps(_mm256_loadu_ps(x + i), acc0);
    acc1 = _mm256_add_ps(_mm256_loadu_ps(x + i + 8), acc1);
  }
  for (; i + 8 <= n; i += 8) acc0 = _mm256_add_ps(_mm256_loadu_ps(x + i), acc0);
  float acc = hsum(_mm256_add_ps(acc0, acc1));
  for (; i < n; ++i) acc += x[i];
  return acc;
}

void add(std::size_t n, const float* x, const float* y, float* out) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) out[i] = x[i] + y[i];
}

void mul(std::size_t n, const float* x, const float* y, float* out) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) out[i] = x[i] * y[i];
}

void scale(std::size_t n, float alpha, const float* x, float* out) {
  const __m256 av = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(out + i, _mm256_mul_ps(av, _mm256_loadu_ps(x + i)));
  for (; i < n; ++i) out[i] = alpha * x[i];
}

void leaky_relu_forward(std::size_t n, float neg_slope, const float* x, float* out) {
  const __m256 slope = _mm256_set1_ps(neg_slope);
  const __m256 zero = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 v = _mm256_loadu_ps(x + i);
    const __m256 pos = _mm256_cmp_ps(v, zero, _CMP_GT_OQ);
    _mm256_storeu_ps(out + i, _mm256_blendv_ps(_mm256_mul_ps(slope, v), v, pos));
  }
  for (; i < n; ++i) out[i] = x[i] > 0.0f ? x[i] : neg_slope * x[i];
}

void leaky_relu_backward(std::size_t n, float neg_slope, const float* x, const float* grad_out, float* grad_in) {
  const __m256 slope = _mm256_set1_ps(neg_slope);
  const __m256 zero = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 pos = _mm256_cmp_ps(_mm256_loadu_ps(x + i), zero, _CMP_GT_OQ);
    const __m256 g = _mm256_loadu_ps(grad_out + i);
    const __m256 local = _mm256_blendv_ps(_mm256_mul_ps(slope, g), g, pos);
    _mm256_storeu_ps(grad_in + i, _mm256_add_ps(_mm256_loadu_ps(grad_in + i), local));
  }
  for (; i < n; ++i) grad_in[i] += x[i] > 0.0f ? grad_out[i] : neg_slope * grad_out[i];
}

}  // namespace uda::simd::avx2

#else

// Non-x86 builds: backend_available(Backend::avx2) is false, so these are
// never selected. They forward to the reference loops to satisfy the linker.
namespace uda::simd::avx2 {
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c, bool acc) {
  scalar::gemm_nn(m, n, k, a, b, c, acc);
}
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c, bool acc) {
  scalar::gemm_nt(m, n, k, a, b, c, acc);
}
void axpy(std::size_t n, float alpha, const float* x, float* y) { scalar::axpy(n, alpha, x, y); }
float dot(std::size_t n, const float* x, const float* y) { return scalar::dot(n, x, y); }
float sum(std::size_t n, const float* x) { return scalar::sum(n, x); }
void add(std::size_t n, const float* x, const float* y, float* out) { scalar::add(n, x, y, out); }
void mul(std::size_t n, const float* x, const float* y, float* out) { scalar::mul(n, x, y, out); }
void scale(std::size_t n, float alpha, const float* x, float* out) { scalar::scale(n, alpha, x, out); }
void leaky_relu_forward(std::size_t n, float s, const float* x, float* out) { scalar::leaky_relu_forward(n, s, x, out); }
void leaky_relu_backward(std::size_t n, float s, const float* x, const float* g, float* gi) {
  scalar::leaky_relu_backward(n, s, x, g, gi);
}
}  // namespace uda::simd::avx2

#endif
