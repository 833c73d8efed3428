#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "uda/simd/kernels.hpp"
#include "uda/tensor/random.hpp"

using namespace uda;

namespace {

std::vector<float> random_vec(std::size_t n, Rng& rng) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return v;
}

// Naive triple loop in double; the independent reference for all GEMM paths.
std::vector<double> naive_gemm(std::size_t m, std::size_t n, std::size_t k, const std::vector<float>& a,
                               const std::vector<float>& b) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i * n + j] += double(a[i * k + p]) * b[p * n + j];
  return c;
}

struct BackendGuard {
  simd::Backend saved = simd::active_backend();
  ~BackendGuard() { simd::set_backend(saved); }
};

}  // namespace

TEST_CASE("scalar backend is always available") {
  CHECK(simd::backend_available(simd::Backend::scalar));
  CHECK(simd::backend_name(simd::Backend::avx2) == "avx2");
}

TEST_CASE("gemm variants match the naive triple loop on both backends") {
  BackendGuard guard;
  Rng rng(11);
  const std::size_t dims[][3] = {{1, 1, 1}, {4, 16, 3}, {5, 17, 9}, {7, 33, 27}, {16, 64, 72}, {3, 5, 130}};
  for (auto backend : {simd::Backend::scalar, simd::Backend::avx2}) {
    if (!simd::backend_available(backend)) continue;
    simd::set_backend(backend);
    for (const auto& d : dims) {
      const std::size_t m = d[0], n = d[1], k = d[2];
      const auto a = random_vec(m * k, rng);
      const auto b = random_vec(k * n, rng);
      const auto ref = naive_gemm(m, n, k, a, b);

      std::vector<float> c(m * n, 0.5f);
      simd::gemm_nn<float>(m, n, k, a.data(), b.data(), c.data(), false);
      for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-4));

      // Accumulating adds onto existing contents.
      std::vector<float> acc(m * n, 1.0f);
      simd::gemm_nn<float>(m, n, k, a.data(), b.data(), acc.data(), true);
      for (std::size_t i = 0; i < acc.size(); ++i) CHECK(acc[i] == doctest::Approx(ref[i] + 1.0).epsilon(1e-4));

      // NT: B supplied transposed.
      std::vector<float> bt(n * k);
      for (std::size_t p = 0; p < k; ++p)
        for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
      std::vector<float> cnt(m * n);
      simd::gemm_nt<float>(m, n, k, a.data(), bt.data(), cnt.data(), false);
      for (std::size_t i = 0; i < cnt.size(); ++i) CHECK(cnt[i] == doctest::Approx(ref[i]).epsilon(1e-4));

      // TN: A supplied transposed.
      std::vector<float> at(k * m);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) at[p * m + i] = a[i * k + p];
      std::vector<float> ctn(m * n);
      simd::gemm_tn<float>(m, n, k, at.data(), b.data(), ctn.data(), false);
      for (std::size_t i = 0; i < ctn.size(); ++i) CHECK(ctn[i] == doctest::Approx(ref[i]).epsilon(1e-4));
    }
  }
}

TEST_CASE("avx2 kernels agree with the scalar reference") {
  if (!simd::backend_available(simd::Backend::avx2)) return;
  Rng rng(3);
  for (std::size_t n : {0u, 1u, 7u, 8u, 9u, 15u, 16u, 17u, 31u, 100u, 1023u}) {
    const auto x = random_vec(n, rng);
    const auto y = random_vec(n, rng);
    CHECK(simd::avx2::dot(n, x.data(), y.data()) ==
          doctest::Approx(simd::scalar::dot(n, x.data(), y.data())).epsilon(1e-4).scale(1.0));
    CHECK(simd::avx2::sum(n, x.data()) == doctest::Approx(simd::scalar::sum(n, x.data())).epsilon(1e-4).scale(1.0));

    std::vector<float> s1(n), s2(n);
    simd::avx2::add(n, x.data(), y.data(), s1.data());
    simd::scalar::add(n, x.data(), y.data(), s2.data());
    CHECK(s1 == s2);
    simd::avx2::mul(n, x.data(), y.data(), s1.data());
    simd::scalar::mul(n, x.data(), y.data(), s2.data());
    CHECK(s1 == s2);
    simd::avx2::scale(n, 0.3f, x.data(), s1.data());
    simd::scalar::scale(n, 0.3f, x.data(), s2.data());
    CHECK(s1 == s2);
    simd::avx2::leaky_relu_forward(n, 0.2f, x.data(), s1.data());
    simd::scalar::leaky_relu_forward(n, 0.2f, x.data(), s2.data());
    CHECK(s1 == s2);

    std::vector<float> g1(y), g2(y);
    simd::avx2::leaky_relu_backward(n, 0.2f, x.data(), y.data(), g1.data());
    simd::scalar::leaky_relu_backward(n, 0.2f, x.data(), y.data(), g2.data());
    CHECK(g1 == g2);

    std::vector<float> a1(y), a2(y);
    simd::avx2::axpy(n, 1.5f, x.data(), a1.data());
    simd::scalar::axpy(n, 1.5f, x.data(), a2.data());
    for (std::size_t i = 0; i < n; ++i) CHECK(a1[i] == doctest::Approx(a2[i]).epsilon(1e-6));
  }
}

TEST_CASE("a fixed backend is bit-reproducible") {
  Rng rng(5);
  const auto a = random_vec(9 * 40, rng);
  const auto b = random_vec(40 * 37, rng);
  std::vector<float> c1(9 * 37), c2(9 * 37);
  simd::gemm_nn<float>(9, 37, 40, a.data(), b.data(), c1.data(), false);
  simd::gemm_nn<float>(9, 37, 40, a.data(), b.data(), c2.data(), false);
  CHECK(c1 == c2);
}

TEST_CASE("set_backend rejects unavailable backends") {
  if (simd::backend_available(simd::Backend::avx2)) return;
  CHECK_THROWS_AS(simd::set_backend(simd::Backend::avx2), std::invalid_argument);
}
