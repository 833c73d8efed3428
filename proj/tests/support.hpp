#pragma once

// Helpers shared by the test binaries.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "doctest.h"
#include "grad_support.hpp"
#include "uda/data/image.hpp"
#include "uda/tensor/gradcheck.hpp"
#include "uda/tensor/ops.hpp"
#include "uda/tensor/random.hpp"

namespace uda::testing {

// `min_checked_fraction` guards against a vacuous pass where nearly every
// sampled coordinate was skipped.
template <typename T>
FiniteDiffReport check_grad(const std::string& what, std::function<Tensor<T>()> fn, std::vector<Tensor<T>> params,
                            double min_checked_fraction = 0.5, FiniteDiffOptions options = Tolerance<T>::options()) {
  auto report = finite_diff_report<T>(fn, params, options);
  INFO(what << " rel err " << report.max_relative_error << " checked " << report.coordinates_checked
            << " skipped " << report.coordinates_skipped << " at kinks " << report.coordinates_at_kinks << " worst tensor "
            << report.worst.tensor << "[" << report.worst.index << "] analytic " << report.worst.analytic
            << " numeric " << report.worst.numeric);
  CHECK(report.max_relative_error < Tolerance<T>::max_error);
  const auto sampled = static_cast<double>(report.coordinates_sampled);
  CHECK(static_cast<double>(report.coordinates_checked) >= min_checked_fraction * sampled);
  return report;
}

// Adapter handing the shared gradient suites to doctest.
template <typename T>
struct GradCheck {
  void operator()(const std::string& what, std::function<Tensor<T>()> fn, std::vector<Tensor<T>> params,
                  double min_checked_fraction, FiniteDiffOptions options) const {
    check_grad<T>(what, std::move(fn), std::move(params), min_checked_fraction, options);
  }
};

inline bool bit_equal(std::span<const float> a, std::span<const float> b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](float x, float y) {
           return std::bit_cast<std::uint32_t>(x) == std::bit_cast<std::uint32_t>(y);
         });
}

// Smooth procedural image: warm or cool palette with a gradient and a blob.
inline Image procedural_image(Rng& rng, bool warm, std::size_t size = 32) {
  std::vector<float> px(3 * size * size);
  const double cx = rng.uniform(0.2, 0.8) * size, cy = rng.uniform(0.2, 0.8) * size, r = rng.uniform(4, 10);
  const double base[2][3] = {{0.2, 0.3, 0.7}, {0.8, 0.5, 0.2}};
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const bool inside = (x - cx) * (x - cx) + (y - cy) * (y - cy) < r * r;
      for (std::size_t c = 0; c < 3; ++c) {
        double v = base[warm][c] * (0.6 + 0.4 * static_cast<double>(y) / size);
        if (inside) v = 1.0 - v;
        px[(c * size + y) * size + x] = static_cast<float>(v);
      }
    }
  return Image(Shape{3, size, size}, std::move(px));
}

inline std::vector<Image> image_set(std::uint64_t seed, bool warm, std::size_t n, std::size_t size = 32) {
  Rng rng(seed);
  std::vector<Image> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(procedural_image(rng, warm, size));
  return out;
}

}  // namespace uda::testing
