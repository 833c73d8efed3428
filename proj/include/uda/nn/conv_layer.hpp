#pragma once

#include <cmath>
#include <string>

#include "uda/tensor/ops.hpp"
#include "uda/tensor/parameters.hpp"
#include "uda/tensor/random.hpp"

namespace uda::nn {

// Convolution with bias, weights in (Cout, Cin, k, k) layout.
template <typename T>
struct Conv2d {
  Tensor<T> weight;
  Tensor<T> bias;
  std::size_t stride = 1;
  std::size_t padding = 0;

  // He-normal weights scaled by `gain`, zero bias. A zero gain gives an
  // all-zero layer.
  static Conv2d init(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t padding,
                     Rng& rng, bool trainable = true, double gain = std::sqrt(2.0)) {
    const double fan_in = static_cast<double>(in * kernel * kernel);
    const double sd = gain / std::sqrt(fan_in);
    std::vector<T> w(out * in * kernel * kernel);
    for (auto& v : w) v = static_cast<T>(rng.normal() * sd);
    Conv2d c;
    c.weight = Tensor<T>(Shape{out, in, kernel, kernel}, std::move(w), trainable);
    c.bias = Tensor<T>::zeros(Shape{out}, trainable);
    c.stride = stride;
    c.padding = padding;
    return c;
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias, stride, padding); }

  void register_into(ParameterSet<T>& params, const std::string& prefix) const {
    params.add(prefix + ".weight", weight);
    params.add(prefix + ".bias", bias);
  }
};

}  // namespace uda::nn
