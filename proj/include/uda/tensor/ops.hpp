#pragma once

// Differentiable tensor operations. Binary elementwise ops require identical
// shapes; there is no implicit broadcasting. Per-channel statistics are
// spread back over space with the explicit expand_spatial().

#include <span>
#include <utility>

#include "uda/tensor/tensor.hpp"

namespace uda {

// --- convolution and resampling -------------------------------------------

// input (N,Cin,H,W), kernel (Cout,Cin,kH,kW), optional bias (Cout).
// Output (N, Cout, (H+2p-kH)/stride+1, (W+2p-kW)/stride+1), zero padding.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, std::size_t stride, std::size_t padding);
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias, std::size_t stride,
                 std::size_t padding);

// Output extent of a convolution along one axis; throws ShapeError when the
// kernel does not fit the padded input.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding,
                               const char* axis);

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& input, std::size_t factor);

// Channel concatenation of two (N,C,H,W) tensors with equal N,H,W.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

// --- elementwise -----------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T negative_slope = T(0.2));
template <typename T>
Tensor<T> tanh(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> sqrt(const Tensor<T>& x);
template <typename T>
Tensor<T> square(const Tensor<T>& x);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T value);
// Elementwise clamp; gradient passes only where the input is inside [lo, hi].
template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi);

enum class Elementwise { relu, leaky_relu, tanh, add, sub, mul, scale };

// Uniform entry point over the elementwise family. Unary kinds take one
// operand, binary kinds two; `scalar` is the scale factor for `scale` and the
// negative slope for `leaky_relu` (default 0.2).
template <typename T>
Tensor<T> elementwise(Elementwise kind, std::span<const Tensor<T>> operands, T scalar = T(0.2));

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) {
  return add(a, b);
}
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) {
  return sub(a, b);
}
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) {
  return mul(a, b);
}

// --- reductions and losses -------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);
// mean((a - b)^2)
template <typename T>
Tensor<T> mse_loss(const Tensor<T>& a, const Tensor<T>& b);
// mean(|a - b|)
template <typename T>
Tensor<T> l1_loss(const Tensor<T>& a, const Tensor<T>& b);
// mean((x - c)^2) against a constant
template <typename T>
Tensor<T> mse_to_constant(const Tensor<T>& x, T c);

// --- per-channel statistics ----------------------------------------------

// (N,C,H,W) -> (N,C) mean over spatial positions.
template <typename T>
Tensor<T> channel_mean(const Tensor<T>& feature);
// (N,C,H,W) -> (N,C) population variance (divides by H*W).
template <typename T>
Tensor<T> channel_var(const Tensor<T>& feature);

template <typename T>
struct ChannelStats {
  Tensor<T> mean;
  Tensor<T> var;
};

template <typename T>
ChannelStats<T> channel_stats(const Tensor<T>& feature);

// (N,C) -> (N,C,H,W), replicating each value over space.
template <typename T>
Tensor<T> expand_spatial(const Tensor<T>& stat, std::size_t height, std::size_t width);

// --- non-differentiable helpers --------------------------------------------

// Stacks (C,H,W) images into a constant (N,C,H,W) batch.
template <typename T>
Tensor<T> stack_images(std::span<const Tensor<T>> images);
// Slices item `index` of an (N,C,H,W) batch into a constant (C,H,W) tensor.
template <typename T>
Tensor<T> unstack_image(const Tensor<T>& batch, std::size_t index);

}  // namespace uda
