#include "uda/tensor/ops.hpp"

#include <algorithm>
#include <cmath>

#include "uda/simd/kernels.hpp"

namespace uda {
namespace {

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != b.rank()) throw ShapeError(op, "rank", a.rank(), b.rank());
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (a.dim(i) != b.dim(i)) throw ShapeError(op, "dimension " + std::to_string(i), a.dim(i), b.dim(i));
  }
}

template <typename T>
void require_rank(const char* op, const char* what, const Tensor<T>& t, std::size_t rank) {
  if (t.rank() != rank) throw ShapeError(op, std::string(what) + " rank", rank, t.rank());
}

// Elementwise unary op with derivative expressed via input x and output y.
template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const Tensor<T>& x, Fwd fwd, Deriv deriv) {
  const auto xs = x.data();
  std::vector<T> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = fwd(xs[i]);
  if (!needs_grad(x)) return Tensor<T>(x.shape(), std::move(out));
  auto y = std::make_shared<std::vector<T>>(out);
  return make_result<T>(x.shape(), std::move(out), {&x}, [x, y, deriv](std::span<const T> g) {
    const auto xs = x.data();
    std::vector<T> gi(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) gi[i] = g[i] * deriv(xs[i], (*y)[i]);
    accumulate_grad(x, std::span<const T>(gi));
  });
}

template <typename T>
void im2col(const T* img, std::size_t c_in, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
            std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, T* cols) {
  for (std::size_t c = 0; c < c_in; ++c) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        T* row = cols + ((c * kh + ki) * kw + kj) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ki) - static_cast<std::ptrdiff_t>(pad);
          T* dst = row + oy * wo;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(dst, dst + wo, T(0));
            continue;
          }
          const T* src = img + (c * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kj) - static_cast<std::ptrdiff_t>(pad);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, std::size_t c_in, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
                std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, T* img) {
  for (std::size_t c = 0; c < c_in; ++c) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        const T* row = cols + ((c * kh + ki) * kw + kj) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ki) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          T* dst = img + (c * h + static_cast<std::size_t>(iy)) * w;
          const T* src = row + oy * wo;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kj) - static_cast<std::ptrdiff_t>(pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <typename T>
Tensor<T> conv2d_impl(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>* bias, std::size_t stride,
                      std::size_t padding) {
  require_rank("conv2d", "input", input, 4);
  require_rank("conv2d", "kernel", kernel, 4);
  if (stride == 0) throw ShapeError("conv2d", "stride must be positive");
  const std::size_t n = input.dim(0), c_in = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t c_out = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kernel.dim(1) != c_in) throw ShapeError("conv2d", "input channels", kernel.dim(1), c_in);
  if (bias) {
    require_rank("conv2d", "bias", *bias, 1);
    if (bias->dim(0) != c_out) throw ShapeError("conv2d", "bias length", c_out, bias->dim(0));
  }
  const std::size_t ho = conv_output_extent(h, kh, stride, padding, "height");
  const std::size_t wo = conv_output_extent(w, kw, stride, padding, "width");
  const std::size_t ck = c_in * kh * kw, hw_out = ho * wo;
  const bool pointwise = kh == 1 && kw == 1 && stride == 1 && padding == 0;

  // Column buffers are kept for the backward pass.
  auto cols = std::make_shared<std::vector<T>>(pointwise ? 0 : n * ck * hw_out);
  std::vector<T> out(n * c_out * hw_out);
  const T* x = input.data().data();
  const T* wk = kernel.data().data();
  for (std::size_t b = 0; b < n; ++b) {
    const T* col = x + b * c_in * h * w;
    if (!pointwise) {
      T* dst = cols->data() + b * ck * hw_out;
      im2col(x + b * c_in * h * w, c_in, h, w, kh, kw, stride, padding, ho, wo, dst);
      col = dst;
    }
    T* ob = out.data() + b * c_out * hw_out;
    if (bias) {
      const auto bs = bias->data();
      for (std::size_t c = 0; c < c_out; ++c) std::fill(ob + c * hw_out, ob + (c + 1) * hw_out, bs[c]);
    }
    simd::gemm_nn<T>(c_out, hw_out, ck, wk, col, ob, bias != nullptr);
  }

  Tensor<T> b_copy = bias ? *bias : Tensor<T>();
  return make_result<T>(
      Shape{n, c_out, ho, wo}, std::move(out), {&input, &kernel, bias},
      [=](std::span<const T> g) {
        const T* gp = g.data();
        if (needs_grad(kernel)) {
          std::vector<T> gw(c_out * ck, T(0));
          for (std::size_t b = 0; b < n; ++b) {
            const T* col = pointwise ? input.data().data() + b * c_in * h * w : cols->data() + b * ck * hw_out;
            simd::gemm_nt<T>(c_out, ck, hw_out, gp + b * c_out * hw_out, col, gw.data(), true);
          }
          accumulate_grad(kernel, std::span<const T>(gw));
        }
        if (b_copy.defined() && needs_grad(b_copy)) {
          std::vector<T> gb(c_out, T(0));
          for (std::size_t b = 0; b < n; ++b) {
            for (std::size_t c = 0; c < c_out; ++c) gb[c] += simd::sum<T>(hw_out, gp + (b * c_out + c) * hw_out);
          }
          accumulate_grad(b_copy, std::span<const T>(gb));
        }
        if (needs_grad(input)) {
          std::vector<T> gx(n * c_in * h * w, T(0));
          std::vector<T> gcol(pointwise ? 0 : ck * hw_out);
          for (std::size_t b = 0; b < n; ++b) {
            if (pointwise) {
              simd::gemm_tn<T>(c_in, hw_out, c_out, kernel.data().data(), gp + b * c_out * hw_out,
                               gx.data() + b * c_in * h * w, false);
            } else {
              simd::gemm_tn<T>(ck, hw_out, c_out, kernel.data().data(), gp + b * c_out * hw_out, gcol.data(), false);
              col2im_add(gcol.data(), c_in, h, w, kh, kw, stride, padding, ho, wo, gx.data() + b * c_in * h * w);
            }
          }
          accumulate_grad(input, std::span<const T>(gx));
        }
      });
}

template <typename T, typename Fwd>
Tensor<T> binary(const char* op, const Tensor<T>& a, const Tensor<T>& b, Fwd fwd,
                 std::function<void(std::span<const T>)> bwd) {
  require_same_shape(op, a, b);
  std::vector<T> out(a.numel());
  fwd(a.data().data(), b.data().data(), out.data(), out.size());
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, std::move(bwd));
}

}  // namespace

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding,
                               const char* axis) {
  if (kernel == 0) throw ShapeError("conv2d", std::string("kernel ") + axis + " must be positive");
  if (kernel > in + 2 * padding) throw ShapeError("conv2d", std::string("kernel ") + axis, in + 2 * padding, kernel);
  return (in + 2 * padding - kernel) / stride + 1;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, std::size_t stride, std::size_t padding) {
  return conv2d_impl<T>(input, kernel, nullptr, stride, padding);
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias, std::size_t stride,
                 std::size_t padding) {
  return conv2d_impl<T>(input, kernel, &bias, stride, padding);
}

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& input, std::size_t factor) {
  require_rank("upsample_nearest", "input", input, 4);
  if (factor == 0) throw ShapeError("upsample_nearest", "factor must be positive");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t ho = h * factor, wo = w * factor;
  const auto x = input.data();
  std::vector<T> out(n * c * ho * wo);
  for (std::size_t p = 0; p < n * c; ++p) {
    for (std::size_t y = 0; y < ho; ++y) {
      const T* src = x.data() + (p * h + y / factor) * w;
      T* dst = out.data() + (p * ho + y) * wo;
      for (std::size_t xx = 0; xx < wo; ++xx) dst[xx] = src[xx / factor];
    }
  }
  return make_result<T>(Shape{n, c, ho, wo}, std::move(out), {&input}, [=](std::span<const T> g) {
    std::vector<T> gi(n * c * h * w, T(0));
    for (std::size_t p = 0; p < n * c; ++p) {
      for (std::size_t y = 0; y < ho; ++y) {
        T* dst = gi.data() + (p * h + y / factor) * w;
        const T* src = g.data() + (p * ho + y) * wo;
        for (std::size_t xx = 0; xx < wo; ++xx) dst[xx / factor] += src[xx];
      }
    }
    accumulate_grad(input, std::span<const T>(gi));
  });
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank("concat_channels", "first operand", a, 4);
  require_rank("concat_channels", "second operand", b, 4);
  for (std::size_t axis : {0u, 2u, 3u}) {
    if (a.dim(axis) != b.dim(axis)) {
      throw ShapeError("concat_channels", "dimension " + std::to_string(axis), a.dim(axis), b.dim(axis));
    }
  }
  const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  std::vector<T> out(n * (ca + cb) * hw);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.data().data() + i * ca * hw, ca * hw, out.data() + i * (ca + cb) * hw);
    std::copy_n(b.data().data() + i * cb * hw, cb * hw, out.data() + i * (ca + cb) * hw + ca * hw);
  }
  return make_result<T>(Shape{n, ca + cb, a.dim(2), a.dim(3)}, std::move(out), {&a, &b}, [=](std::span<const T> g) {
    if (needs_grad(a)) {
      std::vector<T> ga(n * ca * hw);
      for (std::size_t i = 0; i < n; ++i) std::copy_n(g.data() + i * (ca + cb) * hw, ca * hw, ga.data() + i * ca * hw);
      accumulate_grad(a, std::span<const T>(ga));
    }
    if (needs_grad(b)) {
      std::vector<T> gb(n * cb * hw);
      for (std::size_t i = 0; i < n; ++i) {
        std::copy_n(g.data() + i * (ca + cb) * hw + ca * hw, cb * hw, gb.data() + i * cb * hw);
      }
      accumulate_grad(b, std::span<const T>(gb));
    }
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) throw ShapeError("reshape", "element count", x.numel(), shape_numel(shape));
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_result<T>(std::move(shape), std::move(out), {&x}, [x](std::span<const T> g) { accumulate_grad(x, g); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return leaky_relu(x, T(0));
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T negative_slope) {
  std::vector<T> out(x.numel());
  if (auto& trace = detail::branch_trace(); trace.mode != detail::BranchTrace::Mode::off) {
    const auto xs = x.data();
    std::vector<std::uint8_t> side(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) side[i] = xs[i] > T(0);
    const auto& use = trace.exchange(side);
    for (std::size_t i = 0; i < xs.size(); ++i) out[i] = use[i] ? xs[i] : negative_slope * xs[i];
  } else {
    simd::leaky_relu_forward<T>(out.size(), negative_slope, x.data().data(), out.data());
  }
  return make_result<T>(x.shape(), std::move(out), {&x}, [x, negative_slope](std::span<const T> g) {
    std::vector<T> gi(g.size(), T(0));
    simd::leaky_relu_backward<T>(g.size(), negative_slope, x.data().data(), g.data(), gi.data());
    accumulate_grad(x, std::span<const T>(gi));
  });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return unary<T>(x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary<T>(
      x, [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
  for (T v : x.data()) {
    if (v < T(0)) throw std::domain_error("sqrt of negative value");
  }
  return unary<T>(x, [](T v) { return std::sqrt(v); }, [](T, T y) { return T(0.5) / y; });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  return unary<T>(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "add", a, b, [](const T* x, const T* y, T* o, std::size_t n) { simd::add<T>(n, x, y, o); },
      [a, b](std::span<const T> g) {
        accumulate_grad(a, g);
        accumulate_grad(b, g);
      });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "sub", a, b,
      [](const T* x, const T* y, T* o, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) o[i] = x[i] - y[i];
      },
      [a, b](std::span<const T> g) {
        accumulate_grad(a, g);
        if (needs_grad(b)) {
          std::vector<T> gb(g.size());
          simd::scale<T>(g.size(), T(-1), g.data(), gb.data());
          accumulate_grad(b, std::span<const T>(gb));
        }
      });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "mul", a, b, [](const T* x, const T* y, T* o, std::size_t n) { simd::mul<T>(n, x, y, o); },
      [a, b](std::span<const T> g) {
        std::vector<T> tmp(g.size());
        if (needs_grad(a)) {
          simd::mul<T>(g.size(), g.data(), b.data().data(), tmp.data());
          accumulate_grad(a, std::span<const T>(tmp));
        }
        if (needs_grad(b)) {
          simd::mul<T>(g.size(), g.data(), a.data().data(), tmp.data());
          accumulate_grad(b, std::span<const T>(tmp));
        }
      });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "div", a, b,
      [](const T* x, const T* y, T* o, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) o[i] = x[i] / y[i];
      },
      [a, b](std::span<const T> g) {
        const auto av = a.data();
        const auto bv = b.data();
        std::vector<T> tmp(g.size());
        if (needs_grad(a)) {
          for (std::size_t i = 0; i < g.size(); ++i) tmp[i] = g[i] / bv[i];
          accumulate_grad(a, std::span<const T>(tmp));
        }
        if (needs_grad(b)) {
          for (std::size_t i = 0; i < g.size(); ++i) tmp[i] = -g[i] * av[i] / (bv[i] * bv[i]);
          accumulate_grad(b, std::span<const T>(tmp));
        }
      });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> out(x.numel());
  simd::scale<T>(out.size(), factor, x.data().data(), out.data());
  return make_result<T>(x.shape(), std::move(out), {&x}, [x, factor](std::span<const T> g) {
    std::vector<T> gi(g.size());
    simd::scale<T>(g.size(), factor, g.data(), gi.data());
    accumulate_grad(x, std::span<const T>(gi));
  });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T value) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v += value;
  return make_result<T>(x.shape(), std::move(out), {&x}, [x](std::span<const T> g) { accumulate_grad(x, g); });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
  const auto xs = x.data();
  // side: 0 inside, 1 below, 2 above
  std::vector<std::uint8_t> side(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) side[i] = xs[i] < lo ? 1 : (xs[i] > hi ? 2 : 0);
  auto& trace = detail::branch_trace();
  const auto& use = trace.mode == detail::BranchTrace::Mode::off ? side : trace.exchange(side);
  std::vector<T> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = use[i] == 1 ? lo : (use[i] == 2 ? hi : xs[i]);
  return make_result<T>(x.shape(), std::move(out), {&x}, [x, lo, hi](std::span<const T> g) {
    const auto xs = x.data();
    std::vector<T> gi(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) gi[i] = (xs[i] >= lo && xs[i] <= hi) ? g[i] : T(0);
    accumulate_grad(x, std::span<const T>(gi));
  });
}

template <typename T>
Tensor<T> elementwise(Elementwise kind, std::span<const Tensor<T>> operands, T scalar) {
  const bool binary_kind = kind == Elementwise::add || kind == Elementwise::sub || kind == Elementwise::mul;
  const std::size_t expected = binary_kind ? 2 : 1;
  if (operands.size() != expected) throw std::invalid_argument("elementwise: wrong operand count");
  switch (kind) {
    case Elementwise::relu:
      return relu(operands[0]);
    case Elementwise::leaky_relu:
      return leaky_relu(operands[0], scalar);
    case Elementwise::tanh:
      return uda::tanh(operands[0]);
    case Elementwise::add:
      return add(operands[0], operands[1]);
    case Elementwise::sub:
      return sub(operands[0], operands[1]);
    case Elementwise::mul:
      return mul(operands[0], operands[1]);
    case Elementwise::scale:
      return scale(operands[0], scalar);
  }
  throw std::invalid_argument("elementwise: unknown kind");
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  double acc = 0;
  for (T v : x.data()) acc += v;
  return make_result<T>(Shape{1}, std::vector<T>{static_cast<T>(acc)}, {&x}, [x](std::span<const T> g) {
    accumulate_grad(x, std::span<const T>(std::vector<T>(x.numel(), g[0])));
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw ShapeError("mean", "empty tensor");
  double acc = 0;
  for (T v : x.data()) acc += v;
  const double n = static_cast<double>(x.numel());
  return make_result<T>(Shape{1}, std::vector<T>{static_cast<T>(acc / n)}, {&x}, [x, n](std::span<const T> g) {
    accumulate_grad(x, std::span<const T>(std::vector<T>(x.numel(), static_cast<T>(g[0] / n))));
  });
}

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("mse_loss", a, b);
  if (a.numel() == 0) throw ShapeError("mse_loss", "empty tensor");
  const auto av = a.data();
  const auto bv = b.data();
  double acc = 0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = static_cast<double>(av[i]) - static_cast<double>(bv[i]);
    acc += d * d;
  }
  const double n = static_cast<double>(av.size());
  return make_result<T>(Shape{1}, std::vector<T>{static_cast<T>(acc / n)}, {&a, &b}, [a, b, n](std::span<const T> g) {
    const auto av = a.data();
    const auto bv = b.data();
    std::vector<T> d(av.size());
    const T k = static_cast<T>(2.0 * g[0] / n);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = k * (av[i] - bv[i]);
    accumulate_grad(a, std::span<const T>(d));
    if (needs_grad(b)) {
      for (auto& v : d) v = -v;
      accumulate_grad(b, std::span<const T>(d));
    }
  });
}

template <typename T>
Tensor<T> l1_loss(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("l1_loss", a, b);
  if (a.numel() == 0) throw ShapeError("l1_loss", "empty tensor");
  const auto av = a.data();
  const auto bv = b.data();
  double acc = 0;
  if (auto& trace = detail::branch_trace(); trace.mode != detail::BranchTrace::Mode::off) {
    // side: 1 above, 2 below, 0 equal (zero subgradient, as in backward)
    std::vector<std::uint8_t> side(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) side[i] = av[i] > bv[i] ? 1 : (av[i] < bv[i] ? 2 : 0);
    const auto& use = trace.exchange(side);
    for (std::size_t i = 0; i < av.size(); ++i) {
      const double d = static_cast<double>(av[i]) - static_cast<double>(bv[i]);
      acc += use[i] == 1 ? d : (use[i] == 2 ? -d : 0.0);
    }
  } else {
    for (std::size_t i = 0; i < av.size(); ++i) acc += std::abs(static_cast<double>(av[i]) - static_cast<double>(bv[i]));
  }
  const double n = static_cast<double>(av.size());
  return make_result<T>(Shape{1}, std::vector<T>{static_cast<T>(acc / n)}, {&a, &b}, [a, b, n](std::span<const T> g) {
    const auto av = a.data();
    const auto bv = b.data();
    std::vector<T> d(av.size());
    const T k = static_cast<T>(g[0] / n);
    for (std::size_t i = 0; i < d.size(); ++i) {
      const T diff = av[i] - bv[i];
      d[i] = diff > T(0) ? k : (diff < T(0) ? -k : T(0));
    }
    accumulate_grad(a, std::span<const T>(d));
    if (needs_grad(b)) {
      for (auto& v : d) v = -v;
      accumulate_grad(b, std::span<const T>(d));
    }
  });
}

template <typename T>
Tensor<T> mse_to_constant(const Tensor<T>& x, T c) {
  return mse_loss(x, Tensor<T>::full(x.shape(), c));
}

template <typename T>
Tensor<T> channel_mean(const Tensor<T>& feature) {
  require_rank("channel_mean", "feature", feature, 4);
  const std::size_t n = feature.dim(0), c = feature.dim(1), hw = feature.dim(2) * feature.dim(3);
  if (hw == 0) throw ShapeError("channel_mean", "empty spatial extent");
  const auto x = feature.data();
  std::vector<T> out(n * c);
  for (std::size_t p = 0; p < n * c; ++p) {
    double acc = 0;
    for (std::size_t i = 0; i < hw; ++i) acc += x[p * hw + i];
    out[p] = static_cast<T>(acc / static_cast<double>(hw));
  }
  return make_result<T>(Shape{n, c}, std::move(out), {&feature}, [feature, n, c, hw](std::span<const T> g) {
    std::vector<T> gi(n * c * hw);
    for (std::size_t p = 0; p < n * c; ++p) {
      std::fill_n(gi.data() + p * hw, hw, static_cast<T>(g[p] / static_cast<double>(hw)));
    }
    accumulate_grad(feature, std::span<const T>(gi));
  });
}

template <typename T>
Tensor<T> channel_var(const Tensor<T>& feature) {
  require_rank("channel_var", "feature", feature, 4);
  const std::size_t n = feature.dim(0), c = feature.dim(1), hw = feature.dim(2) * feature.dim(3);
  if (hw == 0) throw ShapeError("channel_var", "empty spatial extent");
  const auto x = feature.data();
  std::vector<T> out(n * c);
  auto means = std::make_shared<std::vector<double>>(n * c);
  for (std::size_t p = 0; p < n * c; ++p) {
    double acc = 0;
    for (std::size_t i = 0; i < hw; ++i) acc += x[p * hw + i];
    const double mu = acc / static_cast<double>(hw);
    double sq = 0;
    for (std::size_t i = 0; i < hw; ++i) {
      const double d = x[p * hw + i] - mu;
      sq += d * d;
    }
    (*means)[p] = mu;
    out[p] = static_cast<T>(sq / static_cast<double>(hw));
  }
  return make_result<T>(Shape{n, c}, std::move(out), {&feature}, [feature, means, n, c, hw](std::span<const T> g) {
    const auto x = feature.data();
    std::vector<T> gi(n * c * hw);
    for (std::size_t p = 0; p < n * c; ++p) {
      const double k = 2.0 * g[p] / static_cast<double>(hw);
      for (std::size_t i = 0; i < hw; ++i) gi[p * hw + i] = static_cast<T>(k * (x[p * hw + i] - (*means)[p]));
    }
    accumulate_grad(feature, std::span<const T>(gi));
  });
}

template <typename T>
ChannelStats<T> channel_stats(const Tensor<T>& feature) {
  return {channel_mean(feature), channel_var(feature)};
}

template <typename T>
Tensor<T> expand_spatial(const Tensor<T>& stat, std::size_t height, std::size_t width) {
  require_rank("expand_spatial", "statistic", stat, 2);
  const std::size_t nc = stat.numel(), hw = height * width;
  std::vector<T> out(nc * hw);
  for (std::size_t p = 0; p < nc; ++p) std::fill_n(out.data() + p * hw, hw, stat.data()[p]);
  return make_result<T>(Shape{stat.dim(0), stat.dim(1), height, width}, std::move(out), {&stat},
                        [stat, nc, hw](std::span<const T> g) {
                          std::vector<T> gi(nc);
                          for (std::size_t p = 0; p < nc; ++p) {
                            double acc = 0;
                            for (std::size_t i = 0; i < hw; ++i) acc += g[p * hw + i];
                            gi[p] = static_cast<T>(acc);
                          }
                          accumulate_grad(stat, std::span<const T>(gi));
                        });
}

template <typename T>
Tensor<T> stack_images(std::span<const Tensor<T>> images) {
  if (images.empty()) throw ShapeError("stack_images", "no images");
  const Shape& s = images.front().shape();
  if (s.size() != 3) throw ShapeError("stack_images", "image rank", 3, s.size());
  std::vector<T> out;
  out.reserve(images.size() * images.front().numel());
  for (const auto& im : images) {
    if (im.shape() != s) throw ShapeError("stack_images", "images differ in shape: " + shape_str(im.shape()));
    out.insert(out.end(), im.data().begin(), im.data().end());
  }
  return Tensor<T>(Shape{images.size(), s[0], s[1], s[2]}, std::move(out));
}

template <typename T>
Tensor<T> unstack_image(const Tensor<T>& batch, std::size_t index) {
  require_rank("unstack_image", "batch", batch, 4);
  if (index >= batch.dim(0)) throw ShapeError("unstack_image", "batch index", batch.dim(0), index);
  const std::size_t per = batch.dim(1) * batch.dim(2) * batch.dim(3);
  const auto first = batch.data().begin() + static_cast<std::ptrdiff_t>(index * per);
  return Tensor<T>(Shape{batch.dim(1), batch.dim(2), batch.dim(3)}, std::vector<T>(first, first + per));
}

#define UDA_INSTANTIATE_OPS(T)                                                                             \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t);                 \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t); \
  template Tensor<T> upsample_nearest(const Tensor<T>&, std::size_t);                                      \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                     \
  template Tensor<T> relu(const Tensor<T>&);                                                               \
  template Tensor<T> leaky_relu(const Tensor<T>&, T);                                                      \
  template Tensor<T> tanh(const Tensor<T>&);                                                               \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                            \
  template Tensor<T> sqrt(const Tensor<T>&);                                                               \
  template Tensor<T> square(const Tensor<T>&);                                                             \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> scale(const Tensor<T>&, T);                                                           \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                                      \
  template Tensor<T> clamp(const Tensor<T>&, T, T);                                                        \
  template Tensor<T> elementwise(Elementwise, std::span<const Tensor<T>>, T);                              \
  template Tensor<T> sum(const Tensor<T>&);                                                                \
  template Tensor<T> mean(const Tensor<T>&);                                                               \
  template Tensor<T> mse_loss(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> l1_loss(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> mse_to_constant(const Tensor<T>&, T);                                                 \
  template Tensor<T> channel_mean(const Tensor<T>&);                                                       \
  template Tensor<T> channel_var(const Tensor<T>&);                                                        \
  template ChannelStats<T> channel_stats(const Tensor<T>&);                                                \
  template Tensor<T> expand_spatial(const Tensor<T>&, std::size_t, std::size_t);                           \
  template Tensor<T> stack_images(std::span<const Tensor<T>>);                                             \
  template Tensor<T> unstack_image(const Tensor<T>&, std::size_t);

UDA_INSTANTIATE_OPS(float)
UDA_INSTANTIATE_OPS(double)

#undef UDA_INSTANTIATE_OPS

}  // namespace uda
