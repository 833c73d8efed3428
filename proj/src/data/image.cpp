#include "uda/data/image.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace uda {

void require_image(const Image& img, const char* what) {
  if (!img.defined()) throw ShapeError(what, "undefined image");
  if (img.rank() != 3) throw ShapeError(what, "image rank", 3, img.rank());
  if (img.dim(0) != 3) throw ShapeError(what, "image channels", 3, img.dim(0));
  if (img.dim(1) == 0 || img.dim(2) == 0) throw ShapeError(what, "empty image");
}

std::size_t image_height(const Image& img) { return img.dim(1); }
std::size_t image_width(const Image& img) { return img.dim(2); }

Image hflip(const Image& img) {
  require_image(img, "hflip");
  const std::size_t h = img.dim(1), w = img.dim(2);
  const auto src = img.data();
  std::vector<float> out(src.size());
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out[(c * h + y) * w + x] = src[(c * h + y) * w + (w - 1 - x)];
  return Image(img.shape(), std::move(out));
}

Image crop(const Image& img, std::size_t top, std::size_t left, std::size_t height, std::size_t width) {
  require_image(img, "crop");
  const std::size_t h = img.dim(1), w = img.dim(2);
  if (top + height > h || left + width > w || height == 0 || width == 0) {
    throw std::invalid_argument("crop window outside image");
  }
  const auto src = img.data();
  std::vector<float> out(3 * height * width);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x)
        out[(c * height + y) * width + x] = src[(c * h + top + y) * w + left + x];
  return Image(Shape{3, height, width}, std::move(out));
}

Image random_crop(const Image& img, std::size_t height, std::size_t width, Rng& rng) {
  require_image(img, "random_crop");
  if (height > img.dim(1) || width > img.dim(2)) {
    throw std::invalid_argument("crop size exceeds image size " + shape_str(img.shape()));
  }
  const auto top = static_cast<std::size_t>(rng.below(img.dim(1) - height + 1));
  const auto left = static_cast<std::size_t>(rng.below(img.dim(2) - width + 1));
  return crop(img, top, left, height, width);
}

Image clip01(const Image& img) {
  std::vector<float> out(img.data().begin(), img.data().end());
  for (auto& v : out) v = std::clamp(v, 0.0f, 1.0f);
  return Image(img.shape(), std::move(out));
}

std::array<double, 6> image_channel_stats(const Image& img) {
  require_image(img, "image_channel_stats");
  const std::size_t hw = img.dim(1) * img.dim(2);
  std::array<double, 6> out{};
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0;
    for (std::size_t i = 0; i < hw; ++i) m += img.data()[c * hw + i];
    m /= static_cast<double>(hw);
    double v = 0;
    for (std::size_t i = 0; i < hw; ++i) v += (img.data()[c * hw + i] - m) * (img.data()[c * hw + i] - m);
    out[c] = m;
    out[3 + c] = std::sqrt(v / static_cast<double>(hw));
  }
  return out;
}

double psnr(const Image& a, const Image& b) {
  if (a.shape() != b.shape()) throw ShapeError("psnr", "shapes differ");
  double mse = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.numel());
  if (mse == 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

}  // namespace uda
