#pragma once

// Images are constant (3,H,W) float tensors with values in [0,1].

#include <array>
#include <cstddef>

#include "uda/tensor/random.hpp"
#include "uda/tensor/tensor.hpp"

namespace uda {

using Image = Tensor<float>;

std::size_t image_height(const Image& img);
std::size_t image_width(const Image& img);

// Throws ShapeError unless `img` is (3,H,W) with H,W >= 1.
void require_image(const Image& img, const char* what);

Image hflip(const Image& img);
Image crop(const Image& img, std::size_t top, std::size_t left, std::size_t height, std::size_t width);
// Uniformly positioned crop; throws std::invalid_argument if the image is
// smaller than the crop.
Image random_crop(const Image& img, std::size_t height, std::size_t width, Rng& rng);
Image clip01(const Image& img);

// Per-channel mean and standard deviation, 6 values: (mu_r, mu_g, mu_b,
// sd_r, sd_g, sd_b).
std::array<double, 6> image_channel_stats(const Image& img);

// Peak signal-to-noise ratio in dB for [0,1] images of equal shape.
double psnr(const Image& a, const Image& b);

}  // namespace uda
