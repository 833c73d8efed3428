#pragma once

// Arbitrary style transfer with adaptive instance normalization.
//
// A fixed, randomly initialized encoder maps images to features; AdaIN
// replaces the per-instance, per-channel mean and standard deviation of the
// source features with those of the target features; a trained decoder maps
// the aligned features back to an image.

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "uda/data/image.hpp"
#include "uda/nn/conv_layer.hpp"
#include "uda/tensor/optim.hpp"
#include "uda/tensor/parameters.hpp"

namespace uda::adain {

// Stabilizer inside sigma = sqrt(var + eps).
inline constexpr double kSigmaEpsilon = 1e-5;

// (N,C,H,W) -> (N,C): sqrt(var + eps) over spatial positions.
template <typename T>
Tensor<T> channel_sigma(const Tensor<T>& feature);

// sigma(h_t) * (h_s - mu(h_s)) / sigma(h_s) + mu(h_t), per instance and
// channel. Spatial sizes of h_s and h_t may differ; the output has the shape
// of h_s. Throws ShapeError on batch or channel mismatch.
template <typename T>
Tensor<T> adain(const Tensor<T>& h_s, const Tensor<T>& h_t);

// (1 - alpha) * h_s + alpha * h_hat_t. Exact at alpha 0 and 1.
// Throws std::invalid_argument for alpha outside [0,1].
template <typename T>
Tensor<T> blend(const Tensor<T>& h_s, const Tensor<T>& h_hat_t, double alpha);

template <typename T>
class StyleTransferModel {
 public:
  static constexpr std::size_t kEncoderLayers = 3;

  // Encoder weights are drawn from `seed` and frozen; decoder weights are
  // drawn from the same stream and trainable. `layer_taps` index encoder
  // layers used by the style loss; must be non-empty, strictly increasing
  // and end at the last encoder layer.
  explicit StyleTransferModel(std::uint64_t seed, std::vector<std::size_t> layer_taps = {0, 1, 2});

  // Activations after every encoder layer, input (N,3,H,W) with even H,W.
  std::vector<Tensor<T>> encode_layers(const Tensor<T>& images) const;
  Tensor<T> encode(const Tensor<T>& images) const;
  Tensor<T> decode(const Tensor<T>& features) const;

  const std::vector<std::size_t>& layer_taps() const noexcept { return taps_; }

  // Every parameter, encoder first ("encoder.*", "decoder.*").
  ParameterSet<T> parameters() const;
  ParameterSet<T> decoder_parameters() const;

 private:
  std::vector<nn::Conv2d<T>> encoder_;
  std::vector<nn::Conv2d<T>> decoder_;
  std::vector<std::size_t> taps_;
};

// L_c = mean((E(decoded) - h_hat_t)^2) where decoded = D(h_hat_t).
template <typename T>
Tensor<T> content_loss(const StyleTransferModel<T>& model, const Tensor<T>& decoded, const Tensor<T>& h_hat_t);
// Convenience form that decodes h_hat_t itself.
template <typename T>
Tensor<T> content_loss(const StyleTransferModel<T>& model, const Tensor<T>& h_hat_t);

// L_s = sum_i mse(mu(phi_i(decoded)), mu(phi_i(t))) + mse(sigma(phi_i(decoded)), sigma(phi_i(t)))
// over the model's tapped encoder layers.
template <typename T>
Tensor<T> style_loss(const StyleTransferModel<T>& model, const Tensor<T>& decoded, const Tensor<T>& t);

struct StepLosses {
  double content = 0;
  double style = 0;
  double total = 0;
};

// One forward pass of the training objective L_c + weight * L_s for a source
// batch and a target batch of equal size. Returns the scalar total.
template <typename T>
Tensor<T> training_objective(const StyleTransferModel<T>& model, const Tensor<T>& source_batch,
                             const Tensor<T>& target_batch, double style_weight, StepLosses* parts = nullptr);

struct StyleTrainConfig {
  std::size_t iterations = 400;
  std::size_t batch_size = 4;
  std::size_t crop_size = 32;
  double style_loss_weight = 10.0;
  double base_lr = 1e-3;
  std::uint64_t seed = 7;
  std::vector<std::size_t> layer_taps = {0, 1, 2};
};

struct StyleHistoryEntry {
  std::size_t iteration = 0;
  StepLosses losses;
};

struct StyleTrainResult {
  StyleTransferModel<float> model;
  std::vector<StyleHistoryEntry> history;
};

// Trains the decoder on random source/target crops pairs drawn from the
// seeded stream. Only images are consumed. Throws TrainingDiverged carrying
// the iteration index if the loss becomes non-finite.
StyleTrainResult train_style_transfer(std::span<const Image> source_images, std::span<const Image> target_images,
                                      const StyleTrainConfig& config);

// D(blend(h_s, adain(h_s, h_t), alpha)) clipped to [0,1]. Images are (3,H,W)
// with even sides; the style image may have a different size.
Image stylize(const StyleTransferModel<float>& model, const Image& content, const Image& style, double alpha);

// <dir>/adain.ckpt (encoder and decoder weights) and <dir>/adain.json (taps).
void save_style_model(const StyleTransferModel<float>& model, const std::filesystem::path& dir);
StyleTransferModel<float> load_style_model(const std::filesystem::path& dir);

}  // namespace uda::adain
