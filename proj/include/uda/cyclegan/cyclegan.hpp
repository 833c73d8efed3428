#pragma once

// Small unpaired image-to-image translator: two generators, two patch
// discriminators, least-squares adversarial loss plus cycle consistency.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "uda/data/image.hpp"
#include "uda/nn/conv_layer.hpp"
#include "uda/tensor/optim.hpp"
#include "uda/tensor/parameters.hpp"

namespace uda::cyclegan {

// Encoder-decoder generator with two stride-2 convolutions, two residual
// blocks and two nearest-upsample + conv stages. The output convolution sees
// the upsampled features concatenated with the input image, is initialized
// to zero, and its result is added to the input, so a fresh generator is
// the identity map. Input sides must be multiples of 4.
template <typename T>
class Generator {
 public:
  static constexpr std::size_t kSideMultiple = 4;

  Generator(Rng& rng, std::size_t width = 16);

  Tensor<T> operator()(const Tensor<T>& images) const;
  void register_into(ParameterSet<T>& params, const std::string& prefix) const;

 private:
  nn::Conv2d<T> down1_, down2_;
  nn::Conv2d<T> res_[2][2];
  nn::Conv2d<T> up1_, up2_;
  nn::Conv2d<T> out_;
};

// Three 4x4 stride-2 convolutions (LeakyReLU 0.2 between) ending in a single
// channel: a 32x32 input gives a 4x4 patch map.
template <typename T>
class Discriminator {
 public:
  static constexpr std::size_t kMinSide = 8;

  Discriminator(Rng& rng, std::size_t width = 16);

  void register_into(ParameterSet<T>& params, const std::string& prefix) const;
  std::vector<nn::Conv2d<T>>& layers() noexcept { return layers_; }
  const std::vector<nn::Conv2d<T>>& layers() const noexcept { return layers_; }

 private:
  std::vector<nn::Conv2d<T>> layers_;
};

template <typename T>
struct CycleGanModel {
  Generator<T> gen_st;  // source -> target
  Generator<T> gen_ts;  // target -> source
  Discriminator<T> disc_t;
  Discriminator<T> disc_s;

  // All four networks draw their weights from one stream seeded by `seed`.
  explicit CycleGanModel(std::uint64_t seed) : CycleGanModel(Rng(seed)) {}
  explicit CycleGanModel(Rng&& rng) : gen_st(rng), gen_ts(rng), disc_t(rng), disc_s(rng) {}

  ParameterSet<T> generator_parameters() const;
  ParameterSet<T> discriminator_parameters() const;
  // Generators first ("gen_st.*", "gen_ts.*"), then discriminators.
  ParameterSet<T> parameters() const;
};

// (N,3,H,W) -> (N,1,P,Q) realness map. Throws ShapeError when either side is
// below Discriminator::kMinSide.
template <typename T>
Tensor<T> patch_discriminate(const Discriminator<T>& disc, const Tensor<T>& images);

// mean((map - label)^2), label 1 for real and 0 for fake.
template <typename T>
Tensor<T> adversarial_loss(const Tensor<T>& patch_map, bool target_is_real);

// mean(|original - reconstructed|). Throws ShapeError on shape mismatch.
template <typename T>
Tensor<T> cycle_loss(const Tensor<T>& original, const Tensor<T>& reconstructed);

struct GeneratorLosses {
  double adversarial = 0;  // both directions, unweighted
  double cycle = 0;        // forward + backward, unweighted
  double total = 0;
};

template <typename T>
struct Translations {
  Tensor<T> fake_t;  // G_T(s)
  Tensor<T> fake_s;  // G_S(t)
};

// Generator objective for one batch pair:
//   w_adv * (adv(D_T(G_T(s)), real) + adv(D_S(G_S(t)), real))
//   + w_cyc * (cycle(s, G_S(G_T(s))) + cycle(t, G_T(G_S(t))))
template <typename T>
Tensor<T> generator_objective(const CycleGanModel<T>& model, const Tensor<T>& source_batch,
                              const Tensor<T>& target_batch, double cycle_weight, double adversarial_weight,
                              GeneratorLosses* parts = nullptr, Translations<T>* fakes = nullptr);

struct CycleTrainConfig {
  std::size_t epochs_fixed = 6;
  std::size_t epochs_decay = 6;
  // Batches per epoch; 0 means one pass over the larger of the two sets.
  std::size_t steps_per_epoch = 0;
  std::size_t batch_size = 1;
  double base_lr = 0.0002;
  double cycle_weight = 10.0;
  double adversarial_weight = 1.0;
  std::size_t crop_size = 32;
  double flip_probability = 0.5;
  std::uint64_t seed = 7;
};

struct CycleEpochStats {
  std::size_t epoch = 0;
  double learning_rate = 0;
  double generator_adversarial = 0;
  double cycle = 0;
  double discriminator = 0;
  // D_T's least-squares loss on real target crops and on G_T(source) crops,
  // measured before that step's discriminator update.
  double disc_t_real = 0;
  double disc_t_fake = 0;
};

struct CycleTrainResult {
  CycleGanModel<float> model;
  std::vector<CycleEpochStats> history;
};

// Alternating generator / discriminator Adam updates on random crops with
// horizontal flips, learning rate constant for epochs_fixed epochs and then
// decaying linearly to zero over epochs_decay. Only images are consumed.
// Throws TrainingDiverged carrying the epoch index on a non-finite loss.
CycleTrainResult train_cyclegan(std::span<const Image> source_images, std::span<const Image> target_images,
                                const CycleTrainConfig& config);
// Same, continuing from `initial` instead of a fresh model.
CycleTrainResult train_cyclegan(std::span<const Image> source_images, std::span<const Image> target_images,
                                const CycleTrainConfig& config, CycleGanModel<float> initial);

// Discriminator objective 0.5 * sum over both discriminators of
// adv(D(real), real) + adv(D(fake), fake). The fakes are treated as constants.
template <typename T>
Tensor<T> discriminator_objective(const CycleGanModel<T>& model, const Tensor<T>& source_batch,
                                  const Tensor<T>& target_batch, const Translations<T>& fakes,
                                  double* disc_t_real = nullptr, double* disc_t_fake = nullptr);

// G_T(image) clipped to [0,1]; same shape as the input.
Image translate(const CycleGanModel<float>& model, const Image& image);

// All four networks in one checkpoint, <dir>/cyclegan.ckpt.
void save_cyclegan(const CycleGanModel<float>& model, const std::filesystem::path& dir);
CycleGanModel<float> load_cyclegan(const std::filesystem::path& dir);

}  // namespace uda::cyclegan
