#include "uda/cyclegan/cyclegan.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "uda/tensor/checkpoint.hpp"

namespace uda::cyclegan {
namespace {

template <typename T>
void require_batch(const Tensor<T>& images, const char* op) {
  if (images.rank() != 4) throw ShapeError(op, "batch rank", 4, images.rank());
  if (images.dim(1) != 3) throw ShapeError(op, "image channels", 3, images.dim(1));
}

}  // namespace

template <typename T>
Generator<T>::Generator(Rng& rng, std::size_t width) {
  down1_ = nn::Conv2d<T>::init(3, width, 3, 2, 1, rng);
  down2_ = nn::Conv2d<T>::init(width, 2 * width, 3, 2, 1, rng);
  for (auto& block : res_) {
    block[0] = nn::Conv2d<T>::init(2 * width, 2 * width, 3, 1, 1, rng);
    block[1] = nn::Conv2d<T>::init(2 * width, 2 * width, 3, 1, 1, rng);
  }
  up1_ = nn::Conv2d<T>::init(2 * width, width, 3, 1, 1, rng);
  up2_ = nn::Conv2d<T>::init(width, width, 3, 1, 1, rng);
  out_ = nn::Conv2d<T>::init(width + 3, 3, 3, 1, 1, rng, true, 0.0);
}

template <typename T>
Tensor<T> Generator<T>::operator()(const Tensor<T>& x) const {
  require_batch(x, "generator");
  if (x.dim(2) % kSideMultiple || x.dim(3) % kSideMultiple) {
    throw ShapeError("generator", "image sides must be multiples of 4, got " + shape_str(x.shape()));
  }
  auto h = relu(down2_(relu(down1_(x))));
  for (const auto& block : res_) h = add(h, block[1](relu(block[0](h))));
  h = relu(up1_(upsample_nearest(h, 2)));
  h = relu(up2_(upsample_nearest(h, 2)));
  return add(x, out_(concat_channels(h, x)));
}

template <typename T>
void Generator<T>::register_into(ParameterSet<T>& params, const std::string& prefix) const {
  down1_.register_into(params, prefix + ".down1");
  down2_.register_into(params, prefix + ".down2");
  for (std::size_t b = 0; b < 2; ++b) {
    res_[b][0].register_into(params, prefix + ".res" + std::to_string(b) + ".conv0");
    res_[b][1].register_into(params, prefix + ".res" + std::to_string(b) + ".conv1");
  }
  up1_.register_into(params, prefix + ".up1");
  up2_.register_into(params, prefix + ".up2");
  out_.register_into(params, prefix + ".out");
}

template <typename T>
Discriminator<T>::Discriminator(Rng& rng, std::size_t width) {
  layers_.push_back(nn::Conv2d<T>::init(3, width, 4, 2, 1, rng));
  layers_.push_back(nn::Conv2d<T>::init(width, 2 * width, 4, 2, 1, rng));
  layers_.push_back(nn::Conv2d<T>::init(2 * width, 1, 4, 2, 1, rng, true, 1.0));
}

template <typename T>
void Discriminator<T>::register_into(ParameterSet<T>& params, const std::string& prefix) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].register_into(params, prefix + ".conv" + std::to_string(i));
}

template <typename T>
ParameterSet<T> CycleGanModel<T>::generator_parameters() const {
  ParameterSet<T> p;
  gen_st.register_into(p, "gen_st");
  gen_ts.register_into(p, "gen_ts");
  return p;
}

template <typename T>
ParameterSet<T> CycleGanModel<T>::discriminator_parameters() const {
  ParameterSet<T> p;
  disc_t.register_into(p, "disc_t");
  disc_s.register_into(p, "disc_s");
  return p;
}

template <typename T>
ParameterSet<T> CycleGanModel<T>::parameters() const {
  auto p = generator_parameters();
  p.append(discriminator_parameters());
  return p;
}

template <typename T>
Tensor<T> patch_discriminate(const Discriminator<T>& disc, const Tensor<T>& images) {
  require_batch(images, "patch_discriminate");
  const std::size_t min_side = Discriminator<T>::kMinSide;
  if (images.dim(2) < min_side) throw ShapeError("patch_discriminate", "input height", min_side, images.dim(2));
  if (images.dim(3) < min_side) throw ShapeError("patch_discriminate", "input width", min_side, images.dim(3));
  const auto& layers = disc.layers();
  Tensor<T> h = images;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i](h);
    if (i + 1 < layers.size()) h = leaky_relu(h, T(0.2));
  }
  return h;
}

template <typename T>
Tensor<T> adversarial_loss(const Tensor<T>& patch_map, bool target_is_real) {
  return mse_to_constant(patch_map, target_is_real ? T(1) : T(0));
}

template <typename T>
Tensor<T> cycle_loss(const Tensor<T>& original, const Tensor<T>& reconstructed) {
  return l1_loss(original, reconstructed);
}

template <typename T>
Tensor<T> generator_objective(const CycleGanModel<T>& model, const Tensor<T>& source_batch,
                              const Tensor<T>& target_batch, double cycle_weight, double adversarial_weight,
                              GeneratorLosses* parts, Translations<T>* fakes) {
  const auto fake_t = model.gen_st(source_batch);
  const auto fake_s = model.gen_ts(target_batch);
  const auto cyc = add(cycle_loss(source_batch, model.gen_ts(fake_t)), cycle_loss(target_batch, model.gen_st(fake_s)));
  auto total = scale(cyc, static_cast<T>(cycle_weight));
  double adv_value = 0;
  if (adversarial_weight != 0.0) {
    const auto adv = add(adversarial_loss(patch_discriminate(model.disc_t, fake_t), true),
                         adversarial_loss(patch_discriminate(model.disc_s, fake_s), true));
    adv_value = adv.item();
    total = add(total, scale(adv, static_cast<T>(adversarial_weight)));
  }
  if (parts) *parts = {adv_value, static_cast<double>(cyc.item()), static_cast<double>(total.item())};
  if (fakes) *fakes = {fake_t, fake_s};
  return total;
}

template <typename T>
Tensor<T> discriminator_objective(const CycleGanModel<T>& model, const Tensor<T>& source_batch,
                                  const Tensor<T>& target_batch, const Translations<T>& fakes, double* disc_t_real,
                                  double* disc_t_fake) {
  const auto t_real = adversarial_loss(patch_discriminate(model.disc_t, target_batch), true);
  const auto t_fake = adversarial_loss(patch_discriminate(model.disc_t, fakes.fake_t.detach()), false);
  const auto s_real = adversarial_loss(patch_discriminate(model.disc_s, source_batch), true);
  const auto s_fake = adversarial_loss(patch_discriminate(model.disc_s, fakes.fake_s.detach()), false);
  if (disc_t_real) *disc_t_real = t_real.item();
  if (disc_t_fake) *disc_t_fake = t_fake.item();
  return scale(add(add(t_real, t_fake), add(s_real, s_fake)), T(0.5));
}

namespace {

Tensor<float> sample_batch(std::span<const Image> images, std::span<const std::size_t> order, std::size_t& cursor,
                           const CycleTrainConfig& cfg, Rng& rng) {
  std::vector<Image> crops;
  crops.reserve(cfg.batch_size);
  for (std::size_t b = 0; b < cfg.batch_size; ++b) {
    const auto& img = images[order[cursor++ % order.size()]];
    auto c = random_crop(img, cfg.crop_size, cfg.crop_size, rng);
    if (rng.bernoulli(cfg.flip_probability)) c = hflip(c);
    crops.push_back(std::move(c));
  }
  return stack_images<float>(crops);
}

}  // namespace

CycleTrainResult train_cyclegan(std::span<const Image> source_images, std::span<const Image> target_images,
                                const CycleTrainConfig& config) {
  return train_cyclegan(source_images, target_images, config, CycleGanModel<float>(config.seed));
}

CycleTrainResult train_cyclegan(std::span<const Image> source_images, std::span<const Image> target_images,
                                const CycleTrainConfig& config, CycleGanModel<float> initial) {
  if (source_images.empty() || target_images.empty()) {
    throw std::invalid_argument("train_cyclegan: source and target sets must be non-empty");
  }
  if (config.batch_size == 0 || config.crop_size < Discriminator<float>::kMinSide ||
      config.crop_size % Generator<float>::kSideMultiple) {
    throw std::invalid_argument("train_cyclegan: batch size must be positive and crop size a multiple of 4, >= 8");
  }
  if (!(config.cycle_weight > 0.0) || config.adversarial_weight < 0.0) {
    throw std::invalid_argument("train_cyclegan: cycle weight must be positive, adversarial weight non-negative");
  }
  for (auto set : {source_images, target_images}) {
    for (const auto& img : set) {
      require_image(img, "train_cyclegan");
      if (image_height(img) < config.crop_size || image_width(img) < config.crop_size) {
        throw std::invalid_argument("train_cyclegan: crop size exceeds smallest training image side");
      }
    }
  }

  CycleTrainResult result{std::move(initial), {}};
  auto& model = result.model;
  const auto gen_params = model.generator_parameters();
  auto disc_params = model.discriminator_parameters();
  Adam<float> g_opt(gen_params.tensors(), config.base_lr);
  Adam<float> d_opt(disc_params.tensors(), config.base_lr);
  const LinearDecaySchedule schedule{config.base_lr, config.epochs_fixed, config.epochs_decay};
  Rng rng = Rng(config.seed).fork(0xC7C1E);

  const std::size_t larger = std::max(source_images.size(), target_images.size());
  const std::size_t steps =
      config.steps_per_epoch ? config.steps_per_epoch : (larger + config.batch_size - 1) / config.batch_size;
  std::vector<std::size_t> s_order(source_images.size()), t_order(target_images.size());

  for (std::size_t epoch = 0; epoch < config.epochs_fixed + config.epochs_decay; ++epoch) {
    const double lr = schedule(epoch);
    g_opt.set_learning_rate(lr);
    d_opt.set_learning_rate(lr);
    std::iota(s_order.begin(), s_order.end(), 0);
    std::iota(t_order.begin(), t_order.end(), 0);
    rng.shuffle(s_order);
    rng.shuffle(t_order);
    std::size_t s_cursor = 0, t_cursor = 0;

    CycleEpochStats stats;
    stats.epoch = epoch;
    stats.learning_rate = lr;
    for (std::size_t step = 0; step < steps; ++step) {
      const auto s = sample_batch(source_images, s_order, s_cursor, config, rng);
      const auto t = sample_batch(target_images, t_order, t_cursor, config, rng);

      GeneratorLosses parts;
      Translations<float> fakes;
      const auto g_loss =
          generator_objective(model, s, t, config.cycle_weight, config.adversarial_weight, &parts, &fakes);
      if (!std::isfinite(parts.total)) {
        throw TrainingDiverged("cyclegan generator loss became non-finite in epoch " + std::to_string(epoch), epoch);
      }
      backward(g_loss);
      g_opt.step();
      disc_params.clear_grad();

      double t_real = 0, t_fake = 0;
      const auto d_loss = discriminator_objective(model, s, t, fakes, &t_real, &t_fake);
      const double d_value = d_loss.item();
      if (!std::isfinite(d_value)) {
        throw TrainingDiverged("cyclegan discriminator loss became non-finite in epoch " + std::to_string(epoch),
                               epoch);
      }
      backward(d_loss);
      d_opt.step();

      stats.generator_adversarial += parts.adversarial;
      stats.cycle += parts.cycle;
      stats.discriminator += d_value;
      stats.disc_t_real += t_real;
      stats.disc_t_fake += t_fake;
    }
    const double n = static_cast<double>(steps);
    for (double* v : {&stats.generator_adversarial, &stats.cycle, &stats.discriminator, &stats.disc_t_real,
                      &stats.disc_t_fake}) {
      *v /= n;
    }
    result.history.push_back(stats);
  }
  return result;
}

Image translate(const CycleGanModel<float>& model, const Image& image) {
  require_image(image, "translate");
  const Image c = image.detach();
  const auto out = model.gen_st(stack_images<float>(std::span<const Image>(&c, 1)));
  return clip01(unstack_image(out, 0));
}

#define UDA_INSTANTIATE_CYCLEGAN(T)                                                                                  \
  template class Generator<T>;                                                                                       \
  template class Discriminator<T>;                                                                                   \
  template struct CycleGanModel<T>;                                                                                  \
  template Tensor<T> patch_discriminate(const Discriminator<T>&, const Tensor<T>&);                                  \
  template Tensor<T> adversarial_loss(const Tensor<T>&, bool);                                                       \
  template Tensor<T> cycle_loss(const Tensor<T>&, const Tensor<T>&);                                                 \
  template Tensor<T> generator_objective(const CycleGanModel<T>&, const Tensor<T>&, const Tensor<T>&, double, double, \
                                         GeneratorLosses*, Translations<T>*);                                        \
  template Tensor<T> discriminator_objective(const CycleGanModel<T>&, const Tensor<T>&, const Tensor<T>&,            \
                                             const Translations<T>&, double*, double*);

UDA_INSTANTIATE_CYCLEGAN(float)
UDA_INSTANTIATE_CYCLEGAN(double)

#undef UDA_INSTANTIATE_CYCLEGAN

void save_cyclegan(const CycleGanModel<float>& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_parameters(model.parameters(), dir / "cyclegan.ckpt");
}

CycleGanModel<float> load_cyclegan(const std::filesystem::path& dir) {
  CycleGanModel<float> model(0);
  auto params = model.parameters();
  load_parameters(params, dir / "cyclegan.ckpt");
  return model;
}

}  // namespace uda::cyclegan
