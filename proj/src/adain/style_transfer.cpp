#include "uda/adain/style_transfer.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"
#include "uda/data/dataset.hpp"
#include "uda/tensor/checkpoint.hpp"
#include "uda/tensor/optim.hpp"

namespace uda::adain {
namespace {

template <typename T>
void require_feature(const Tensor<T>& f, const char* op) {
  if (f.rank() != 4) throw ShapeError(op, "feature rank", 4, f.rank());
}

template <typename T>
void require_even_image_batch(const Tensor<T>& images, const char* op) {
  if (images.rank() != 4) throw ShapeError(op, "batch rank", 4, images.rank());
  if (images.dim(1) != 3) throw ShapeError(op, "image channels", 3, images.dim(1));
  if (images.dim(2) % 2 || images.dim(3) % 2) {
    throw ShapeError(op, "image sides must be even, got " + shape_str(images.shape()));
  }
}

}  // namespace

template <typename T>
Tensor<T> channel_sigma(const Tensor<T>& feature) {
  return uda::sqrt(add_scalar(channel_var(feature), static_cast<T>(kSigmaEpsilon)));
}

template <typename T>
Tensor<T> adain(const Tensor<T>& h_s, const Tensor<T>& h_t) {
  require_feature(h_s, "adain");
  require_feature(h_t, "adain");
  if (h_s.dim(0) != h_t.dim(0)) throw ShapeError("adain", "batch", h_s.dim(0), h_t.dim(0));
  if (h_s.dim(1) != h_t.dim(1)) throw ShapeError("adain", "channels", h_s.dim(1), h_t.dim(1));
  const std::size_t h = h_s.dim(2), w = h_s.dim(3);
  const auto mu_s = expand_spatial(channel_mean(h_s), h, w);
  const auto sd_s = expand_spatial(channel_sigma(h_s), h, w);
  const auto mu_t = expand_spatial(channel_mean(h_t), h, w);
  const auto sd_t = expand_spatial(channel_sigma(h_t), h, w);
  return add(mul(div(sub(h_s, mu_s), sd_s), sd_t), mu_t);
}

template <typename T>
Tensor<T> blend(const Tensor<T>& h_s, const Tensor<T>& h_hat_t, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("blend: alpha must lie in [0,1]");
  if (h_s.shape() != h_hat_t.shape()) {
    throw ShapeError("blend", "operand shapes differ: " + shape_str(h_s.shape()) + " vs " + shape_str(h_hat_t.shape()));
  }
  // The endpoints return the operands themselves so they are exact.
  if (alpha == 0.0) return h_s;
  if (alpha == 1.0) return h_hat_t;
  return add(scale(h_s, static_cast<T>(1.0 - alpha)), scale(h_hat_t, static_cast<T>(alpha)));
}

template <typename T>
StyleTransferModel<T>::StyleTransferModel(std::uint64_t seed, std::vector<std::size_t> layer_taps)
    : taps_(std::move(layer_taps)) {
  if (taps_.empty()) throw std::invalid_argument("style transfer: layer_taps must not be empty");
  for (std::size_t i = 0; i < taps_.size(); ++i) {
    if (taps_[i] >= kEncoderLayers) throw std::invalid_argument("style transfer: tap index out of range");
    if (i > 0 && taps_[i] <= taps_[i - 1]) throw std::invalid_argument("style transfer: taps must be increasing");
  }
  if (taps_.back() != kEncoderLayers - 1) {
    throw std::invalid_argument("style transfer: final tap must be the encoder output layer");
  }
  Rng rng(seed);
  encoder_.push_back(nn::Conv2d<T>::init(3, 16, 3, 1, 1, rng, false));
  encoder_.push_back(nn::Conv2d<T>::init(16, 32, 3, 2, 1, rng, false));
  encoder_.push_back(nn::Conv2d<T>::init(32, 32, 3, 1, 1, rng, false));
  decoder_.push_back(nn::Conv2d<T>::init(32, 32, 3, 1, 1, rng));
  decoder_.push_back(nn::Conv2d<T>::init(32, 16, 3, 1, 1, rng));
  decoder_.push_back(nn::Conv2d<T>::init(16, 3, 3, 1, 1, rng, true, 1.0));
}

template <typename T>
std::vector<Tensor<T>> StyleTransferModel<T>::encode_layers(const Tensor<T>& images) const {
  require_even_image_batch(images, "encode");
  std::vector<Tensor<T>> out;
  Tensor<T> x = images;
  for (const auto& layer : encoder_) {
    x = relu(layer(x));
    out.push_back(x);
  }
  return out;
}

template <typename T>
Tensor<T> StyleTransferModel<T>::encode(const Tensor<T>& images) const {
  return encode_layers(images).back();
}

template <typename T>
Tensor<T> StyleTransferModel<T>::decode(const Tensor<T>& features) const {
  if (features.rank() != 4) throw ShapeError("decode", "feature rank", 4, features.rank());
  if (features.dim(1) != 32) throw ShapeError("decode", "feature channels", 32, features.dim(1));
  auto x = relu(decoder_[0](features));
  x = upsample_nearest(x, 2);
  x = relu(decoder_[1](x));
  return decoder_[2](x);
}

template <typename T>
ParameterSet<T> StyleTransferModel<T>::parameters() const {
  ParameterSet<T> p;
  for (std::size_t i = 0; i < encoder_.size(); ++i) encoder_[i].register_into(p, "encoder.conv" + std::to_string(i));
  p.append(decoder_parameters());
  return p;
}

template <typename T>
ParameterSet<T> StyleTransferModel<T>::decoder_parameters() const {
  ParameterSet<T> p;
  for (std::size_t i = 0; i < decoder_.size(); ++i) decoder_[i].register_into(p, "decoder.conv" + std::to_string(i));
  return p;
}

template <typename T>
Tensor<T> content_loss(const StyleTransferModel<T>& model, const Tensor<T>& decoded, const Tensor<T>& h_hat_t) {
  return mse_loss(model.encode(decoded), h_hat_t);
}

template <typename T>
Tensor<T> content_loss(const StyleTransferModel<T>& model, const Tensor<T>& h_hat_t) {
  return content_loss(model, model.decode(h_hat_t), h_hat_t);
}

namespace {

template <typename T>
Tensor<T> style_terms(const std::vector<std::size_t>& taps, const std::vector<Tensor<T>>& dec_layers,
                      const std::vector<Tensor<T>>& t_layers) {
  if (taps.empty()) throw std::invalid_argument("style_loss: no layer taps");
  Tensor<T> total;
  for (std::size_t tap : taps) {
    const auto& a = dec_layers.at(tap);
    const auto& b = t_layers.at(tap);
    auto term = add(mse_loss(channel_mean(a), channel_mean(b)), mse_loss(channel_sigma(a), channel_sigma(b)));
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

}  // namespace

template <typename T>
Tensor<T> style_loss(const StyleTransferModel<T>& model, const Tensor<T>& decoded, const Tensor<T>& t) {
  return style_terms(model.layer_taps(), model.encode_layers(decoded), model.encode_layers(t));
}

template <typename T>
Tensor<T> training_objective(const StyleTransferModel<T>& model, const Tensor<T>& source_batch,
                             const Tensor<T>& target_batch, double style_weight, StepLosses* parts) {
  if (source_batch.dim(0) != target_batch.dim(0)) {
    throw ShapeError("training_objective", "batch", source_batch.dim(0), target_batch.dim(0));
  }
  const auto t_layers = model.encode_layers(target_batch);
  const auto h_hat = adain(model.encode(source_batch), t_layers.back());
  const auto decoded = model.decode(h_hat);
  const auto dec_layers = model.encode_layers(decoded);
  const auto lc = mse_loss(dec_layers.back(), h_hat);
  const auto ls = style_terms(model.layer_taps(), dec_layers, t_layers);
  auto total = add(lc, scale(ls, static_cast<T>(style_weight)));
  if (parts) *parts = {static_cast<double>(lc.item()), static_cast<double>(ls.item()), static_cast<double>(total.item())};
  return total;
}

StyleTrainResult train_style_transfer(std::span<const Image> source_images, std::span<const Image> target_images,
                                      const StyleTrainConfig& config) {
  if (source_images.empty() || target_images.empty()) {
    throw std::invalid_argument("train_style_transfer: source and target sets must be non-empty");
  }
  if (config.batch_size == 0 || config.crop_size == 0 || config.crop_size % 2) {
    throw std::invalid_argument("train_style_transfer: batch size must be positive and crop size positive and even");
  }
  for (auto set : {source_images, target_images}) {
    for (const auto& img : set) {
      require_image(img, "train_style_transfer");
      if (image_height(img) < config.crop_size || image_width(img) < config.crop_size) {
        throw std::invalid_argument("train_style_transfer: crop size exceeds smallest training image side");
      }
    }
  }

  StyleTrainResult result{StyleTransferModel<float>(config.seed, config.layer_taps), {}};
  auto& model = result.model;
  const auto decoder = model.decoder_parameters();
  Adam<float> opt(decoder.tensors(), config.base_lr);
  Rng rng = Rng(config.seed).fork(0xADA1);

  for (std::size_t it = 0; it < config.iterations; ++it) {
    std::vector<Image> src, tgt;
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      const auto& s = source_images[rng.below(source_images.size())];
      const auto& t = target_images[rng.below(target_images.size())];
      src.push_back(random_crop(s, config.crop_size, config.crop_size, rng));
      tgt.push_back(random_crop(t, config.crop_size, config.crop_size, rng));
    }
    StepLosses parts;
    const auto loss = training_objective<float>(model, stack_images<float>(src), stack_images<float>(tgt),
                                                config.style_loss_weight, &parts);
    if (!std::isfinite(parts.total)) {
      throw TrainingDiverged("style transfer loss became non-finite at iteration " + std::to_string(it), it);
    }
    backward(loss);
    opt.step();
    result.history.push_back({it, parts});
  }
  return result;
}

Image stylize(const StyleTransferModel<float>& model, const Image& content, const Image& style, double alpha) {
  require_image(content, "stylize");
  require_image(style, "stylize");
  const Image c = content.detach();
  const Image s = style.detach();
  const auto h_s = model.encode(stack_images<float>(std::span<const Image>(&c, 1)));
  const auto h_t = model.encode(stack_images<float>(std::span<const Image>(&s, 1)));
  const auto mixed = blend(h_s, adain(h_s, h_t), alpha);
  return clip01(unstack_image(model.decode(mixed), 0));
}

#define UDA_INSTANTIATE_ADAIN(T)                                                                                    \
  template Tensor<T> channel_sigma(const Tensor<T>&);                                                               \
  template Tensor<T> adain(const Tensor<T>&, const Tensor<T>&);                                                     \
  template Tensor<T> blend(const Tensor<T>&, const Tensor<T>&, double);                                             \
  template class StyleTransferModel<T>;                                                                             \
  template Tensor<T> content_loss(const StyleTransferModel<T>&, const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> content_loss(const StyleTransferModel<T>&, const Tensor<T>&);                                  \
  template Tensor<T> style_loss(const StyleTransferModel<T>&, const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> training_objective(const StyleTransferModel<T>&, const Tensor<T>&, const Tensor<T>&, double,   \
                                        StepLosses*);

UDA_INSTANTIATE_ADAIN(float)
UDA_INSTANTIATE_ADAIN(double)

#undef UDA_INSTANTIATE_ADAIN

void save_style_model(const StyleTransferModel<float>& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_parameters(model.parameters(), dir / "adain.ckpt");
  std::ofstream out(dir / "adain.json", std::ios::binary);
  out << nlohmann::json{{"layer_taps", model.layer_taps()}}.dump(1) << '\n';
  if (!out) throw std::runtime_error("save_style_model: cannot write " + (dir / "adain.json").string());
}

StyleTransferModel<float> load_style_model(const std::filesystem::path& dir) {
  const auto meta_path = dir / "adain.json";
  std::ifstream in(meta_path, std::ios::binary);
  if (!in) throw data::DatasetError(meta_path.string(), "cannot open");
  std::vector<std::size_t> taps;
  try {
    taps = nlohmann::json::parse(in).at("layer_taps").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw data::DatasetError(meta_path.string(), e.what());
  }
  // Every weight, frozen encoder included, comes from the checkpoint.
  StyleTransferModel<float> model(0, taps);
  auto params = model.parameters();
  load_parameters(params, dir / "adain.ckpt");
  return model;
}

}  // namespace uda::adain
