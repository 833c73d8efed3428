#include <cmath>
#include <stdexcept>
#include <vector>

#include "dataset_support.hpp"
#include "doctest.h"
#include "gradient_suites.hpp"
#include "support.hpp"
#include "uda/adain/style_transfer.hpp"
#include "uda/tensor/optim.hpp"

using namespace uda;
using adain::blend;
using adain::channel_sigma;
using adain::content_loss;
using adain::kSigmaEpsilon;
using adain::StyleTrainConfig;
using adain::StyleTransferModel;
using adain::style_loss;
using adain::stylize;
using adain::train_style_transfer;
using adain::training_objective;
using uda::testing::bit_equal;
using uda::testing::image_set;
using uda::testing::rand_t;

namespace {

// Independent population statistics of one channel, in double.
struct Stats {
  double mean;
  double sd;
};
Stats pop_stats(const std::vector<double>& v) {
  double m = 0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double q = 0;
  for (double x : v) q += (x - m) * (x - m);
  return {m, std::sqrt(q / static_cast<double>(v.size()))};
}

template <typename T>
std::vector<double> channel_values(const Tensor<T>& f, std::size_t n, std::size_t c) {
  const std::size_t hw = f.dim(2) * f.dim(3);
  const auto d = f.data();
  std::vector<double> out(hw);
  for (std::size_t i = 0; i < hw; ++i) out[i] = d[(n * f.dim(1) + c) * hw + i];
  return out;
}

Tensor<double> feature(std::vector<double> v, std::size_t h, std::size_t w) {
  return Tensor<double>(Shape{1, 1, h, w}, std::move(v));
}

}  // namespace

TEST_CASE("adain hand example against a population-stats oracle") {
  const std::vector<double> s{1, 2, 3, 4}, t{0, 0, 10, 10};
  const auto out = adain::adain(feature(s, 2, 2), feature(t, 2, 2));
  const Stats ss = pop_stats(s), st = pop_stats(t);
  CHECK(ss.sd == doctest::Approx(std::sqrt(1.25)));
  CHECK(st.sd == doctest::Approx(5.0));
  const double expected[] = {-1.708, 2.764, 7.236, 11.708};
  for (std::size_t i = 0; i < 4; ++i) {
    const double sig_s = std::sqrt(ss.sd * ss.sd + kSigmaEpsilon), sig_t = std::sqrt(st.sd * st.sd + kSigmaEpsilon);
    const double oracle = sig_t * (s[i] - ss.mean) / sig_s + st.mean;
    CHECK(out.data()[i] == doctest::Approx(oracle).epsilon(1e-12));
    CHECK(out.data()[i] == doctest::Approx(expected[i]).epsilon(1e-3));
  }
}

TEST_CASE("adain identities and errors") {
  Rng rng(3);
  SUBCASE("self alignment") {
    auto h = rand_t<float>({2, 4, 5, 5}, rng, -2, 2, false);
    const auto out = adain::adain(h, h);
    for (std::size_t i = 0; i < h.numel(); ++i) CHECK(out.data()[i] == doctest::Approx(h.data()[i]).epsilon(1e-5));
  }
  SUBCASE("constant source channel maps to the target mean") {
    const auto out = adain::adain(feature({2, 2, 2, 2}, 2, 2), feature({1, 3, 5, 7, 9, 11}, 2, 3));
    for (double v : out.data()) CHECK(v == doctest::Approx(6.0).epsilon(1e-9));
  }
  SUBCASE("spatial sizes may differ, output takes the source shape") {
    auto hs = rand_t<float>({1, 3, 4, 6}, rng, -1, 1, false);
    auto ht = rand_t<float>({1, 3, 7, 3}, rng, -1, 1, false);
    CHECK(adain::adain(hs, ht).shape() == hs.shape());
  }
  SUBCASE("channel and batch mismatches") {
    auto a = rand_t<float>({1, 3, 4, 4}, rng, -1, 1, false);
    auto b = rand_t<float>({1, 2, 4, 4}, rng, -1, 1, false);
    auto c = rand_t<float>({2, 3, 4, 4}, rng, -1, 1, false);
    CHECK_THROWS_AS(adain::adain(a, b), ShapeError);
    CHECK_THROWS_AS(adain::adain(a, c), ShapeError);
    try {
      adain::adain(a, b);
    } catch (const ShapeError& e) {
      CHECK(e.dimension() == "channels");
    }
  }
}

TEST_CASE("adain statistics matching and idempotence (property)") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = rng.between(1, 2), c = rng.between(1, 4);
    const Shape ss{n, c, static_cast<std::size_t>(rng.between(2, 6)), static_cast<std::size_t>(rng.between(2, 6))};
    const Shape st{n, c, static_cast<std::size_t>(rng.between(2, 6)), static_cast<std::size_t>(rng.between(2, 6))};
    auto hs = rand_t<float>(ss, rng, -3, 3, false);
    auto ht = rand_t<float>(st, rng, rng.uniform(-2, 0), rng.uniform(0.5, 4), false);
    const auto out = adain::adain(hs, ht);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < c; ++k) {
        const Stats so = pop_stats(channel_values(out, i, k)), sto = pop_stats(channel_values(ht, i, k));
        CHECK(std::abs(so.mean - sto.mean) < 1e-4);
        CHECK(std::abs(so.sd - sto.sd) < 1e-4);
      }
    const auto twice = adain::adain(out, ht);
    for (std::size_t j = 0; j < out.numel(); ++j) CHECK(std::abs(twice.data()[j] - out.data()[j]) < 1e-4);
  }
}

TEST_CASE("blend endpoints, midpoint and range") {
  Rng rng(5);
  auto hs = rand_t<float>({1, 3, 4, 4}, rng, -1, 1, false);
  auto hh = rand_t<float>({1, 3, 4, 4}, rng, -1, 1, false);
  CHECK(bit_equal(blend(hs, hh, 0.0).data(), hs.data()));
  CHECK(bit_equal(blend(hs, hh, 1.0).data(), hh.data()));
  const auto mid = blend(hs, hh, 0.5);
  for (std::size_t i = 0; i < hs.numel(); ++i) {
    CHECK(mid.data()[i] == doctest::Approx(0.5 * (hs.data()[i] + hh.data()[i])).epsilon(1e-6));
  }
  // Affine in alpha: b(0.25) + b(0.75) = b(0) + b(1).
  const auto q1 = blend(hs, hh, 0.25), q3 = blend(hs, hh, 0.75);
  for (std::size_t i = 0; i < hs.numel(); ++i) {
    CHECK(q1.data()[i] + q3.data()[i] == doctest::Approx(hs.data()[i] + hh.data()[i]).epsilon(1e-5));
  }
  CHECK_THROWS_AS(blend(hs, hh, -0.1), std::invalid_argument);
  CHECK_THROWS_AS(blend(hs, hh, 1.5), std::invalid_argument);
  CHECK_THROWS_AS(blend(hs, hh, std::nan("")), std::invalid_argument);
  CHECK_THROWS_AS(blend(hs, rand_t<float>({1, 3, 4, 5}, rng, -1, 1, false), 0.5), ShapeError);
}

TEST_CASE("style transfer model structure") {
  StyleTransferModel<float> m(1);
  Rng rng(2);
  auto x = rand_t<float>({2, 3, 16, 12}, rng, 0, 1, false);
  const auto layers = m.encode_layers(x);
  REQUIRE(layers.size() == 3);
  CHECK(layers[0].shape() == Shape{2, 16, 16, 12});
  CHECK(layers[2].shape() == Shape{2, 32, 8, 6});
  CHECK(m.decode(layers[2]).shape() == x.shape());
  CHECK_THROWS_AS(m.encode(rand_t<float>({1, 3, 15, 16}, rng, 0, 1, false)), ShapeError);

  const auto params = m.parameters();
  CHECK(params.items().front().name == "encoder.conv0.weight");
  CHECK(params.find("decoder.conv2.bias") != nullptr);
  for (const auto& p : params.items()) CHECK(p.tensor.requires_grad() == (p.name.rfind("decoder.", 0) == 0));

  CHECK_THROWS_AS(StyleTransferModel<float>(1, {}), std::invalid_argument);
  CHECK_THROWS_AS(StyleTransferModel<float>(1, {0, 1}), std::invalid_argument);
  CHECK_THROWS_AS(StyleTransferModel<float>(1, {1, 0, 2}), std::invalid_argument);
  CHECK_THROWS_AS(StyleTransferModel<float>(1, {0, 3}), std::invalid_argument);
  CHECK_NOTHROW(StyleTransferModel<float>(1, {2}));
}

TEST_CASE("content loss") {
  StyleTransferModel<double> m(4);
  Rng rng(8);
  auto x = rand_t<double>({1, 3, 8, 8}, rng, 0, 1, false);
  const auto h = m.encode(x);
  SUBCASE("zero when re-encoding the decoded image reproduces the features") {
    CHECK(content_loss(m, x, h).item() == 0.0);
  }
  SUBCASE("uniform offset c gives c squared") {
    const auto shifted = add_scalar(h, 0.3);
    CHECK(content_loss(m, x, shifted).item() == doctest::Approx(0.09).epsilon(1e-12));
  }
  SUBCASE("matches an independent re-encode-and-mse oracle") {
    auto hh = rand_t<double>(h.shape(), rng, 0, 1, false);
    const auto dec = m.decode(hh);
    const auto re = m.encode(dec);
    double acc = 0;
    for (std::size_t i = 0; i < re.numel(); ++i) acc += (re.data()[i] - hh.data()[i]) * (re.data()[i] - hh.data()[i]);
    acc /= static_cast<double>(re.numel());
    CHECK(content_loss(m, hh).item() == doctest::Approx(acc).epsilon(1e-12));
    CHECK(content_loss(m, hh).item() >= 0.0);
  }
}

TEST_CASE("style loss") {
  Rng rng(9);
  auto t = rand_t<double>({2, 3, 8, 8}, rng, 0, 1, false);
  StyleTransferModel<double> m(4);
  CHECK(style_loss(m, t, t).item() == 0.0);

  SUBCASE("homogeneity: bias-free ReLU encoder scales stats by 2") {
    // Zero biases make every tapped layer positively homogeneous, so all
    // means double and sigmas double up to the epsilon.
    const auto d = scale(t, 2.0);
    double oracle = 0;
    for (const auto& f : m.encode_layers(t)) {
      const auto mu = channel_mean(f);
      const auto sg = channel_sigma(f);
      const auto sg2 = channel_sigma(scale(f, 2.0));
      double a = 0, b = 0;
      for (std::size_t i = 0; i < mu.numel(); ++i) {
        a += mu.data()[i] * mu.data()[i];
        b += (sg2.data()[i] - sg.data()[i]) * (sg2.data()[i] - sg.data()[i]);
      }
      oracle += (a + b) / static_cast<double>(mu.numel());
    }
    const double l = style_loss(m, d, t).item();
    CHECK(l > 0.0);
    CHECK(l == doctest::Approx(oracle).epsilon(1e-9));
  }
  SUBCASE("two taps against a per-layer stats oracle") {
    StyleTransferModel<double> m2(4, {1, 2});
    auto d = rand_t<double>({2, 3, 8, 8}, rng, 0, 1, false);
    const auto ld = m2.encode_layers(d), lt = m2.encode_layers(t);
    double oracle = 0;
    for (std::size_t tap : {1u, 2u}) {
      const std::size_t n = ld[tap].dim(0), c = ld[tap].dim(1);
      double a = 0, b = 0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < c; ++k) {
          const Stats sd = pop_stats(channel_values(ld[tap], i, k)), st = pop_stats(channel_values(lt[tap], i, k));
          a += (sd.mean - st.mean) * (sd.mean - st.mean);
          const double gd = std::sqrt(sd.sd * sd.sd + kSigmaEpsilon), gt = std::sqrt(st.sd * st.sd + kSigmaEpsilon);
          b += (gd - gt) * (gd - gt);
        }
      oracle += (a + b) / static_cast<double>(n * c);
    }
    CHECK(style_loss(m2, d, t).item() == doctest::Approx(oracle).epsilon(1e-9));
  }
}

TEST_CASE("style transfer gradients (float32)") {
  uda::testing::adain_gradients<float>(uda::testing::GradCheck<float>{});
}
TEST_CASE("style transfer gradients (float64)") {
  uda::testing::adain_gradients<double>(uda::testing::GradCheck<double>{});
}

TEST_CASE("train_style_transfer") {
  const auto src = image_set(1, true, 8);
  const auto tgt = image_set(2, false, 8);

  SUBCASE("zero iterations returns the initial decoder") {
    StyleTrainConfig cfg;
    cfg.iterations = 0;
    const auto r = train_style_transfer(src, tgt, cfg);
    CHECK(r.history.empty());
    const StyleTransferModel<float> fresh(cfg.seed);
    const auto a = r.model.parameters().items();
    const auto b = fresh.parameters().items();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(bit_equal(a[i].tensor.data(), b[i].tensor.data()));
  }
  SUBCASE("200 iterations with seed 7 lower the loss, deterministically") {
    StyleTrainConfig cfg;
    cfg.iterations = 200;
    cfg.seed = 7;
    const auto r = train_style_transfer(src, tgt, cfg);
    REQUIRE(r.history.size() == 200);
    auto window = [&](std::size_t from) {
      double acc = 0;
      for (std::size_t i = from; i < from + 20; ++i) acc += r.history[i].losses.total;
      return acc / 20;
    };
    MESSAGE("style loss first/last 20-iteration mean: " << window(0) << " -> " << window(180));
    CHECK(window(180) < window(0));
    CHECK(r.history.back().losses.total < r.history.front().losses.total);

    const auto again = train_style_transfer(src, tgt, cfg);
    CHECK(again.history.back().losses.total == r.history.back().losses.total);

    const auto a = stylize(r.model, src[0], tgt[3], 1.0);
    const auto b = stylize(again.model, src[0], tgt[3], 1.0);
    CHECK(bit_equal(a.data(), b.data()));
    CHECK(a.shape() == src[0].shape());
    for (float v : a.data()) CHECK((v >= 0.0f && v <= 1.0f));

    // Channel statistics move toward the style image.
    auto dist = [](const std::array<double, 6>& p, const std::array<double, 6>& q) {
      double d = 0;
      for (std::size_t i = 0; i < 6; ++i) d += (p[i] - q[i]) * (p[i] - q[i]);
      return d;
    };
    const auto ts = image_channel_stats(tgt[3]);
    CHECK(dist(image_channel_stats(a), ts) < dist(image_channel_stats(src[0]), ts));
  }
  SUBCASE("zero style weight reduces to autoencoding") {
    StyleTrainConfig cfg;
    cfg.iterations = 150;
    cfg.style_loss_weight = 0.0;
    const auto r = train_style_transfer(src, tgt, cfg);
    CHECK(r.history.back().losses.content < r.history.front().losses.content);
  }
  SUBCASE("alpha 0 recovers the content image under a reconstruction decoder") {
    // Fit the decoder to invert the encoder in pixel space, then check that
    // stylization at alpha 0 bypasses the target statistics.
    StyleTransferModel<float> m(7);
    Adam<float> opt(m.decoder_parameters().tensors(), 3e-3);
    const auto batch = stack_images<float>(src);
    for (int it = 0; it < 300; ++it) {
      backward(mse_loss(m.decode(m.encode(batch)), batch));
      opt.step();
    }
    const auto out = stylize(m, src[1], tgt[0], 0.0);
    const double p = psnr(out, src[1]);
    MESSAGE("alpha 0 reconstruction psnr " << p);
    CHECK(p > 20.0);
    CHECK(psnr(stylize(m, src[1], tgt[0], 1.0), src[1]) < p);
  }
  SUBCASE("errors") {
    StyleTrainConfig cfg;
    cfg.iterations = 3;
    CHECK_THROWS_AS(train_style_transfer({}, tgt, cfg), std::invalid_argument);
    cfg.crop_size = 64;
    CHECK_THROWS_AS(train_style_transfer(src, tgt, cfg), std::invalid_argument);
    cfg.crop_size = 32;
    auto bad = src;
    std::vector<float> px(bad[0].data().begin(), bad[0].data().end());
    for (auto& v : px) v = std::nanf("");
    for (auto& img : bad) img = Image(img.shape(), px);
    try {
      train_style_transfer(bad, tgt, cfg);
      FAIL("expected divergence");
    } catch (const TrainingDiverged& e) {
      CHECK(e.step() == 0);
    }
  }
}

TEST_CASE("style model checkpoint round trip") {
  const auto dir = uda::testing::scratch_dir("adain_ckpt");
  StyleTransferModel<float> model(11, {1, 2});
  Rng rng(3);
  for (const auto& p : model.decoder_parameters().items())
    for (auto& v : Tensor<float>(p.tensor).mutable_data()) v += static_cast<float>(rng.normal() * 0.05);
  adain::save_style_model(model, dir);
  const auto loaded = adain::load_style_model(dir);
  CHECK(loaded.layer_taps() == std::vector<std::size_t>{1, 2});
  const Image content = uda::testing::random_image(rng, 16, 16);
  const Image style = uda::testing::random_image(rng, 8, 12);
  CHECK(bit_equal(stylize(loaded, content, style, 0.7).data(), stylize(model, content, style, 0.7).data()));
  CHECK_THROWS(adain::load_style_model(dir / "missing"));
}
