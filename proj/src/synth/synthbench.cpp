#include "uda/synth/synthbench.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <stdexcept>

#include "json.hpp"
#include "uda/tensor/random.hpp"

namespace uda::synth {

using data::BBox;
using data::InstanceMask;
using json = nlohmann::json;

namespace {

enum class Figure { disc, square, triangle };

Figure shape_of(const std::string& name) {
  if (name == "disc") return Figure::disc;
  if (name == "square") return Figure::square;
  if (name == "triangle") return Figure::triangle;
  throw std::invalid_argument("unknown shape class '" + name + "' (expected disc, square or triangle)");
}

// Pixel (r, c) belongs to the shape when its center does.
InstanceMask shape_mask(Figure shape, std::size_t n, double x0, double y0, double s) {
  InstanceMask m(n, n);
  const double cx = x0 + s / 2, cy = y0 + s / 2;
  for (std::size_t r = 0; r < n; ++r) {
    const double py = r + 0.5;
    for (std::size_t c = 0; c < n; ++c) {
      const double px = c + 0.5;
      bool in = false;
      switch (shape) {
        case Figure::disc:
          in = (px - cx) * (px - cx) + (py - cy) * (py - cy) <= s * s / 4;
          break;
        case Figure::square:
          in = px >= x0 && px < x0 + s && py >= y0 && py < y0 + s;
          break;
        case Figure::triangle: {
          const double v = (py - y0) / s;  // 0 at the apex, 1 at the base
          in = v > 0 && v < 1 && std::abs(px - cx) <= v * s / 2;
          break;
        }
      }
      if (in) m.set(r, c);
    }
  }
  return m;
}

bool boxes_touch(const BBox& a, const BBox& b) {
  // one pixel gap required
  return a.x_min < b.x_max + 1 && b.x_min < a.x_max + 1 && a.y_min < b.y_max + 1 && b.y_min < a.y_max + 1;
}

std::array<double, 3> hsv(double h, double s, double v) {
  const double c = v * s, hp = std::fmod(h, 360.0) / 60.0, x = c * (1 - std::abs(std::fmod(hp, 2.0) - 1));
  std::array<double, 3> rgb{};
  const int sector = static_cast<int>(hp);
  const std::array<std::array<double, 3>, 6> table{{{c, x, 0}, {x, c, 0}, {0, c, x}, {0, x, c}, {x, 0, c}, {c, 0, x}}};
  rgb = table[std::clamp(sector, 0, 5)];
  for (auto& ch : rgb) ch += v - c;
  return rgb;
}

float quantize(double v) { return static_cast<float>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)) / 255.0f; }

Rng scene_rng(std::uint64_t seed, std::uint64_t index) { return Rng(seed).fork(index); }

}  // namespace

void validate(const SceneConfig& c) {
  if (c.shape_classes.empty()) throw std::invalid_argument("scene config: no shape classes");
  std::set<std::string> seen;
  for (const auto& name : c.shape_classes) {
    shape_of(name);
    if (!seen.insert(name).second) throw std::invalid_argument("scene config: duplicate class '" + name + "'");
  }
  if (c.min_object_size < 3) throw std::invalid_argument("scene config: min_object_size below 3");
  if (c.min_object_size > c.max_object_size) throw std::invalid_argument("scene config: min_object_size > max_object_size");
  if (c.max_object_size > c.image_size) throw std::invalid_argument("scene config: objects larger than the image");
  if (c.min_objects > c.max_objects) throw std::invalid_argument("scene config: min_objects > max_objects");
}

DomainShift default_shift() { return DomainShift{0.6, {0.78, 0.80, 0.84}, 150.0, 0.03}; }

void validate(const DomainShift& s) {
  if (!(s.fog_alpha >= 0.0 && s.fog_alpha <= 1.0)) throw std::invalid_argument("domain shift: fog_alpha outside [0, 1]");
  for (double v : s.fog_color)
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("domain shift: fog_color outside [0, 1]");
  if (!std::isfinite(s.hue_rotation)) throw std::invalid_argument("domain shift: hue_rotation not finite");
  if (!(s.noise_sigma >= 0.0) || !std::isfinite(s.noise_sigma))
    throw std::invalid_argument("domain shift: noise_sigma must be >= 0");
}

RenderedScene render_scene(const SceneConfig& config, std::uint64_t index) {
  validate(config);
  Rng rng = scene_rng(config.seed, index);
  const std::size_t n = config.image_size;

  // Background: muted base color, a few low-frequency waves, fine grain.
  std::vector<double> px(3 * n * n);
  const auto base = hsv(rng.uniform(0, 360), rng.uniform(0.1, 0.35), rng.uniform(0.35, 0.65));
  struct Wave {
    double kx, ky, phase, amp[3];
  };
  std::vector<Wave> waves(3);
  for (auto& w : waves) {
    const double angle = rng.uniform(0, 2 * std::numbers::pi), freq = rng.uniform(0.5, 3.0) * 2 * std::numbers::pi / n;
    w = {freq * std::cos(angle), freq * std::sin(angle), rng.uniform(0, 2 * std::numbers::pi), {}};
    for (double& a : w.amp) a = rng.uniform(-0.08, 0.08);
  }
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        double v = base[c];
        for (const auto& w : waves) v += w.amp[c] * std::sin(w.kx * x + w.ky * y + w.phase);
        px[(c * n + y) * n + x] = v;
      }
  for (auto& v : px) v += rng.uniform(-0.03, 0.03);

  RenderedScene out;
  auto& rec = out.record;
  rec.image_id = "scene_" + std::to_string(index);
  rec.domain_tag = data::DomainTag::source;

  const std::size_t wanted = static_cast<std::size_t>(rng.between(static_cast<long long>(config.min_objects),
                                                                  static_cast<long long>(config.max_objects)));
  for (int attempt = 0; attempt < 400 && rec.annotations.size() < wanted; ++attempt) {
    const auto cls = static_cast<int>(rng.below(config.shape_classes.size()));
    const double s = static_cast<double>(rng.between(static_cast<long long>(config.min_object_size),
                                                     static_cast<long long>(config.max_object_size)));
    const double x0 = static_cast<double>(rng.below(n - static_cast<std::size_t>(s) + 1));
    const double y0 = static_cast<double>(rng.below(n - static_cast<std::size_t>(s) + 1));
    auto mask = shape_mask(shape_of(config.shape_classes[cls]), n, x0, y0, s);
    const BBox box = data::mask_to_bbox(mask);
    if (box.width() < config.min_object_size || box.height() < config.min_object_size) continue;
    if (std::any_of(rec.annotations.begin(), rec.annotations.end(),
                    [&](const data::Annotation& a) { return boxes_touch(a.bbox, box); }))
      continue;

    const auto color = hsv(rng.uniform(0, 360), rng.uniform(0.55, 1.0), rng.uniform(0.6, 0.95));
    const double shade_x = rng.uniform(-0.1, 0.1), shade_y = rng.uniform(-0.1, 0.1);
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        if (!mask.at(y, x)) continue;
        const double shade = shade_x * ((x + 0.5 - x0) / s - 0.5) + shade_y * ((y + 0.5 - y0) / s - 0.5);
        for (std::size_t c = 0; c < 3; ++c) px[(c * n + y) * n + x] = color[c] * (1.0 + shade);
      }
    rec.annotations.push_back({box, cls, config.shape_classes[cls]});
    out.masks.push_back(std::move(mask));
  }

  std::vector<float> q(px.size());
  std::transform(px.begin(), px.end(), q.begin(), quantize);
  rec.image = Image(Shape{3, n, n}, std::move(q));
  return out;
}

data::ImageRecord generate_scene(const SceneConfig& config, std::uint64_t index) {
  return render_scene(config, index).record;
}

Image hue_rotate(const Image& image, double degrees) {
  require_image(image, "hue_rotate");
  if (degrees == 0.0) return Image(image.shape(), std::vector<float>(image.data().begin(), image.data().end()));
  const double a = degrees * std::numbers::pi / 180.0, cs = std::cos(a), sn = std::sin(a);
  const double d = cs + (1 - cs) / 3, o = (1 - cs) / 3, k = std::sqrt(1.0 / 3.0) * sn;
  const double m[3][3] = {{d, o - k, o + k}, {o + k, d, o - k}, {o - k, o + k, d}};
  const std::size_t plane = image_height(image) * image_width(image);
  const auto src = image.data();
  std::vector<float> out(src.size());
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t r = 0; r < 3; ++r)
      out[r * plane + i] = static_cast<float>(m[r][0] * src[i] + m[r][1] * src[plane + i] + m[r][2] * src[2 * plane + i]);
  return Image(image.shape(), std::move(out));
}

Image apply_domain_shift(const Image& image, const DomainShift& shift, std::uint64_t seed) {
  validate(shift);
  const Image rotated = hue_rotate(image, shift.hue_rotation);
  const std::size_t plane = image_height(image) * image_width(image);
  const auto src = rotated.data();
  std::vector<float> out(src.size());
  Rng rng(seed);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < plane; ++i) {
      double v = src[c * plane + i];
      if (shift.fog_alpha != 0.0) v = (1.0 - shift.fog_alpha) * v + shift.fog_alpha * shift.fog_color[c];
      if (shift.noise_sigma != 0.0) v += rng.normal(0.0, shift.noise_sigma);
      out[c * plane + i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  return Image(image.shape(), std::move(out));
}

DomainPair generate_domain_pair(const SceneConfig& config, const DomainShift& shift, std::size_t n_train,
                                std::size_t n_test) {
  validate(config);
  validate(shift);
  if (n_train < 1 || n_test < 1) throw std::invalid_argument("generate_domain_pair: n_train and n_test must be >= 1");
  DomainPair p;
  auto init = [&](data::DomainDataset& ds, const char* name) {
    ds.domain_name = name;
    ds.class_table = config.shape_classes;
  };
  init(p.source_train, "synth-source-train");
  init(p.source_test, "synth-source-test");
  init(p.target_train, "synth-target-train");
  init(p.target_test, "synth-target-test");

  for (std::size_t i = 0; i < n_train + n_test; ++i)
    (i < n_train ? p.source_train : p.source_test).records.push_back(generate_scene(config, i));

  Rng noise_seeds(config.seed ^ 0xF06F06F06ULL);
  for (std::size_t i = 0; i < n_train + n_test; ++i) {
    auto rec = generate_scene(config, kTargetIndexBase + i);
    rec.domain_tag = data::DomainTag::target;
    const Image shifted = apply_domain_shift(rec.image, shift, noise_seeds.next_u64());
    std::vector<float> q(shifted.data().begin(), shifted.data().end());
    for (auto& v : q) v = quantize(v);
    rec.image = Image(shifted.shape(), std::move(q));
    (i < n_train ? p.target_train : p.target_test).records.push_back(std::move(rec));
  }
  return p;
}

namespace {

template <typename V>
void read_key(const json& obj, const char* key, V& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<V>();
  } catch (const json::exception&) {
    throw std::invalid_argument("synth config: " + where + "." + key + " has the wrong type");
  }
}

void reject_unknown(const json& obj, std::initializer_list<const char*> keys, const std::string& where) {
  if (!obj.is_object()) throw std::invalid_argument("synth config: " + where + " must be an object");
  for (const auto& [k, v] : obj.items())
    if (std::none_of(keys.begin(), keys.end(), [&](const char* known) { return k == known; }))
      throw std::invalid_argument("synth config: unknown key " + where + "." + k);
}

}  // namespace

SynthConfig parse_synth_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("synth config: ") + e.what());
  }
  SynthConfig c;
  reject_unknown(j, {"scene", "shift", "n_train", "n_test"}, "(root)");
  read_key(j, "n_train", c.n_train, "(root)");
  read_key(j, "n_test", c.n_test, "(root)");
  if (j.contains("scene")) {
    const auto& s = j["scene"];
    reject_unknown(s, {"image_size", "min_objects", "max_objects", "classes", "min_object_size", "max_object_size", "seed"},
                   "scene");
    read_key(s, "image_size", c.scene.image_size, "scene");
    read_key(s, "min_objects", c.scene.min_objects, "scene");
    read_key(s, "max_objects", c.scene.max_objects, "scene");
    read_key(s, "classes", c.scene.shape_classes, "scene");
    read_key(s, "min_object_size", c.scene.min_object_size, "scene");
    read_key(s, "max_object_size", c.scene.max_object_size, "scene");
    read_key(s, "seed", c.scene.seed, "scene");
  }
  if (j.contains("shift")) {
    const auto& s = j["shift"];
    reject_unknown(s, {"fog_alpha", "fog_color", "hue_rotation", "noise_sigma"}, "shift");
    read_key(s, "fog_alpha", c.shift.fog_alpha, "shift");
    read_key(s, "fog_color", c.shift.fog_color, "shift");
    read_key(s, "hue_rotation", c.shift.hue_rotation, "shift");
    read_key(s, "noise_sigma", c.shift.noise_sigma, "shift");
  }
  validate(c.scene);
  validate(c.shift);
  return c;
}

std::string to_json(const SynthConfig& c) {
  const json j = {{"scene",
                   {{"image_size", c.scene.image_size},
                    {"min_objects", c.scene.min_objects},
                    {"max_objects", c.scene.max_objects},
                    {"classes", c.scene.shape_classes},
                    {"min_object_size", c.scene.min_object_size},
                    {"max_object_size", c.scene.max_object_size},
                    {"seed", c.scene.seed}}},
                  {"shift",
                   {{"fog_alpha", c.shift.fog_alpha},
                    {"fog_color", c.shift.fog_color},
                    {"hue_rotation", c.shift.hue_rotation},
                    {"noise_sigma", c.shift.noise_sigma}}},
                  {"n_train", c.n_train},
                  {"n_test", c.n_test}};
  return j.dump(2);
}

}  // namespace uda::synth
