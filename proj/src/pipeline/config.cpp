#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include "json.hpp"
#include "uda/pipeline/experiment.hpp"

namespace uda::pipeline {
namespace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;

[[noreturn]] void fail(const std::string& message) {
  throw std::invalid_argument("experiment config: " + message);
}

template <typename V>
void read_key(const json& obj, const char* key, V& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<V>();
  } catch (const json::exception&) {
    fail(where + "." + key + " has the wrong type");
  }
}

void reject_unknown(const json& obj, std::initializer_list<const char*> keys, const std::string& where) {
  if (!obj.is_object()) fail(where + " must be an object");
  for (const auto& [k, v] : obj.items())
    if (std::none_of(keys.begin(), keys.end(), [&](const char* known) { return k == known; }))
      fail("unknown key " + where + "." + k);
}

fs::path resolve(const fs::path& p, const fs::path& base) {
  return p.is_relative() && !base.empty() ? base / p : p;
}

void read_cyclegan(const json& j, cyclegan::CycleTrainConfig& c) {
  reject_unknown(j,
                 {"epochs_fixed", "epochs_decay", "steps_per_epoch", "batch_size", "base_lr", "cycle_weight",
                  "adversarial_weight", "crop_size", "flip_probability"},
                 "cyclegan");
  read_key(j, "epochs_fixed", c.epochs_fixed, "cyclegan");
  read_key(j, "epochs_decay", c.epochs_decay, "cyclegan");
  read_key(j, "steps_per_epoch", c.steps_per_epoch, "cyclegan");
  read_key(j, "batch_size", c.batch_size, "cyclegan");
  read_key(j, "base_lr", c.base_lr, "cyclegan");
  read_key(j, "cycle_weight", c.cycle_weight, "cyclegan");
  read_key(j, "adversarial_weight", c.adversarial_weight, "cyclegan");
  read_key(j, "crop_size", c.crop_size, "cyclegan");
  read_key(j, "flip_probability", c.flip_probability, "cyclegan");
}

void read_adain(const json& j, adain::StyleTrainConfig& c, double& alpha) {
  reject_unknown(j, {"iterations", "batch_size", "crop_size", "style_loss_weight", "base_lr", "layer_taps", "alpha"},
                 "adain");
  read_key(j, "iterations", c.iterations, "adain");
  read_key(j, "batch_size", c.batch_size, "adain");
  read_key(j, "crop_size", c.crop_size, "adain");
  read_key(j, "style_loss_weight", c.style_loss_weight, "adain");
  read_key(j, "base_lr", c.base_lr, "adain");
  read_key(j, "layer_taps", c.layer_taps, "adain");
  read_key(j, "alpha", alpha, "adain");
}

void read_detector(const json& j, detector::DetectorTrainConfig& c) {
  reject_unknown(j,
                 {"iterations", "batch_size", "base_lr", "decay_start", "flip_probability", "score_threshold",
                  "nms_iou", "width", "anchors", "loss_weights"},
                 "detector");
  read_key(j, "iterations", c.iterations, "detector");
  read_key(j, "batch_size", c.batch_size, "detector");
  read_key(j, "base_lr", c.base_lr, "detector");
  read_key(j, "decay_start", c.decay_start, "detector");
  read_key(j, "flip_probability", c.flip_probability, "detector");
  read_key(j, "score_threshold", c.score_threshold, "detector");
  read_key(j, "nms_iou", c.nms_iou, "detector");
  read_key(j, "width", c.width, "detector");
  if (j.contains("anchors")) {
    std::vector<std::array<double, 2>> pairs;
    read_key(j, "anchors", pairs, "detector");
    c.anchors.clear();
    for (const auto& [scale, aspect] : pairs) c.anchors.push_back({scale, aspect});
  }
  if (j.contains("loss_weights")) {
    const auto& w = j["loss_weights"];
    reject_unknown(w, {"objectness", "no_object", "classification", "box"}, "detector.loss_weights");
    read_key(w, "objectness", c.weights.objectness, "detector.loss_weights");
    read_key(w, "no_object", c.weights.no_object, "detector.loss_weights");
    read_key(w, "classification", c.weights.classification, "detector.loss_weights");
    read_key(w, "box", c.weights.box, "detector.loss_weights");
  }
}

ojson canonical(const ExperimentConfig& c, bool with_run_fields) {
  ojson j;
  if (c.synth) j["synth"] = ojson::parse(synth::to_json(*c.synth));
  if (c.datasets)
    j["datasets"] = {{"source_train", c.datasets->source_train.generic_string()},
                     {"source_test", c.datasets->source_test.generic_string()},
                     {"target_train", c.datasets->target_train.generic_string()},
                     {"target_test", c.datasets->target_test.generic_string()}};
  j["translators"] = std::string(to_string(c.translators));
  ojson settings = ojson::array();
  for (const auto& s : c.settings) settings.push_back(s.name());
  j["settings"] = settings;
  j["metric"] = std::string(eval::to_string(c.metric));
  j["iou"] = c.iou_threshold;
  j["seeds"] = c.seeds;
  if (with_run_fields) {
    j["output_dir"] = c.output_dir.generic_string();
    j["resume"] = c.resume;
  }
  j["evaluate_source_plus_target"] = c.evaluate_source_plus_target;
  const auto& g = c.cyclegan;
  j["cyclegan"] = {{"epochs_fixed", g.epochs_fixed},
                   {"epochs_decay", g.epochs_decay},
                   {"steps_per_epoch", g.steps_per_epoch},
                   {"batch_size", g.batch_size},
                   {"base_lr", g.base_lr},
                   {"cycle_weight", g.cycle_weight},
                   {"adversarial_weight", g.adversarial_weight},
                   {"crop_size", g.crop_size},
                   {"flip_probability", g.flip_probability}};
  const auto& a = c.adain;
  j["adain"] = {{"iterations", a.iterations},
                {"batch_size", a.batch_size},
                {"crop_size", a.crop_size},
                {"style_loss_weight", a.style_loss_weight},
                {"base_lr", a.base_lr},
                {"layer_taps", a.layer_taps},
                {"alpha", c.adain_alpha}};
  const auto& d = c.detector;
  ojson anchors = ojson::array();
  for (const auto& an : d.anchors) anchors.push_back({an.scale, an.aspect_ratio});
  j["detector"] = {{"iterations", d.iterations},
                   {"batch_size", d.batch_size},
                   {"base_lr", d.base_lr},
                   {"decay_start", d.decay_start},
                   {"flip_probability", d.flip_probability},
                   {"score_threshold", d.score_threshold},
                   {"nms_iou", d.nms_iou},
                   {"width", d.width},
                   {"anchors", anchors},
                   {"loss_weights",
                    {{"objectness", d.weights.objectness},
                     {"no_object", d.weights.no_object},
                     {"classification", d.weights.classification},
                     {"box", d.weights.box}}}};
  return j;
}

bool positive_finite(double v) { return std::isfinite(v) && v > 0; }

}  // namespace

std::string_view to_string(TranslatorChoice choice) {
  switch (choice) {
    case TranslatorChoice::cyclegan: return "cyclegan";
    case TranslatorChoice::adain: return "adain";
    case TranslatorChoice::both: return "both";
  }
  return "both";
}

TranslatorChoice parse_translator_choice(std::string_view text) {
  if (text == "cyclegan") return TranslatorChoice::cyclegan;
  if (text == "adain") return TranslatorChoice::adain;
  if (text == "both") return TranslatorChoice::both;
  throw std::invalid_argument("unknown translator '" + std::string(text) + "' (cyclegan, adain, both)");
}

cyclegan::CycleTrainConfig default_cyclegan_config() {
  cyclegan::CycleTrainConfig c;
  c.epochs_fixed = 5;
  c.epochs_decay = 5;
  c.base_lr = 7e-4;
  return c;
}

detector::DetectorTrainConfig default_detector_config() {
  detector::DetectorTrainConfig c;
  c.iterations = 1000;
  c.decay_start = 700;
  return c;
}

void validate(const ExperimentConfig& c, ConfigScope scope) {
  const auto& g = c.cyclegan;
  if (g.batch_size == 0 || g.crop_size == 0 || g.epochs_fixed + g.epochs_decay == 0)
    fail("cyclegan needs batch_size, crop_size and at least one epoch");
  if (!positive_finite(g.base_lr) || !(g.cycle_weight >= 0) || !(g.adversarial_weight >= 0))
    fail("cyclegan rates and weights must be finite, lr positive");
  if (!(g.flip_probability >= 0 && g.flip_probability <= 1)) fail("cyclegan.flip_probability outside [0, 1]");
  const auto& a = c.adain;
  if (a.batch_size == 0 || a.crop_size == 0) fail("adain needs batch_size and crop_size");
  if (!positive_finite(a.base_lr) || !(a.style_loss_weight >= 0)) fail("adain lr and style weight");
  if (!(c.adain_alpha >= 0 && c.adain_alpha <= 1)) fail("adain.alpha outside [0, 1]");
  try {
    detector::validate(c.detector);
    if (c.synth) {
      synth::validate(c.synth->scene);
      synth::validate(c.synth->shift);
    }
  } catch (const std::invalid_argument& e) {
    fail(e.what());
  }
  if (scope == ConfigScope::sections) return;

  if (c.synth.has_value() == c.datasets.has_value()) fail("give exactly one of \"synth\" and \"datasets\"");
  if (c.synth && (c.synth->n_train == 0 || c.synth->n_test == 0)) fail("synth needs n_train, n_test >= 1");
  if (c.datasets) {
    const std::pair<const char*, const fs::path*> dirs[] = {{"source_train", &c.datasets->source_train},
                                                            {"source_test", &c.datasets->source_test},
                                                            {"target_train", &c.datasets->target_train},
                                                            {"target_test", &c.datasets->target_test}};
    for (const auto& [key, dir] : dirs)
      if (!fs::exists(*dir / "manifest.json")) fail(std::string("datasets.") + key + ": no manifest.json in " + dir->string());
  }
  if (c.settings.empty()) fail("settings is empty");
  const bool have_c = c.translators != TranslatorChoice::adain;
  const bool have_a = c.translators != TranslatorChoice::cyclegan;
  for (std::size_t i = 0; i < c.settings.size(); ++i) {
    const auto& s = c.settings[i];
    if (!s.any()) fail("empty setting");
    if (std::find(c.settings.begin(), c.settings.begin() + i, s) != c.settings.begin() + i)
      fail("duplicate setting " + s.name());
    if (s.use_cyclegan_fake && !have_c) fail(s.name() + " needs the cyclegan translator");
    if (s.use_adain_fake && !have_a) fail(s.name() + " needs the adain translator");
  }
  if (c.seeds.empty()) fail("seeds is empty");
  for (std::size_t i = 0; i < c.seeds.size(); ++i)
    if (std::find(c.seeds.begin(), c.seeds.begin() + i, c.seeds[i]) != c.seeds.begin() + i) fail("duplicate seed");
  if (!(c.iou_threshold > 0 && c.iou_threshold <= 1)) fail("iou outside (0, 1]");
  if (c.output_dir.empty()) fail("output_dir is empty");
}

ExperimentConfig parse_experiment_config(const std::string& text, const fs::path& base_dir, ConfigScope scope) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(e.what());
  }
  reject_unknown(j,
                 {"synth", "datasets", "translators", "settings", "metric", "iou", "seeds", "output_dir", "resume",
                  "evaluate_source_plus_target", "cyclegan", "adain", "detector"},
                 "(root)");
  ExperimentConfig c;
  if (j.contains("synth")) {
    try {
      c.synth = synth::parse_synth_config(j["synth"].dump());
    } catch (const std::invalid_argument& e) {
      fail(e.what());
    }
  }
  if (j.contains("datasets")) {
    const auto& d = j["datasets"];
    reject_unknown(d, {"source_train", "source_test", "target_train", "target_test"}, "datasets");
    std::string st, se, tt, te;
    for (const char* key : {"source_train", "source_test", "target_train", "target_test"})
      if (!d.contains(key)) fail(std::string("datasets.") + key + " is missing");
    read_key(d, "source_train", st, "datasets");
    read_key(d, "source_test", se, "datasets");
    read_key(d, "target_train", tt, "datasets");
    read_key(d, "target_test", te, "datasets");
    c.datasets = DatasetPaths{resolve(st, base_dir), resolve(se, base_dir), resolve(tt, base_dir),
                              resolve(te, base_dir)};
  }
  if (j.contains("translators")) {
    std::string t;
    read_key(j, "translators", t, "(root)");
    try {
      c.translators = parse_translator_choice(t);
    } catch (const std::invalid_argument& e) {
      fail(e.what());
    }
  }
  if (j.contains("settings")) {
    std::vector<std::string> names;
    read_key(j, "settings", names, "(root)");
    c.settings.clear();
    for (const auto& n : names) {
      try {
        c.settings.push_back(data::parse_setting(n));
      } catch (const std::invalid_argument& e) {
        fail(e.what());
      }
    }
  }
  if (j.contains("metric")) {
    std::string m;
    read_key(j, "metric", m, "(root)");
    try {
      c.metric = eval::parse_voc_version(m);
    } catch (const std::invalid_argument& e) {
      fail(e.what());
    }
  }
  read_key(j, "iou", c.iou_threshold, "(root)");
  read_key(j, "seeds", c.seeds, "(root)");
  if (j.contains("output_dir")) {
    std::string out;
    read_key(j, "output_dir", out, "(root)");
    c.output_dir = resolve(out, base_dir);
  }
  read_key(j, "resume", c.resume, "(root)");
  read_key(j, "evaluate_source_plus_target", c.evaluate_source_plus_target, "(root)");
  if (j.contains("cyclegan")) read_cyclegan(j["cyclegan"], c.cyclegan);
  if (j.contains("adain")) read_adain(j["adain"], c.adain, c.adain_alpha);
  if (j.contains("detector")) read_detector(j["detector"], c.detector);
  validate(c, scope);
  return c;
}

ExperimentConfig load_experiment_config(const fs::path& file, ConfigScope scope) {
  std::ifstream in(file, std::ios::binary);
  if (!in) fail("cannot open " + file.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_experiment_config(text.str(), file.parent_path(), scope);
}

std::string to_json(const ExperimentConfig& config) { return canonical(config, true).dump(2); }

std::string config_hash(const ExperimentConfig& config) {
  const std::string text = canonical(config, false).dump();
  return sha256_hex({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < length; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

std::string sha256_file(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + file.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return sha256_hex(bytes);
}

}  // namespace uda::pipeline
