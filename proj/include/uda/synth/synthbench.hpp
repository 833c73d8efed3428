#pragma once

// Procedural two-domain benchmark: flat shapes on a textured background with
// exact boxes, and a target domain made by hue rotation, fog and noise.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "uda/data/dataset.hpp"

namespace uda::synth {

struct SceneConfig {
  std::size_t image_size = 64;
  std::size_t min_objects = 1;
  std::size_t max_objects = 3;
  // Shape of each class by name: "disc", "square" or "triangle".
  std::vector<std::string> shape_classes{"disc", "square", "triangle"};
  std::size_t min_object_size = 12;
  std::size_t max_object_size = 24;
  std::uint64_t seed = 7;
};

// Throws std::invalid_argument: no classes, unknown shape name, duplicate
// class, min > max, sizes below 3 or above the image, objects range empty.
void validate(const SceneConfig& config);

struct DomainShift {
  double fog_alpha = 0.0;
  std::array<double, 3> fog_color{0.0, 0.0, 0.0};
  double hue_rotation = 0.0;  // degrees
  double noise_sigma = 0.0;
};

// Defaults used by the experiments: strong enough that a source-trained
// detector degrades on the target domain.
DomainShift default_shift();

void validate(const DomainShift& shift);

struct RenderedScene {
  data::ImageRecord record;                // tagged source, id "scene_<index>"
  std::vector<data::InstanceMask> masks;  // one per annotation, same order
};

// Deterministic in (config.seed, index). Objects do not overlap (their boxes
// keep a one pixel gap), every box is mask_to_bbox of its own mask and at
// least min_object_size on each side. Pixel values are multiples of 1/255.
RenderedScene render_scene(const SceneConfig& config, std::uint64_t index);
data::ImageRecord generate_scene(const SceneConfig& config, std::uint64_t index);

// Rotation of RGB about the gray axis by `degrees`; 0 is the identity.
Image hue_rotate(const Image& image, double degrees);

// clip((1 - a) * hue_rotate(image) + a * fog_color + N(0, sigma^2)), noise
// drawn from `seed`. Exact, not quantized.
Image apply_domain_shift(const Image& image, const DomainShift& shift, std::uint64_t seed);

struct DomainPair {
  data::DomainDataset source_train, source_test, target_train, target_test;
};

// Source scenes use indices [0, n_train + n_test); target scenes use a
// disjoint index range starting at kTargetIndexBase, so no target image is
// a shifted copy of a source image. Target images are shifted then
// quantized to multiples of 1/255; target records are tagged target.
inline constexpr std::uint64_t kTargetIndexBase = 1ULL << 32;
DomainPair generate_domain_pair(const SceneConfig& config, const DomainShift& shift, std::size_t n_train,
                                std::size_t n_test);

// Plain JSON config:
//   {"scene": {"image_size", "min_objects", "max_objects", "classes",
//              "min_object_size", "max_object_size", "seed"},
//    "shift": {"fog_alpha", "fog_color", "hue_rotation", "noise_sigma"},
//    "n_train", "n_test"}
// Missing keys keep their defaults; unknown keys are rejected.
struct SynthConfig {
  SceneConfig scene;
  DomainShift shift = default_shift();
  std::size_t n_train = 64;
  std::size_t n_test = 32;
};

SynthConfig parse_synth_config(const std::string& json_text);
std::string to_json(const SynthConfig& config);

}  // namespace uda::synth
