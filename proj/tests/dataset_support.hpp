#pragma once

// Random datasets and scratch directories for dataset tests.

#include <filesystem>
#include <string>
#include <system_error>

#include "uda/data/dataset.hpp"
#include "uda/tensor/random.hpp"

namespace uda::testing {

// Fresh empty directory under the build tree.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::path(UDA_TEST_DATA_DIR) / "scratch" / name;
  std::error_code ec;
  std::filesystem::remove_all(dir, ec);
  std::filesystem::create_directories(dir);
  return dir;
}

// 8-bit-representable pixels, so a save/load round trip is bit-exact.
inline Image random_image(Rng& rng, std::size_t h, std::size_t w) {
  std::vector<float> px(3 * h * w);
  for (auto& v : px) v = static_cast<float>(rng.below(256)) / 255.0f;
  return Image(Shape{3, h, w}, std::move(px));
}

// Boxes use arbitrary doubles (not just integers) to exercise exact
// number formatting in the manifest.
inline data::DomainDataset random_dataset(Rng& rng, std::size_t max_records = 6) {
  using namespace data;
  DomainDataset ds;
  ds.domain_name = "random-" + std::to_string(rng.below(1000));
  const std::size_t n_classes = 1 + rng.below(4);
  for (std::size_t c = 0; c < n_classes; ++c) ds.class_table.push_back("class_" + std::to_string(c));
  const std::size_t n = rng.below(max_records + 1);
  for (std::size_t i = 0; i < n; ++i) {
    ImageRecord r;
    r.image_id = "img-" + std::to_string(i) + "_" + std::to_string(rng.below(100));
    const std::size_t h = 1 + rng.below(12), w = 1 + rng.below(12);
    r.image = random_image(rng, h, w);
    r.domain_tag = static_cast<DomainTag>(rng.below(4));
    if (is_fake(r.domain_tag) || rng.bernoulli(0.2)) r.provenance = "orig-" + std::to_string(rng.below(50));
    const std::size_t n_ann = rng.below(4);
    for (std::size_t k = 0; k < n_ann; ++k) {
      Annotation a;
      a.class_id = static_cast<int>(rng.below(n_classes));
      a.class_name = ds.class_table[a.class_id];
      const double x0 = rng.uniform(0, w * 0.9), y0 = rng.uniform(0, h * 0.9);
      a.bbox = BBox{x0, y0, rng.uniform(x0 + 1e-3, static_cast<double>(w)), rng.uniform(y0 + 1e-3, static_cast<double>(h))};
      r.annotations.push_back(a);
    }
    ds.records.push_back(std::move(r));
  }
  return ds;
}

// Every set pixel lies inside `b`.
inline bool contains_all(const data::BBox& b, const data::InstanceMask& m) {
  for (std::size_t r = 0; r < m.height; ++r)
    for (std::size_t c = 0; c < m.width; ++c)
      if (m.at(r, c) && !(c >= b.x_min && c + 1 <= b.x_max && r >= b.y_min && r + 1 <= b.y_max)) return false;
  return true;
}

}  // namespace uda::testing
