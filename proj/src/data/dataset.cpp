#include "uda/data/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "uda/tensor/random.hpp"

namespace uda::data {

DatasetError::DatasetError(std::string context, const std::string& message)
    : std::runtime_error(context.empty() ? message : context + ": " + message),
      context_(std::move(context)),
      message_(message) {}

bool is_valid(const BBox& b) {
  for (double v : {b.x_min, b.y_min, b.x_max, b.y_max})
    if (!std::isfinite(v) || v < 0) return false;
  return b.x_min < b.x_max && b.y_min < b.y_max;
}

bool within_bounds(const BBox& b, std::size_t width, std::size_t height) {
  return is_valid(b) && b.x_max <= static_cast<double>(width) && b.y_max <= static_cast<double>(height);
}

std::string_view to_string(DomainTag tag) {
  switch (tag) {
    case DomainTag::source:
      return "source";
    case DomainTag::target:
      return "target";
    case DomainTag::fake_target_cyclegan:
      return "fake_target_cyclegan";
    case DomainTag::fake_target_adain:
      return "fake_target_adain";
  }
  return "?";
}

DomainTag parse_domain_tag(std::string_view text) {
  for (auto t : {DomainTag::source, DomainTag::target, DomainTag::fake_target_cyclegan, DomainTag::fake_target_adain})
    if (to_string(t) == text) return t;
  throw DatasetError("domain_tag", "unknown domain tag '" + std::string(text) + "'");
}

bool is_fake(DomainTag tag) { return tag == DomainTag::fake_target_cyclegan || tag == DomainTag::fake_target_adain; }

std::string_view id_prefix(DomainTag tag) {
  switch (tag) {
    case DomainTag::source:
      return "source";
    case DomainTag::target:
      return "target";
    case DomainTag::fake_target_cyclegan:
      return "cyclegan";
    case DomainTag::fake_target_adain:
      return "adain";
  }
  return "?";
}

std::optional<std::size_t> DomainDataset::find(std::string_view image_id) const {
  for (std::size_t i = 0; i < records.size(); ++i)
    if (records[i].image_id == image_id) return i;
  return std::nullopt;
}

std::size_t DomainDataset::annotation_count() const {
  std::size_t n = 0;
  for (const auto& r : records) n += r.annotations.size();
  return n;
}

namespace {

bool portable_id(std::string_view id) {
  if (id.empty() || id == "." || id == "..") return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-';
  });
}

}  // namespace

void validate(const DomainDataset& ds) {
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const auto& r = ds.records[i];
    const std::string where = "records[" + std::to_string(i) + "] '" + r.image_id + "'";
    if (!portable_id(r.image_id)) throw DatasetError(where, "image_id must be non-empty [A-Za-z0-9._-]");
    if (!seen.insert(r.image_id).second) throw DatasetError(where, "duplicate image_id");
    try {
      require_image(r.image, "record");
    } catch (const ShapeError& e) {
      throw DatasetError(where, e.what());
    }
    if (is_fake(r.domain_tag) && !r.provenance) throw DatasetError(where, "fake record without provenance");
    const std::size_t h = image_height(r.image), w = image_width(r.image);
    for (std::size_t k = 0; k < r.annotations.size(); ++k) {
      const auto& a = r.annotations[k];
      const std::string at = where + ".annotations[" + std::to_string(k) + "]";
      if (a.class_id < 0 || static_cast<std::size_t>(a.class_id) >= ds.class_table.size())
        throw DatasetError(at, "class id " + std::to_string(a.class_id) + " outside the class table");
      if (ds.class_table[a.class_id] != a.class_name)
        throw DatasetError(at, "class name '" + a.class_name + "' does not match table entry '" +
                                   ds.class_table[a.class_id] + "'");
      if (!within_bounds(a.bbox, w, h)) throw DatasetError(at, "bbox invalid or outside the image");
    }
  }
}

bool same_content(const DomainDataset& a, const DomainDataset& b) {
  if (a.domain_name != b.domain_name || a.class_table != b.class_table || a.records.size() != b.records.size() ||
      a.annotations_loaded != b.annotations_loaded)
    return false;
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    const auto &x = a.records[i], &y = b.records[i];
    if (x.image_id != y.image_id || x.domain_tag != y.domain_tag || x.provenance != y.provenance ||
        x.annotations != y.annotations || x.image.shape() != y.image.shape())
      return false;
    const auto px = x.image.data(), py = y.image.data();
    // bitwise, so -0.0 vs 0.0 and NaN payloads count as differences
    if (!std::equal(px.begin(), px.end(), py.begin(),
                    [](float u, float v) { return std::bit_cast<std::uint32_t>(u) == std::bit_cast<std::uint32_t>(v); }))
      return false;
  }
  return true;
}

InstanceMask::InstanceMask(std::size_t w, std::size_t h) : width(w), height(h), pixels(w * h, 0) {}

BBox mask_to_bbox(const InstanceMask& mask) {
  if (mask.pixels.size() != mask.width * mask.height) throw DatasetError("mask", "pixel count != width * height");
  std::size_t r0 = mask.height, r1 = 0, c0 = mask.width, c1 = 0;
  bool any = false;
  for (std::size_t r = 0; r < mask.height; ++r) {
    for (std::size_t c = 0; c < mask.width; ++c) {
      if (!mask.at(r, c)) continue;
      any = true;
      r0 = std::min(r0, r);
      r1 = std::max(r1, r);
      c0 = std::min(c0, c);
      c1 = std::max(c1, c);
    }
  }
  if (!any) throw DatasetError("mask", "empty instance mask");
  return BBox{static_cast<double>(c0), static_cast<double>(r0), static_cast<double>(c1 + 1),
              static_cast<double>(r1 + 1)};
}

ImageRecord inherit_annotations(const ImageRecord& src, const Image& fake_image, DomainTag translator_tag) {
  if (!is_fake(translator_tag)) throw std::invalid_argument("inherit_annotations: translator tag must be a fake tag");
  require_image(fake_image, "inherit_annotations");
  require_image(src.image, "inherit_annotations");
  if (image_height(fake_image) != image_height(src.image))
    throw ShapeError("inherit_annotations", "height", image_height(src.image), image_height(fake_image));
  if (image_width(fake_image) != image_width(src.image))
    throw ShapeError("inherit_annotations", "width", image_width(src.image), image_width(fake_image));
  ImageRecord out;
  out.image_id = src.image_id;
  out.image = fake_image;
  out.annotations = src.annotations;
  out.domain_tag = translator_tag;
  out.provenance = src.image_id;
  return out;
}

std::string TrainingSetting::name() const {
  std::string parts;
  auto add = [&](bool on, const char* letter) {
    if (!on) return;
    if (!parts.empty()) parts += '+';
    parts += letter;
  };
  add(use_source, "S");
  add(use_cyclegan_fake, "C");
  add(use_adain_fake, "A");
  if (parts == "S") return parts;
  return "OURS-" + parts;
}

TrainingSetting parse_setting(std::string_view text) {
  std::string s;
  for (char c : text) s += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (s == "SOURCE-ONLY") return {true, false, false};
  if (s.rfind("OURS-", 0) == 0) s = s.substr(5);
  TrainingSetting t;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const std::size_t end = std::min(s.find('+', pos), s.size());
    const std::string part = s.substr(pos, end - pos);
    bool* flag = part == "S" ? &t.use_source : part == "C" ? &t.use_cyclegan_fake : part == "A" ? &t.use_adain_fake : nullptr;
    if (flag == nullptr || *flag) throw std::invalid_argument("unrecognized training setting '" + std::string(text) + "'");
    *flag = true;
    pos = end + 1;
  }
  return t;
}

DomainDataset merge_datasets(std::span<const DomainDataset* const> parts, std::string domain_name) {
  DomainDataset out;
  out.domain_name = std::move(domain_name);
  bool first = true;
  for (const auto* part : parts) {
    if (first) {
      out.class_table = part->class_table;
      first = false;
    } else if (part->class_table != out.class_table) {
      throw DatasetError(part->domain_name, "class table differs from '" + parts.front()->domain_name + "'");
    }
    out.annotations_loaded = out.annotations_loaded && part->annotations_loaded;
    for (const auto& r : part->records) {
      ImageRecord copy = r;
      const std::string prefix = std::string(id_prefix(r.domain_tag)) + ".";
      if (copy.image_id.rfind(prefix, 0) != 0) copy.image_id = prefix + copy.image_id;
      out.records.push_back(std::move(copy));
    }
  }
  std::unordered_set<std::string> seen;
  for (const auto& r : out.records)
    if (!seen.insert(r.image_id).second) throw DatasetError(out.domain_name, "duplicate image_id '" + r.image_id + "'");
  return out;
}

DomainDataset assemble_setting(const TrainingSetting& setting, const DomainDataset& source, const DomainDataset& fake_c,
                               const DomainDataset& fake_a) {
  if (!setting.any()) throw std::invalid_argument("assemble_setting: no dataset selected");
  std::vector<const DomainDataset*> parts;
  auto take = [&](bool on, const DomainDataset& ds, DomainTag tag) {
    if (!on) return;
    if (ds.empty()) throw DatasetError(std::string(id_prefix(tag)), "flagged dataset is empty");
    for (const auto& r : ds.records)
      if (r.domain_tag != tag)
        throw DatasetError(ds.domain_name, "record '" + r.image_id + "' is tagged " + std::string(to_string(r.domain_tag)) +
                                               ", expected " + std::string(to_string(tag)));
    parts.push_back(&ds);
  };
  take(setting.use_source, source, DomainTag::source);
  take(setting.use_cyclegan_fake, fake_c, DomainTag::fake_target_cyclegan);
  take(setting.use_adain_fake, fake_a, DomainTag::fake_target_adain);
  return merge_datasets(parts, setting.name());
}

std::pair<DomainDataset, DomainDataset> split_dataset(const DomainDataset& ds, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw std::invalid_argument("split_dataset: train_fraction must lie in (0, 1)");
  if (ds.size() < 2) throw std::invalid_argument("split_dataset: need at least 2 records");
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  // Guard against 0.7 * 10 landing a hair under 7.
  const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(ds.size()) * train_fraction + 1e-9));
  std::pair<DomainDataset, DomainDataset> out;
  for (auto* part : {&out.first, &out.second}) {
    part->class_table = ds.class_table;
    part->annotations_loaded = ds.annotations_loaded;
  }
  out.first.domain_name = ds.domain_name + "-train";
  out.second.domain_name = ds.domain_name + "-test";
  for (std::size_t i = 0; i < order.size(); ++i) (i < n_train ? out.first : out.second).records.push_back(ds.records[order[i]]);
  return out;
}

std::pair<DomainDataset, DomainDataset> protocol_split(const DomainDataset& ds, SplitProtocol protocol,
                                                       double train_fraction, std::uint64_t seed) {
  if (protocol == SplitProtocol::random_split) return split_dataset(ds, train_fraction, seed);
  if (ds.empty()) throw std::invalid_argument("protocol_split: empty dataset");
  return {ds, ds};
}

}  // namespace uda::data
