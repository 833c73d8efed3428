#pragma once

// Annotated image collections: boxes, records, datasets, and the operations
// that build fake-target sets and detector training mixes from them.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "uda/data/image.hpp"

namespace uda::data {

// Thrown for any structural violation: bad box, unknown class, duplicate id,
// malformed manifest. `context()` names the offending field or record.
class DatasetError : public std::runtime_error {
 public:
  DatasetError(std::string context, const std::string& message);
  const std::string& context() const noexcept { return context_; }
  const std::string& message() const noexcept { return message_; }

 private:
  std::string context_;
  std::string message_;
};

// Half-open pixel box [x_min, x_max) x [y_min, y_max).
struct BBox {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  friend bool operator==(const BBox&, const BBox&) = default;
};

// True when x_min < x_max, y_min < y_max, all coordinates finite and >= 0.
bool is_valid(const BBox& box);
// Also requires x_max <= width and y_max <= height.
bool within_bounds(const BBox& box, std::size_t width, std::size_t height);

struct Annotation {
  BBox bbox;
  int class_id = 0;
  std::string class_name;
  friend bool operator==(const Annotation&, const Annotation&) = default;
};

enum class DomainTag { source, target, fake_target_cyclegan, fake_target_adain };

std::string_view to_string(DomainTag tag);
// Accepts the to_string() spellings; throws DatasetError otherwise.
DomainTag parse_domain_tag(std::string_view text);
bool is_fake(DomainTag tag);
// Short id prefix used when datasets are merged: "source", "target",
// "cyclegan", "adain".
std::string_view id_prefix(DomainTag tag);

struct ImageRecord {
  std::string image_id;
  Image image;
  std::vector<Annotation> annotations;
  DomainTag domain_tag = DomainTag::source;
  std::optional<std::string> provenance;  // source image_id, fake records only
};

struct DomainDataset {
  std::string domain_name;
  std::vector<std::string> class_table;
  std::vector<ImageRecord> records;
  // False when loaded images-only; `annotations` are then empty and must
  // not be read as "no objects".
  bool annotations_loaded = true;

  std::size_t size() const noexcept { return records.size(); }
  bool empty() const noexcept { return records.empty(); }
  // Index of `image_id`, or nullopt.
  std::optional<std::size_t> find(std::string_view image_id) const;
  std::size_t annotation_count() const;
};

// Throws DatasetError on: empty or non-portable image id (allowed characters
// A-Z a-z 0-9 . _ -), duplicate id, non-image pixels, class id outside the
// table or class name disagreeing with it, invalid or out-of-bounds box,
// fake record without provenance.
void validate(const DomainDataset& dataset);

// Images bit-equal, annotations value-equal, tags/provenance/ids/classes
// equal.
bool same_content(const DomainDataset& a, const DomainDataset& b);

// --- masks ----------------------------------------------------------------

struct InstanceMask {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, nonzero = inside

  InstanceMask() = default;
  InstanceMask(std::size_t width, std::size_t height);
  bool at(std::size_t row, std::size_t col) const { return pixels[row * width + col] != 0; }
  void set(std::size_t row, std::size_t col, bool on = true) { pixels[row * width + col] = on ? 1 : 0; }
};

// Tightest half-open box around the true pixels. Throws DatasetError on an
// empty mask or a pixel buffer that does not match width x height.
BBox mask_to_bbox(const InstanceMask& mask);

// --- fake-target construction --------------------------------------------

// New record holding `fake_image` and an exact copy of the source
// annotations, tagged `translator_tag` (a fake tag) with provenance set to
// the source id. The image id is kept. Throws ShapeError when the fake image
// size differs from the source, std::invalid_argument for a non-fake tag.
ImageRecord inherit_annotations(const ImageRecord& source_record, const Image& fake_image, DomainTag translator_tag);

// --- detector training mixes -----------------------------------------------

struct TrainingSetting {
  bool use_source = false;        // S
  bool use_cyclegan_fake = false;  // C
  bool use_adain_fake = false;     // A

  bool any() const { return use_source || use_cyclegan_fake || use_adain_fake; }
  // "OURS-C", "OURS-S+C+A"; plain "S" for source alone (the lower bound).
  std::string name() const;
  friend bool operator==(const TrainingSetting&, const TrainingSetting&) = default;
};

// Accepts "S+C+A", "C+A", "OURS-C", "OURS-S+C+A", "S", "source-only" (any
// order of the letters, case-insensitive). Throws std::invalid_argument.
TrainingSetting parse_setting(std::string_view text);

// Concatenation in the given order. Each id gets its record's id_prefix()
// plus '.' unless it already carries one, so merging is associative and ids
// from different sets cannot collide. Throws DatasetError when class tables
// differ or the merged ids are not unique.
DomainDataset merge_datasets(std::span<const DomainDataset* const> parts, std::string domain_name);

// Flagged datasets in S, C, A order via merge_datasets. `source` must hold
// only source records, `fake_c` only CycleGAN fakes, `fake_a` only AdaIN
// fakes. Throws std::invalid_argument when no flag is set and DatasetError
// when a flagged input is empty, mis-tagged, or class tables differ.
DomainDataset assemble_setting(const TrainingSetting& setting, const DomainDataset& source,
                               const DomainDataset& fake_c, const DomainDataset& fake_a);

// --- splits --------------------------------------------------------------

// Records permuted uniformly by `seed`; the first floor(n * train_fraction)
// go to train, the rest to test, both in permuted order. Throws
// std::invalid_argument unless 0 < train_fraction < 1 and n >= 2.
std::pair<DomainDataset, DomainDataset> split_dataset(const DomainDataset& dataset, double train_fraction,
                                                      std::uint64_t seed);

enum class SplitProtocol {
  reuse_training,  // test on the training images themselves
  random_split,    // disjoint random partition (default)
};

std::pair<DomainDataset, DomainDataset> protocol_split(const DomainDataset& dataset, SplitProtocol protocol,
                                                       double train_fraction, std::uint64_t seed);

}  // namespace uda::data
