#pragma once

// On-disk layout: <dir>/manifest.json plus <dir>/images/<image_id>.ppm.
//
// manifest.json:
//   {"domain_name": ..., "classes": [...],
//    "records": [{"image_id", "file", "domain_tag", "provenance"?,
//                 "annotations": [{"class", "bbox": [x0, y0, x1, y1]}]}]}
//
// Images are binary P6, 8-bit RGB; byte v loads as v / 255. Saving rounds
// each channel to the nearest byte, so only 8-bit-representable images
// survive a round trip bit-exactly.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "uda/data/dataset.hpp"

namespace uda::data {

std::vector<std::uint8_t> encode_ppm(const Image& image);
// Throws DatasetError (context `what`) on a malformed stream.
Image decode_ppm(const std::vector<std::uint8_t>& bytes, const std::string& what = "ppm");

void write_ppm(const std::filesystem::path& path, const Image& image);
Image read_ppm(const std::filesystem::path& path);

// Writes the manifest and one PPM per record. Validates first; creates the
// directory if needed and replaces an existing manifest.
void save_dataset(const DomainDataset& dataset, const std::filesystem::path& dir);

enum class LoadParts {
  everything,
  // Skip the annotation arrays entirely: they are never parsed into
  // Annotation values. The result has annotations_loaded == false.
  images_only,
};

// Throws DatasetError naming the manifest field (e.g.
// "manifest.json: records[3].annotations[0].bbox") or, for a missing image,
// the record id. Parse errors carry the JSON line and column.
DomainDataset load_dataset(const std::filesystem::path& dir, LoadParts parts = LoadParts::everything);

// Instrumentation: number of Annotation values deserialized from records
// tagged `target` since process start (or the last reset).
std::size_t target_annotations_deserialized();
void reset_target_annotation_counter();

}  // namespace uda::data
