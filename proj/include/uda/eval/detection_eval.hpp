#pragma once

// Greedy one-to-one detection matching and PASCAL VOC average precision,
// 2007 (11-point) and 2012 (all recall levels) variants.

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "uda/data/dataset.hpp"

namespace uda::eval {

using data::BBox;

struct Detection {
  std::string image_id;
  BBox bbox;
  int class_id = 0;
  double score = 0;
};

struct GroundTruth {
  std::string image_id;
  BBox bbox;
  int class_id = 0;
};

// Intersection over union; 0 when the union is empty.
double iou(const BBox& a, const BBox& b);

struct Match {
  std::size_t detection = 0;          // index into the input detections
  bool true_positive = false;
  std::optional<std::size_t> ground_truth;  // index into the input ground truths
};

// Detections in descending score order (stable for ties). Each is a true
// positive when some not-yet-matched ground truth on the same image has
// IoU >= iou_threshold; it takes the one with the highest IoU (lowest index
// on ties). Class ids are ignored: callers pass one class at a time.
std::vector<Match> match_detections(std::span<const Detection> detections, std::span<const GroundTruth> ground_truths,
                                    double iou_threshold = 0.5);

struct PRPoint {
  double recall = 0;
  double precision = 0;
};

struct PRCurve {
  std::vector<PRPoint> points;  // one per accumulated detection
  std::size_t num_gt = 0;
};

// Point k: precision TP_k / k, recall TP_k / num_gt. Throws
// std::invalid_argument when num_gt is 0 or exceeded by the TP count.
PRCurve precision_recall(const std::vector<bool>& true_positive_in_score_order, std::size_t num_gt);

enum class VocVersion { voc07, voc12 };

std::string_view to_string(VocVersion v);
// "voc07" / "voc12" (also "2007", "2012"); throws std::invalid_argument.
VocVersion parse_voc_version(std::string_view text);

// Interpolated precision p(r) = max precision over points with recall >= r,
// 0 when none. voc07: mean of p at r = 0, 0.1, ..., 1 (levels computed as
// k / 10, not by repeated addition). voc12: exact area under the step
// function p over [0, 1].
double average_precision(const PRCurve& curve, VocVersion version);
double interpolated_precision(const PRCurve& curve, double recall);

struct ClassResult {
  int class_id = 0;
  std::size_t num_gt = 0;
  std::size_t num_detections = 0;
  double ap = 0;
};

struct EvalResult {
  std::vector<ClassResult> classes;  // only classes with >= 1 ground truth, ascending id
  double map_value = 0;              // mean of classes[i].ap
  VocVersion version = VocVersion::voc12;
  double iou_threshold = 0.5;

  // AP for `class_id`, or nullopt when the class had no ground truth.
  std::optional<double> ap(int class_id) const;
};

// Full chain per class. Classes are the ids appearing in the ground truth;
// detections of other classes are ignored. Throws std::invalid_argument
// when no ground truth is given.
EvalResult mean_ap(std::span<const Detection> detections, std::span<const GroundTruth> ground_truths,
                   VocVersion version = VocVersion::voc12, double iou_threshold = 0.5);

// Every annotation of every record, keyed by image_id. Throws
// std::invalid_argument for a dataset loaded images-only.
std::vector<GroundTruth> ground_truths_of(const data::DomainDataset& dataset);

// --- files ----------------------------------------------------------------

// One JSON object per line: {"image_id", "class", "bbox": [x0,y0,x1,y1],
// "score"}. "class" is the class name from `class_table`.
void write_detections_jsonl(std::ostream& out, std::span<const Detection> detections,
                            std::span<const std::string> class_table);
// Blank lines are skipped. Throws data::DatasetError naming the line number
// and field for malformed lines, unknown classes, invalid boxes or scores
// outside [0, 1].
std::vector<Detection> read_detections_jsonl(std::istream& in, std::span<const std::string> class_table);

// Human table: one row per evaluated class, then mAP.
std::string format_table(const EvalResult& result, std::span<const std::string> class_table);
// {"metric": "voc12", "iou_threshold": 0.5, "map": ..., "per_class": {name: ap}}
std::string to_json(const EvalResult& result, std::span<const std::string> class_table);

}  // namespace uda::eval
