#pragma once

// Single-scale anchor grid detector. A small strided conv backbone feeds a
// 1x1 head that predicts, per cell and anchor, an objectness logit, four box
// offsets and class logits.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "uda/data/dataset.hpp"
#include "uda/eval/detection_eval.hpp"
#include "uda/nn/conv_layer.hpp"
#include "uda/tensor/optim.hpp"
#include "uda/tensor/parameters.hpp"

namespace uda::detector {

using data::BBox;

// Anchor box of area scale^2 with height / width = aspect_ratio.
struct Anchor {
  double scale = 16;
  double aspect_ratio = 1;

  double width() const;
  double height() const;
  bool operator==(const Anchor&) const = default;
};

std::vector<Anchor> default_anchors();  // (8, 1), (16, 1), (16, 0.5)

inline constexpr std::size_t kStride = 8;

struct DetectorArch {
  std::vector<std::string> classes;
  std::vector<Anchor> anchors = default_anchors();
  std::size_t width = 16;  // channels of the first conv; later stages use 2x and 4x

  std::size_t num_classes() const { return classes.size(); }
  std::size_t num_anchors() const { return anchors.size(); }
  // Channels per anchor in the head: objectness, dx, dy, dw, dh, classes.
  std::size_t per_anchor() const { return 5 + classes.size(); }
};

// Throws std::invalid_argument: no classes, no anchors, non-positive anchor
// sizes, zero width.
void validate(const DetectorArch& arch);

template <typename T>
class GridDetector {
 public:
  // Backbone weights are He-normal from `rng`; the head starts at zero, so an
  // untrained model scores every anchor 0.5.
  GridDetector(DetectorArch arch, Rng& rng);
  GridDetector(DetectorArch arch, Rng&& rng);
  GridDetector(DetectorArch arch, std::uint64_t seed);

  // (N,3,H,W) -> (N, K*(5+C), H/8, W/8). H and W must be multiples of 8.
  Tensor<T> operator()(const Tensor<T>& images) const;

  const DetectorArch& arch() const noexcept { return arch_; }
  ParameterSet<T> parameters() const;

 private:
  DetectorArch arch_;
  std::vector<nn::Conv2d<T>> backbone_;
  nn::Conv2d<T> head_;
};

// Regression and classification targets for a batch, laid out
// [image][anchor][row][col]; offsets add a trailing [4] (dx, dy, dw, dh).
struct GridTargets {
  std::size_t images = 0, anchors = 0, rows = 0, cols = 0;
  std::vector<std::uint8_t> objectness;
  std::vector<int> class_id;  // -1 where objectness is 0
  std::vector<double> offsets;

  std::size_t cells_per_image() const { return anchors * rows * cols; }
  std::size_t cell(std::size_t image, std::size_t anchor, std::size_t row, std::size_t col) const {
    return ((image * anchors + anchor) * rows + row) * cols + col;
  }
  std::size_t positives() const;
};

// Anchor IoU of a box against anchors centered on it.
double shape_iou(const BBox& box, const Anchor& anchor);

// Each annotation goes to the cell holding its center and the anchor of
// highest shape IoU (first on ties). dx, dy are the center's position inside
// the cell in cell units, dw, dh are log(size / anchor size). When two boxes
// claim the same cell and anchor the one with the higher shape IoU stays
// (the earlier on ties).
GridTargets build_targets(std::span<const std::vector<data::Annotation>> annotations, std::size_t rows,
                          std::size_t cols, std::span<const Anchor> anchors);

struct LossWeights {
  double objectness = 1.0;
  double no_object = 0.5;
  double classification = 1.0;
  double box = 1.0;
};

struct LossParts {
  double objectness = 0;      // BCE summed over positive cells
  double no_object = 0;       // BCE summed over negative cells
  double classification = 0;  // cross-entropy summed over positive cells
  double box = 0;             // smooth L1 (beta 1) summed over positive cells and coordinates
};

// sum_terms weight * term, divided by the number of images. Non-negative.
template <typename T>
Tensor<T> detector_loss(const Tensor<T>& predictions, const GridTargets& targets, std::size_t num_classes,
                        const LossWeights& weights = {}, LossParts* parts = nullptr);

// One image's decoded head, as probabilities. Same layout as GridTargets.
struct CellScores {
  std::size_t anchors = 0, rows = 0, cols = 0, classes = 0;
  std::vector<double> objectness;  // [anchor][row][col]
  std::vector<double> class_prob;  // [anchor][row][col][class]
  std::vector<double> offsets;     // [anchor][row][col][4]
};

CellScores cell_scores(const Tensor<float>& predictions, std::size_t image, std::size_t num_classes);
// Targets read as certain predictions: objectness 0 or 1, one-hot classes.
CellScores cell_scores(const GridTargets& targets, std::size_t image, std::size_t num_classes);

// Every anchor whose score objectness * max class probability is at least
// `score_threshold`, as boxes clipped to the image. No suppression.
std::vector<eval::Detection> decode(const CellScores& scores, std::span<const Anchor> anchors,
                                    std::size_t image_height, std::size_t image_width, double score_threshold,
                                    const std::string& image_id = "");

// Greedy suppression: repeatedly keep the highest score (earlier input on
// ties) and drop everything with IoU >= iou_threshold to it. Output is in
// descending score order. Inputs are assumed to share image and class.
std::vector<eval::Detection> nms(std::vector<eval::Detection> detections, double iou_threshold);

// Decode, per-class nms, clip. A score threshold of 1 or more yields nothing.
std::vector<eval::Detection> detect(const GridDetector<float>& model, const Image& image, double score_threshold,
                                    double nms_iou, const std::string& image_id = "");
std::vector<eval::Detection> detect_all(const GridDetector<float>& model, const data::DomainDataset& dataset,
                                        double score_threshold, double nms_iou);

struct DetectorTrainConfig {
  std::size_t iterations = 500;
  std::size_t batch_size = 1;
  double base_lr = 0.001;
  std::size_t decay_start = 350;  // linear decay to zero from here to `iterations`
  double flip_probability = 0.5;
  double score_threshold = 0.05;  // used by detection after training
  double nms_iou = 0.45;
  std::size_t width = 16;
  std::vector<Anchor> anchors = default_anchors();
  LossWeights weights;
  std::uint64_t seed = 7;
};

// Throws std::invalid_argument when decay_start > iterations, batch_size is
// zero or probabilities / thresholds leave [0, 1].
void validate(const DetectorTrainConfig& config);

struct DetectorTrainResult {
  GridDetector<float> model;
  std::vector<double> loss_history;  // per iteration
};

// Adam over batches drawn from a per-epoch shuffle of the records, with
// horizontal flips (image and boxes). The model is seeded from
// Rng(seed).fork(0), shuffles from fork(1), flips from fork(2); with
// flip_probability 0 the flip stream is never consumed.
// Throws std::invalid_argument for an empty dataset, a dataset without any
// annotation, images-only datasets or image sides that are not multiples of
// 8, and TrainingDiverged with the iteration index on a non-finite loss.
DetectorTrainResult train_detector(const data::DomainDataset& dataset, const DetectorTrainConfig& config);

// Checkpoint plus a JSON sidecar holding the architecture:
// <dir>/detector.ckpt and <dir>/detector.json.
void save_detector(const GridDetector<float>& model, const std::filesystem::path& dir);
GridDetector<float> load_detector(const std::filesystem::path& dir);

extern template class GridDetector<float>;
extern template class GridDetector<double>;

}  // namespace uda::detector
