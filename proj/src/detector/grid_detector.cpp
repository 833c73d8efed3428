#include "uda/detector/grid_detector.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "uda/tensor/checkpoint.hpp"

namespace uda::detector {

using json = nlohmann::json;

double Anchor::width() const { return scale / std::sqrt(aspect_ratio); }
double Anchor::height() const { return scale * std::sqrt(aspect_ratio); }

std::vector<Anchor> default_anchors() { return {{8, 1.0}, {16, 1.0}, {16, 0.5}}; }

void validate(const DetectorArch& arch) {
  if (arch.classes.empty()) throw std::invalid_argument("detector: no classes");
  if (arch.anchors.empty()) throw std::invalid_argument("detector: no anchors");
  for (const auto& a : arch.anchors)
    if (!(a.scale > 0 && a.aspect_ratio > 0)) throw std::invalid_argument("detector: anchor sizes must be positive");
  if (arch.width == 0) throw std::invalid_argument("detector: zero width");
}

template <typename T>
GridDetector<T>::GridDetector(DetectorArch arch, Rng& rng) : arch_(std::move(arch)) {
  validate(arch_);
  const std::size_t w = arch_.width;
  backbone_.push_back(nn::Conv2d<T>::init(3, w, 3, 1, 1, rng));
  backbone_.push_back(nn::Conv2d<T>::init(w, 2 * w, 3, 2, 1, rng));
  backbone_.push_back(nn::Conv2d<T>::init(2 * w, 2 * w, 3, 2, 1, rng));
  backbone_.push_back(nn::Conv2d<T>::init(2 * w, 4 * w, 3, 2, 1, rng));
  backbone_.push_back(nn::Conv2d<T>::init(4 * w, 4 * w, 3, 1, 1, rng));
  head_ = nn::Conv2d<T>::init(4 * w, arch_.num_anchors() * arch_.per_anchor(), 1, 1, 0, rng, true, 0.0);
}

template <typename T>
GridDetector<T>::GridDetector(DetectorArch arch, Rng&& rng) : GridDetector(std::move(arch), rng) {}

template <typename T>
GridDetector<T>::GridDetector(DetectorArch arch, std::uint64_t seed) : GridDetector(std::move(arch), Rng(seed)) {}

template <typename T>
Tensor<T> GridDetector<T>::operator()(const Tensor<T>& images) const {
  if (images.rank() != 4 || images.dim(1) != 3) throw ShapeError("GridDetector", "expected (N,3,H,W) images");
  if (images.dim(2) % kStride || images.dim(3) % kStride || images.dim(2) == 0 || images.dim(3) == 0)
    throw ShapeError("GridDetector", "image sides must be positive multiples of 8");
  Tensor<T> x = images;
  for (const auto& conv : backbone_) x = relu(conv(x));
  return head_(x);
}

template <typename T>
ParameterSet<T> GridDetector<T>::parameters() const {
  ParameterSet<T> p;
  for (std::size_t i = 0; i < backbone_.size(); ++i) backbone_[i].register_into(p, "backbone." + std::to_string(i));
  head_.register_into(p, "head");
  return p;
}

template class GridDetector<float>;
template class GridDetector<double>;

std::size_t GridTargets::positives() const {
  return static_cast<std::size_t>(std::count(objectness.begin(), objectness.end(), std::uint8_t{1}));
}

double shape_iou(const BBox& box, const Anchor& anchor) {
  const double w = box.width(), h = box.y_max - box.y_min;
  const double inter = std::min(w, anchor.width()) * std::min(h, anchor.height());
  return inter / (w * h + anchor.width() * anchor.height() - inter);
}

GridTargets build_targets(std::span<const std::vector<data::Annotation>> annotations, std::size_t rows,
                          std::size_t cols, std::span<const Anchor> anchors) {
  GridTargets t;
  t.images = annotations.size();
  t.anchors = anchors.size();
  t.rows = rows;
  t.cols = cols;
  const std::size_t cells = t.images * t.cells_per_image();
  t.objectness.assign(cells, 0);
  t.class_id.assign(cells, -1);
  t.offsets.assign(4 * cells, 0.0);
  std::vector<double> claim(cells, -1.0);  // shape IoU of the box holding the cell

  for (std::size_t n = 0; n < annotations.size(); ++n) {
    for (const auto& ann : annotations[n]) {
      const auto& b = ann.bbox;
      const double cx = (b.x_min + b.x_max) / 2 / kStride, cy = (b.y_min + b.y_max) / 2 / kStride;
      const auto col = std::min(cols - 1, static_cast<std::size_t>(std::max(0.0, std::floor(cx))));
      const auto row = std::min(rows - 1, static_cast<std::size_t>(std::max(0.0, std::floor(cy))));
      std::size_t best = 0;
      double best_iou = -1;
      for (std::size_t a = 0; a < anchors.size(); ++a) {
        const double o = shape_iou(b, anchors[a]);
        if (o > best_iou) best_iou = o, best = a;
      }
      const std::size_t i = t.cell(n, best, row, col);
      if (best_iou <= claim[i]) continue;
      claim[i] = best_iou;
      t.objectness[i] = 1;
      t.class_id[i] = ann.class_id;
      t.offsets[4 * i + 0] = cx - static_cast<double>(col);
      t.offsets[4 * i + 1] = cy - static_cast<double>(row);
      t.offsets[4 * i + 2] = std::log(b.width() / anchors[best].width());
      t.offsets[4 * i + 3] = std::log((b.y_max - b.y_min) / anchors[best].height());
    }
  }
  return t;
}

namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
double sigmoid_d(double x) { return x >= 0 ? 1 / (1 + std::exp(-x)) : std::exp(x) / (1 + std::exp(x)); }

// Index of (image n, channel ch, row r, col c) in an (N, Ch, R, C) map.
struct MapIndex {
  std::size_t channels, rows, cols;
  std::size_t operator()(std::size_t n, std::size_t ch, std::size_t r, std::size_t c) const {
    return ((n * channels + ch) * rows + r) * cols + c;
  }
};

void check_prediction_shape(const Shape& s, const GridTargets& t, std::size_t num_classes) {
  const std::size_t want = t.anchors * (5 + num_classes);
  if (s.size() != 4 || s[0] != t.images || s[1] != want || s[2] != t.rows || s[3] != t.cols) {
    std::ostringstream msg;
    msg << "predictions " << shape_str(s) << " do not match targets (" << t.images << ", " << want << ", " << t.rows
        << ", " << t.cols << ")";
    throw ShapeError("detector_loss", msg.str());
  }
}

}  // namespace

template <typename T>
Tensor<T> detector_loss(const Tensor<T>& predictions, const GridTargets& targets, std::size_t num_classes,
                        const LossWeights& weights, LossParts* parts) {
  check_prediction_shape(predictions.shape(), targets, num_classes);
  const std::size_t per = 5 + num_classes;
  const MapIndex at{targets.anchors * per, targets.rows, targets.cols};
  const auto p = predictions.data();
  LossParts lp;
  std::vector<T> grad(p.size(), T(0));
  std::vector<double> logits(num_classes);

  for (std::size_t n = 0; n < targets.images; ++n)
    for (std::size_t a = 0; a < targets.anchors; ++a)
      for (std::size_t r = 0; r < targets.rows; ++r)
        for (std::size_t c = 0; c < targets.cols; ++c) {
          const std::size_t cell = targets.cell(n, a, r, c);
          const std::size_t io = at(n, a * per, r, c);
          const double x = p[io];
          if (!targets.objectness[cell]) {
            lp.no_object += softplus(x);
            grad[io] = static_cast<T>(weights.no_object * sigmoid_d(x));
            continue;
          }
          lp.objectness += softplus(x) - x;
          grad[io] = static_cast<T>(weights.objectness * (sigmoid_d(x) - 1));
          for (std::size_t k = 0; k < 4; ++k) {
            const std::size_t ib = at(n, a * per + 1 + k, r, c);
            const double d = p[ib] - targets.offsets[4 * cell + k];
            lp.box += std::abs(d) < 1 ? 0.5 * d * d : std::abs(d) - 0.5;
            grad[ib] = static_cast<T>(weights.box * std::clamp(d, -1.0, 1.0));
          }
          double top = -INFINITY;
          for (std::size_t k = 0; k < num_classes; ++k) top = std::max(top, logits[k] = p[at(n, a * per + 5 + k, r, c)]);
          double z = 0;
          for (double v : logits) z += std::exp(v - top);
          const auto label = static_cast<std::size_t>(targets.class_id[cell]);
          lp.classification += top + std::log(z) - logits[label];
          for (std::size_t k = 0; k < num_classes; ++k)
            grad[at(n, a * per + 5 + k, r, c)] =
                static_cast<T>(weights.classification * (std::exp(logits[k] - top) / z - (k == label ? 1.0 : 0.0)));
        }

  const double images = static_cast<double>(targets.images);
  const double total = (weights.objectness * lp.objectness + weights.no_object * lp.no_object +
                        weights.classification * lp.classification + weights.box * lp.box) /
                       images;
  if (parts) *parts = lp;
  for (auto& g : grad) g = static_cast<T>(g / images);
  auto gshared = std::make_shared<std::vector<T>>(std::move(grad));
  return make_result<T>(Shape{1}, std::vector<T>{static_cast<T>(total)}, {&predictions},
                        [predictions, gshared](std::span<const T> g) {
                          std::vector<T> gi(*gshared);
                          for (auto& v : gi) v *= g[0];
                          accumulate_grad(predictions, std::span<const T>(gi));
                        });
}

template Tensor<float> detector_loss(const Tensor<float>&, const GridTargets&, std::size_t, const LossWeights&,
                                     LossParts*);
template Tensor<double> detector_loss(const Tensor<double>&, const GridTargets&, std::size_t, const LossWeights&,
                                      LossParts*);

CellScores cell_scores(const Tensor<float>& predictions, std::size_t image, std::size_t num_classes) {
  if (predictions.rank() != 4 || predictions.dim(1) % (5 + num_classes))
    throw ShapeError("cell_scores", "prediction channels are not a multiple of 5 + classes");
  if (image >= predictions.dim(0)) throw ShapeError("cell_scores", "image index", predictions.dim(0), image);
  const std::size_t per = 5 + num_classes;
  CellScores s;
  s.anchors = predictions.dim(1) / per;
  s.rows = predictions.dim(2);
  s.cols = predictions.dim(3);
  s.classes = num_classes;
  const MapIndex at{predictions.dim(1), s.rows, s.cols};
  const auto p = predictions.data();
  const std::size_t cells = s.anchors * s.rows * s.cols;
  s.objectness.resize(cells);
  s.class_prob.resize(cells * num_classes);
  s.offsets.resize(cells * 4);
  std::vector<double> logits(num_classes);
  for (std::size_t a = 0; a < s.anchors; ++a)
    for (std::size_t r = 0; r < s.rows; ++r)
      for (std::size_t c = 0; c < s.cols; ++c) {
        const std::size_t i = (a * s.rows + r) * s.cols + c;
        s.objectness[i] = sigmoid_d(p[at(image, a * per, r, c)]);
        for (std::size_t k = 0; k < 4; ++k) s.offsets[4 * i + k] = p[at(image, a * per + 1 + k, r, c)];
        double top = -INFINITY, z = 0;
        for (std::size_t k = 0; k < num_classes; ++k) top = std::max(top, logits[k] = p[at(image, a * per + 5 + k, r, c)]);
        for (double v : logits) z += std::exp(v - top);
        for (std::size_t k = 0; k < num_classes; ++k) s.class_prob[i * num_classes + k] = std::exp(logits[k] - top) / z;
      }
  return s;
}

CellScores cell_scores(const GridTargets& targets, std::size_t image, std::size_t num_classes) {
  if (image >= targets.images) throw std::invalid_argument("cell_scores: image index out of range");
  CellScores s;
  s.anchors = targets.anchors;
  s.rows = targets.rows;
  s.cols = targets.cols;
  s.classes = num_classes;
  const std::size_t cells = targets.cells_per_image(), base = image * cells;
  s.objectness.resize(cells);
  s.class_prob.assign(cells * num_classes, 0.0);
  s.offsets.assign(targets.offsets.begin() + 4 * base, targets.offsets.begin() + 4 * (base + cells));
  for (std::size_t i = 0; i < cells; ++i) {
    s.objectness[i] = targets.objectness[base + i];
    if (targets.class_id[base + i] >= 0) s.class_prob[i * num_classes + targets.class_id[base + i]] = 1.0;
  }
  return s;
}

std::vector<eval::Detection> decode(const CellScores& s, std::span<const Anchor> anchors, std::size_t image_height,
                                    std::size_t image_width, double score_threshold, const std::string& image_id) {
  if (anchors.size() != s.anchors) throw std::invalid_argument("decode: anchor count does not match the scores");
  std::vector<eval::Detection> out;
  const double H = static_cast<double>(image_height), W = static_cast<double>(image_width);
  for (std::size_t a = 0; a < s.anchors; ++a)
    for (std::size_t r = 0; r < s.rows; ++r)
      for (std::size_t c = 0; c < s.cols; ++c) {
        const std::size_t i = (a * s.rows + r) * s.cols + c;
        const auto* probs = &s.class_prob[i * s.classes];
        const auto cls = static_cast<std::size_t>(std::max_element(probs, probs + s.classes) - probs);
        const double score = s.objectness[i] * probs[cls];
        if (score < score_threshold) continue;
        const double* o = &s.offsets[4 * i];
        const double cx = (static_cast<double>(c) + o[0]) * kStride, cy = (static_cast<double>(r) + o[1]) * kStride;
        const double w = anchors[a].width() * std::exp(o[2]), h = anchors[a].height() * std::exp(o[3]);
        eval::Detection d;
        d.image_id = image_id;
        d.class_id = static_cast<int>(cls);
        d.score = score;
        d.bbox = {std::clamp(cx - w / 2, 0.0, W), std::clamp(cy - h / 2, 0.0, H), std::clamp(cx + w / 2, 0.0, W),
                  std::clamp(cy + h / 2, 0.0, H)};
        if (data::is_valid(d.bbox)) out.push_back(std::move(d));
      }
  return out;
}

std::vector<eval::Detection> nms(std::vector<eval::Detection> dets, double iou_threshold) {
  std::stable_sort(dets.begin(), dets.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
  std::vector<eval::Detection> kept;
  for (auto& d : dets) {
    const bool suppressed =
        std::any_of(kept.begin(), kept.end(), [&](const auto& k) { return eval::iou(k.bbox, d.bbox) >= iou_threshold; });
    if (!suppressed) kept.push_back(std::move(d));
  }
  return kept;
}

std::vector<eval::Detection> detect(const GridDetector<float>& model, const Image& image, double score_threshold,
                                    double nms_iou, const std::string& image_id) {
  require_image(image, "detect");
  if (score_threshold >= 1.0) return {};
  const Image batch = stack_images(std::span<const Image>(&image, 1));
  const auto scores = cell_scores(model(batch), 0, model.arch().num_classes());
  auto raw = decode(scores, model.arch().anchors, image_height(image), image_width(image), score_threshold, image_id);
  std::vector<eval::Detection> out;
  for (std::size_t k = 0; k < model.arch().num_classes(); ++k) {
    std::vector<eval::Detection> of_class;
    for (const auto& d : raw)
      if (d.class_id == static_cast<int>(k)) of_class.push_back(d);
    auto kept = nms(std::move(of_class), nms_iou);
    out.insert(out.end(), kept.begin(), kept.end());
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
  return out;
}

std::vector<eval::Detection> detect_all(const GridDetector<float>& model, const data::DomainDataset& dataset,
                                        double score_threshold, double nms_iou) {
  std::vector<eval::Detection> out;
  for (const auto& r : dataset.records) {
    auto d = detect(model, r.image, score_threshold, nms_iou, r.image_id);
    out.insert(out.end(), d.begin(), d.end());
  }
  return out;
}

void validate(const DetectorTrainConfig& c) {
  if (c.batch_size == 0) throw std::invalid_argument("detector training: batch_size must be positive");
  if (c.decay_start > c.iterations) throw std::invalid_argument("detector training: decay_start > iterations");
  if (!(c.base_lr > 0)) throw std::invalid_argument("detector training: base_lr must be positive");
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!unit(c.flip_probability)) throw std::invalid_argument("detector training: flip_probability outside [0, 1]");
  if (!unit(c.score_threshold)) throw std::invalid_argument("detector training: score_threshold outside [0, 1]");
  if (!unit(c.nms_iou)) throw std::invalid_argument("detector training: nms_iou outside [0, 1]");
}

namespace {

std::vector<data::Annotation> flipped(std::vector<data::Annotation> anns, double width) {
  for (auto& a : anns) a.bbox = {width - a.bbox.x_max, a.bbox.y_min, width - a.bbox.x_min, a.bbox.y_max};
  return anns;
}

}  // namespace

DetectorTrainResult train_detector(const data::DomainDataset& ds, const DetectorTrainConfig& config) {
  validate(config);
  if (ds.records.empty()) throw std::invalid_argument("train_detector: empty dataset");
  if (!ds.annotations_loaded) throw std::invalid_argument("train_detector: dataset was loaded images-only");
  if (ds.annotation_count() == 0) throw std::invalid_argument("train_detector: dataset has no annotations");
  const Shape shape = ds.records.front().image.shape();
  for (const auto& r : ds.records) {
    require_image(r.image, "train_detector");
    if (r.image.shape() != shape) throw std::invalid_argument("train_detector: images differ in size");
  }
  if (shape[1] % kStride || shape[2] % kStride)
    throw std::invalid_argument("train_detector: image sides must be multiples of 8");

  Rng root(config.seed);
  Rng init_rng = root.fork(0), order_rng = root.fork(1), flip_rng = root.fork(2);
  DetectorArch arch{ds.class_table, config.anchors, config.width};
  DetectorTrainResult result{GridDetector<float>(arch, init_rng), {}};
  const auto params = result.model.parameters();
  Adam<float> adam(params.tensors(), config.base_lr);
  const LinearDecaySchedule schedule{config.base_lr, config.decay_start, config.iterations - config.decay_start};

  std::vector<std::size_t> order(ds.records.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  const double width = static_cast<double>(shape[2]);
  const std::size_t rows = shape[1] / kStride, cols = shape[2] / kStride;

  for (std::size_t it = 0; it < config.iterations; ++it) {
    std::vector<Image> images;
    std::vector<std::vector<data::Annotation>> anns;
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      if (cursor == order.size()) {
        order_rng.shuffle(order);
        cursor = 0;
      }
      const auto& rec = ds.records[order[cursor++]];
      if (config.flip_probability > 0 && flip_rng.bernoulli(config.flip_probability)) {
        images.push_back(hflip(rec.image));
        anns.push_back(flipped(rec.annotations, width));
      } else {
        images.push_back(rec.image);
        anns.push_back(rec.annotations);
      }
    }
    const auto targets = build_targets(anns, rows, cols, arch.anchors);
    adam.set_learning_rate(schedule(it));
    const auto loss = detector_loss(result.model(stack_images(std::span<const Image>(images))), targets,
                                    arch.num_classes(), config.weights);
    const double value = loss.item();
    if (!std::isfinite(value))
      throw TrainingDiverged("train_detector: non-finite loss at iteration " + std::to_string(it), it);
    backward(loss);
    adam.step();
    result.loss_history.push_back(value);
  }
  return result;
}

void save_detector(const GridDetector<float>& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_parameters(model.parameters(), dir / "detector.ckpt");
  json anchors = json::array();
  for (const auto& a : model.arch().anchors) anchors.push_back({a.scale, a.aspect_ratio});
  const json meta = {{"classes", model.arch().classes}, {"anchors", anchors}, {"width", model.arch().width}};
  std::ofstream out(dir / "detector.json", std::ios::binary);
  out << meta.dump(1) << '\n';
  if (!out) throw std::runtime_error("save_detector: cannot write " + (dir / "detector.json").string());
}

GridDetector<float> load_detector(const std::filesystem::path& dir) {
  const auto meta_path = dir / "detector.json";
  std::ifstream in(meta_path, std::ios::binary);
  if (!in) throw data::DatasetError(meta_path.string(), "cannot open");
  DetectorArch arch;
  try {
    const json meta = json::parse(in);
    arch.classes = meta.at("classes").get<std::vector<std::string>>();
    arch.width = meta.at("width").get<std::size_t>();
    arch.anchors.clear();
    for (const auto& a : meta.at("anchors")) arch.anchors.push_back({a.at(0).get<double>(), a.at(1).get<double>()});
  } catch (const json::exception& e) {
    throw data::DatasetError(meta_path.string(), e.what());
  }
  GridDetector<float> model(arch, 0);
  auto params = model.parameters();
  load_parameters(params, dir / "detector.ckpt");
  return model;
}

}  // namespace uda::detector
