#include "uda/eval/detection_eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "json.hpp"

namespace uda::eval {

using json = nlohmann::json;

double iou(const BBox& a, const BBox& b) {
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

std::vector<Match> match_detections(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                                    double iou_threshold) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });

  std::unordered_map<std::string_view, std::vector<std::size_t>> by_image;
  for (std::size_t g = 0; g < gts.size(); ++g) by_image[gts[g].image_id].push_back(g);
  std::vector<bool> taken(gts.size(), false);

  std::vector<Match> out;
  out.reserve(dets.size());
  for (std::size_t d : order) {
    Match m{d, false, std::nullopt};
    double best = -1.0;
    if (auto it = by_image.find(dets[d].image_id); it != by_image.end()) {
      for (std::size_t g : it->second) {
        if (taken[g]) continue;
        const double o = iou(dets[d].bbox, gts[g].bbox);
        if (o >= iou_threshold && o > best) {
          best = o;
          m.ground_truth = g;
        }
      }
    }
    if (m.ground_truth) {
      taken[*m.ground_truth] = true;
      m.true_positive = true;
    }
    out.push_back(m);
  }
  return out;
}

PRCurve precision_recall(const std::vector<bool>& tp, std::size_t num_gt) {
  if (num_gt == 0) throw std::invalid_argument("precision_recall: num_gt must be positive");
  PRCurve c;
  c.num_gt = num_gt;
  c.points.reserve(tp.size());
  std::size_t hits = 0;
  for (std::size_t k = 0; k < tp.size(); ++k) {
    hits += tp[k] ? 1 : 0;
    if (hits > num_gt) throw std::invalid_argument("precision_recall: more true positives than ground truths");
    c.points.push_back({static_cast<double>(hits) / static_cast<double>(num_gt),
                        static_cast<double>(hits) / static_cast<double>(k + 1)});
  }
  return c;
}

std::string_view to_string(VocVersion v) { return v == VocVersion::voc07 ? "voc07" : "voc12"; }

VocVersion parse_voc_version(std::string_view text) {
  if (text == "voc07" || text == "VOC07" || text == "2007") return VocVersion::voc07;
  if (text == "voc12" || text == "VOC12" || text == "2012") return VocVersion::voc12;
  throw std::invalid_argument("unknown metric '" + std::string(text) + "' (expected voc07 or voc12)");
}

double interpolated_precision(const PRCurve& curve, double recall) {
  double best = 0.0;
  for (const auto& p : curve.points)
    if (p.recall >= recall) best = std::max(best, p.precision);
  return best;
}

double average_precision(const PRCurve& curve, VocVersion version) {
  if (version == VocVersion::voc07) {
    double total = 0.0;
    for (int k = 0; k <= 10; ++k) total += interpolated_precision(curve, k / 10.0);
    return total / 11.0;
  }
  const auto& pts = curve.points;
  // suffix maximum of precision = interpolated precision on (r_{i-1}, r_i]
  std::vector<double> envelope(pts.size());
  double running = 0.0;
  for (std::size_t i = pts.size(); i-- > 0;) envelope[i] = running = std::max(running, pts[i].precision);
  double area = 0.0, prev = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    area += (pts[i].recall - prev) * envelope[i];
    prev = pts[i].recall;
  }
  return area;
}

std::optional<double> EvalResult::ap(int class_id) const {
  for (const auto& c : classes)
    if (c.class_id == class_id) return c.ap;
  return std::nullopt;
}

EvalResult mean_ap(std::span<const Detection> detections, std::span<const GroundTruth> ground_truths,
                   VocVersion version, double iou_threshold) {
  if (ground_truths.empty()) throw std::invalid_argument("mean_ap: no ground truth");
  std::map<int, std::vector<GroundTruth>> gt_by_class;
  for (const auto& g : ground_truths) gt_by_class[g.class_id].push_back(g);
  std::map<int, std::vector<Detection>> det_by_class;
  for (const auto& d : detections)
    if (gt_by_class.count(d.class_id)) det_by_class[d.class_id].push_back(d);

  EvalResult r;
  r.version = version;
  r.iou_threshold = iou_threshold;
  for (const auto& [cls, gts] : gt_by_class) {
    const auto& dets = det_by_class[cls];
    const auto matches = match_detections(dets, gts, iou_threshold);
    std::vector<bool> labels;
    labels.reserve(matches.size());
    for (const auto& m : matches) labels.push_back(m.true_positive);
    ClassResult c;
    c.class_id = cls;
    c.num_gt = gts.size();
    c.num_detections = dets.size();
    c.ap = average_precision(precision_recall(labels, gts.size()), version);
    r.classes.push_back(c);
  }
  double sum = 0.0;
  for (const auto& c : r.classes) sum += c.ap;
  r.map_value = sum / static_cast<double>(r.classes.size());
  return r;
}

std::vector<GroundTruth> ground_truths_of(const data::DomainDataset& ds) {
  if (!ds.annotations_loaded) throw std::invalid_argument("ground_truths_of: dataset was loaded images-only");
  std::vector<GroundTruth> out;
  for (const auto& r : ds.records)
    for (const auto& a : r.annotations) out.push_back({r.image_id, a.bbox, a.class_id});
  return out;
}

void write_detections_jsonl(std::ostream& out, std::span<const Detection> detections,
                            std::span<const std::string> class_table) {
  for (const auto& d : detections) {
    if (d.class_id < 0 || static_cast<std::size_t>(d.class_id) >= class_table.size())
      throw std::invalid_argument("write_detections_jsonl: class id outside the class table");
    const json j = {{"image_id", d.image_id},
                    {"class", class_table[d.class_id]},
                    {"bbox", {d.bbox.x_min, d.bbox.y_min, d.bbox.x_max, d.bbox.y_max}},
                    {"score", d.score}};
    out << j.dump() << '\n';
  }
}

std::vector<Detection> read_detections_jsonl(std::istream& in, std::span<const std::string> class_table) {
  std::vector<Detection> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "detections line " + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw data::DatasetError(where, e.what());
    }
    Detection d;
    try {
      d.image_id = j.at("image_id").get<std::string>();
      const auto name = j.at("class").get<std::string>();
      const auto it = std::find(class_table.begin(), class_table.end(), name);
      if (it == class_table.end()) throw data::DatasetError(where + ".class", "unknown class '" + name + "'");
      d.class_id = static_cast<int>(it - class_table.begin());
      const auto& b = j.at("bbox");
      if (!b.is_array() || b.size() != 4) throw data::DatasetError(where + ".bbox", "expected 4 numbers");
      d.bbox = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
      d.score = j.at("score").get<double>();
    } catch (const json::exception& e) {
      throw data::DatasetError(where, e.what());
    }
    if (!data::is_valid(d.bbox)) throw data::DatasetError(where + ".bbox", "invalid box");
    if (!(d.score >= 0.0 && d.score <= 1.0)) throw data::DatasetError(where + ".score", "score outside [0, 1]");
    out.push_back(std::move(d));
  }
  return out;
}

std::string format_table(const EvalResult& r, std::span<const std::string> class_table) {
  std::ostringstream s;
  auto name = [&](int id) {
    return id >= 0 && static_cast<std::size_t>(id) < class_table.size() ? class_table[id] : std::to_string(id);
  };
  std::size_t width = 5;
  for (const auto& c : r.classes) width = std::max(width, name(c.class_id).size());
  char buf[64];
  s << to_string(r.version) << " AP, IoU >= " << r.iou_threshold << "\n";
  s << std::string(width, ' ') << "      AP   #GT  #det\n";
  for (const auto& c : r.classes) {
    std::snprintf(buf, sizeof buf, "  %6.2f %5zu %5zu\n", 100.0 * c.ap, c.num_gt, c.num_detections);
    const auto n = name(c.class_id);
    s << n << std::string(width - n.size(), ' ') << buf;
  }
  std::snprintf(buf, sizeof buf, "  %6.2f\n", 100.0 * r.map_value);
  s << "mAP" << std::string(width - 3, ' ') << buf;
  return s.str();
}

std::string to_json(const EvalResult& r, std::span<const std::string> class_table) {
  json per_class = json::object();
  for (const auto& c : r.classes) {
    const std::string key = c.class_id >= 0 && static_cast<std::size_t>(c.class_id) < class_table.size()
                                ? class_table[c.class_id]
                                : std::to_string(c.class_id);
    per_class[key] = c.ap;
  }
  const json j = {{"metric", std::string(to_string(r.version))},
                  {"iou_threshold", r.iou_threshold},
                  {"map", r.map_value},
                  {"per_class", per_class}};
  return j.dump(2);
}

}  // namespace uda::eval
