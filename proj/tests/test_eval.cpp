#include <sstream>
#include <stdexcept>

#include "doctest.h"
#include "eval_reference.hpp"
#include "json.hpp"
#include "uda/eval/detection_eval.hpp"

using namespace uda;
using namespace uda::eval;
using data::BBox;

namespace {

std::vector<Detection> dets_at(const BBox& box, std::initializer_list<double> scores, int cls = 0,
                               const std::string& image = "a") {
  std::vector<Detection> out;
  for (double s : scores) out.push_back({image, box, cls, s});
  return out;
}

// count unit cells covered by both / either box on an integer grid
double cell_iou(const BBox& a, const BBox& b) {
  int both = 0, either = 0;
  for (int y = 0; y < 40; ++y)
    for (int x = 0; x < 40; ++x) {
      const bool in_a = x >= a.x_min && x < a.x_max && y >= a.y_min && y < a.y_max;
      const bool in_b = x >= b.x_min && x < b.x_max && y >= b.y_min && y < b.y_max;
      both += in_a && in_b;
      either += in_a || in_b;
    }
  return static_cast<double>(both) / either;
}

PRCurve fixture_curve() { return precision_recall({true, true}, 3); }

}  // namespace

TEST_CASE("iou") {
  const BBox a{0, 0, 10, 10};
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, BBox{20, 20, 30, 30}) == 0.0);
  CHECK(iou(a, BBox{10, 0, 20, 10}) == 0.0);  // touching edges share no area
  CHECK(iou(a, BBox{5, 0, 15, 10}) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(iou(a, BBox{5, 0, 15, 10}) == cell_iou(a, BBox{5, 0, 15, 10}));

  Rng rng(1);
  for (int i = 0; i < 2000; ++i) {
    auto box = [&] {
      const double x = static_cast<double>(rng.below(30)), y = static_cast<double>(rng.below(30));
      return BBox{x, y, x + 1 + rng.below(10), y + 1 + rng.below(10)};
    };
    const BBox p = box(), q = box();
    const double o = iou(p, q);
    REQUIRE(o >= 0.0);
    REQUIRE(o <= 1.0);
    REQUIRE(o == iou(q, p));
    REQUIRE(o == doctest::Approx(cell_iou(p, q)).epsilon(1e-12));
  }
}

TEST_CASE("match_detections") {
  const std::vector<GroundTruth> one{{"a", {0, 0, 10, 10}, 0}};
  auto m = match_detections(dets_at({0, 0, 10, 9}, {0.8, 0.9}), one);
  REQUIRE(m.size() == 2);
  CHECK(m[0].detection == 1);
  CHECK(m[0].true_positive);
  CHECK(m[0].ground_truth == 0u);
  CHECK_FALSE(m[1].true_positive);

  for (const auto& x : match_detections(dets_at({0, 0, 5, 5}, {0.3, 0.2, 0.1}), {})) CHECK_FALSE(x.true_positive);

  // equal scores keep input order
  m = match_detections(dets_at({0, 0, 10, 10}, {0.5, 0.5, 0.5}), one);
  CHECK(m[0].detection == 0);
  CHECK(m[1].detection == 1);
  CHECK(m[2].detection == 2);

  // other image never matches
  CHECK_FALSE(match_detections(dets_at({0, 0, 10, 10}, {0.9}, 0, "b"), one)[0].true_positive);

  // picks the highest-IoU unmatched GT, not the first one
  const std::vector<GroundTruth> two{{"a", {0, 0, 10, 10}, 0}, {"a", {2, 0, 12, 10}, 0}};
  m = match_detections(dets_at({2, 0, 12, 10}, {0.9, 0.8}), two);
  CHECK(m[0].ground_truth == 1u);
  CHECK(m[1].ground_truth == 0u);  // IoU 8/12 >= 0.5 with the remaining GT

  // threshold is inclusive
  CHECK(match_detections(dets_at({5, 0, 15, 10}, {0.9}), one, 1.0 / 3.0)[0].true_positive);
  CHECK_FALSE(match_detections(dets_at({5, 0, 15, 10}, {0.9}), one, 0.34)[0].true_positive);

  Rng rng(2);
  for (int trial = 0; trial < 300; ++trial) {
    auto inst = testing::random_eval_instance(rng, 20, 10, 1);
    for (auto& d : inst.detections) d.class_id = 0;
    for (auto& g : inst.ground_truths) g.class_id = 0;
    const auto got = match_detections(inst.detections, inst.ground_truths);
    const auto want = testing::ref_labels(inst.detections, inst.ground_truths, 0.5);
    REQUIRE(got.size() == want.size());
    std::vector<int> used(inst.ground_truths.size(), 0);
    for (std::size_t i = 0; i < got.size(); ++i) {
      REQUIRE(got[i].true_positive == want[i]);
      if (got[i].ground_truth) REQUIRE(++used[*got[i].ground_truth] == 1);
    }
  }
}

TEST_CASE("precision_recall") {
  auto c = precision_recall({true}, 1);
  REQUIRE(c.points.size() == 1);
  CHECK(c.points[0].recall == 1.0);
  CHECK(c.points[0].precision == 1.0);
  c = precision_recall({false, true}, 1);
  REQUIRE(c.points.size() == 2);
  CHECK(c.points[0].recall == 0.0);
  CHECK(c.points[0].precision == 0.0);
  CHECK(c.points[1].recall == 1.0);
  CHECK(c.points[1].precision == 0.5);

  Rng rng(3);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = rng.below(40), num_gt = 1 + rng.below(20);
    std::vector<bool> labels;
    std::size_t tps = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool tp = tps < num_gt && rng.bernoulli(0.5);
      tps += tp;
      labels.push_back(tp);
    }
    c = precision_recall(labels, num_gt);
    std::size_t cum = 0;
    for (std::size_t k = 0; k < n; ++k) {
      cum += labels[k];
      REQUIRE(c.points[k].recall == static_cast<double>(cum) / num_gt);
      REQUIRE(c.points[k].precision == static_cast<double>(cum) / (k + 1));
      if (k > 0) REQUIRE(c.points[k].recall >= c.points[k - 1].recall);
    }
  }
  CHECK_THROWS_AS(precision_recall({true}, 0), std::invalid_argument);
  CHECK_THROWS_AS(precision_recall({true, true}, 1), std::invalid_argument);
}

TEST_CASE("average precision") {
  for (auto v : {VocVersion::voc07, VocVersion::voc12}) {
    CHECK(average_precision(precision_recall({true}, 1), v) == 1.0);
    CHECK(average_precision(precision_recall({false, true}, 1), v) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(average_precision(precision_recall({}, 4), v) == 0.0);
    CHECK(average_precision(precision_recall({false, false}, 4), v) == 0.0);
  }
  const auto f = fixture_curve();
  CHECK(average_precision(f, VocVersion::voc12) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(average_precision(f, VocVersion::voc07) == doctest::Approx(7.0 / 11.0).epsilon(1e-15));
  CHECK(average_precision(f, VocVersion::voc12) - average_precision(f, VocVersion::voc07) > 0.01);

  CHECK(interpolated_precision(precision_recall({false, true, false, true}, 2), 0.5) == 0.5);
  CHECK(interpolated_precision(precision_recall({false, true, false, true}, 2), 0.75) == 0.5);
  CHECK(interpolated_precision(precision_recall({true, false}, 2), 0.6) == 0.0);

  CHECK(parse_voc_version("voc07") == VocVersion::voc07);
  CHECK(parse_voc_version("2012") == VocVersion::voc12);
  CHECK_THROWS_AS(parse_voc_version("coco"), std::invalid_argument);
}

TEST_CASE("average precision properties on random curves") {
  Rng rng(4);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 1 + rng.below(30), num_gt = 1 + rng.below(15);
    std::vector<bool> labels;
    std::size_t tps = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool tp = tps < num_gt && rng.bernoulli(0.6);
      tps += tp;
      labels.push_back(tp);
    }
    const auto curve = precision_recall(labels, num_gt);
    const double ap12 = average_precision(curve, VocVersion::voc12);
    const double ap07 = average_precision(curve, VocVersion::voc07);
    INFO("trial " << t);
    CHECK(std::abs(ap12 - testing::numeric_voc12(curve)) < 1e-4);
    for (double ap : {ap12, ap07}) {
      CHECK(ap >= 0.0);
      CHECK(ap <= 1.0);
    }
    CHECK(ap12 == testing::ref_ap(labels, num_gt, VocVersion::voc12));
    CHECK(ap07 == testing::ref_ap(labels, num_gt, VocVersion::voc07));

    // flipping any FP to TP (order held) never lowers AP
    if (tps < num_gt) {
      for (std::size_t i = 0; i < n; ++i) {
        if (labels[i]) continue;
        auto better = labels;
        better[i] = true;
        const auto c2 = precision_recall(better, num_gt);
        CHECK(average_precision(c2, VocVersion::voc12) >= ap12);
        CHECK(average_precision(c2, VocVersion::voc07) >= ap07);
      }
    }
  }
}

TEST_CASE("mean_ap") {
  // One class: 50 GT, 21 perfect detections first -> AP 0.42 (VOC12).
  std::vector<GroundTruth> gts;
  std::vector<Detection> dets;
  for (int i = 0; i < 50; ++i) {
    const BBox b{0, 0, 4, 4};
    const std::string img = "im" + std::to_string(i);
    gts.push_back({img, b, 0});
    if (i < 21) dets.push_back({img, b, 0, 0.9});
  }
  auto r = mean_ap(dets, gts);
  REQUIRE(r.classes.size() == 1);
  CHECK(r.classes[0].ap == doctest::Approx(0.42).epsilon(1e-12));
  CHECK(r.map_value == r.classes[0].ap);
  CHECK(r.version == VocVersion::voc12);
  CHECK(r.iou_threshold == 0.5);

  // Two classes with AP 0.2 and 0.8.
  gts.clear();
  dets.clear();
  for (int i = 0; i < 5; ++i) {
    const std::string img = "im" + std::to_string(i);
    gts.push_back({img, {0, 0, 4, 4}, 0});
    gts.push_back({img, {8, 8, 12, 12}, 1});
    if (i < 1) dets.push_back({img, {0, 0, 4, 4}, 0, 0.9});
    if (i < 4) dets.push_back({img, {8, 8, 12, 12}, 1, 0.9});
  }
  dets.push_back({"im0", {0, 0, 4, 4}, 2, 0.9});  // class without ground truth: ignored
  r = mean_ap(dets, gts);
  REQUIRE(r.classes.size() == 2);
  CHECK(r.ap(0).value() == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(r.ap(1).value() == doctest::Approx(0.8).epsilon(1e-12));
  CHECK_FALSE(r.ap(2).has_value());
  CHECK(r.map_value == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(r.classes[1].num_detections == 4);

  CHECK_THROWS_AS(mean_ap(dets, {}), std::invalid_argument);

  // version sensitivity fixture: 3 GT, two hits then nothing
  std::vector<GroundTruth> three{{"x", {0, 0, 4, 4}, 0}, {"x", {10, 0, 14, 4}, 0}, {"x", {20, 0, 24, 4}, 0}};
  std::vector<Detection> two_hits{{"x", {0, 0, 4, 4}, 0, 0.9}, {"x", {10, 0, 14, 4}, 0, 0.8}};
  const double m12 = mean_ap(two_hits, three, VocVersion::voc12).map_value;
  const double m07 = mean_ap(two_hits, three, VocVersion::voc07).map_value;
  CHECK(m12 == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(m07 == doctest::Approx(7.0 / 11.0).epsilon(1e-15));
  CHECK(std::abs(m12 - m07) > 0.01);
}

TEST_CASE("evaluator equals the naive reference on random instances") {
  Rng rng(5);
  for (int t = 0; t < 200; ++t) {
    const auto inst = testing::random_eval_instance(rng);
    for (auto v : {VocVersion::voc07, VocVersion::voc12}) {
      const auto got = mean_ap(inst.detections, inst.ground_truths, v, 0.5);
      const auto want = testing::ref_evaluate(inst.detections, inst.ground_truths, v, 0.5);
      INFO("trial " << t << " " << to_string(v));
      REQUIRE(got.classes.size() == want.ap.size());
      for (const auto& c : got.classes) CHECK(c.ap == want.ap.at(c.class_id));
      CHECK(got.map_value == want.map);
    }
  }
}

TEST_CASE("permuting equal-score detections with equal labels keeps AP") {
  // Four detections at one score, each a perfect hit on its own GT, plus
  // misses at another shared score.
  std::vector<GroundTruth> gts;
  std::vector<Detection> dets;
  for (int i = 0; i < 4; ++i) {
    const BBox b{10.0 * i, 0, 10.0 * i + 5, 5};
    gts.push_back({"a", b, 0});
    dets.push_back({"a", b, 0, 0.7});
    dets.push_back({"a", {10.0 * i, 20, 10.0 * i + 5, 25}, 0, 0.4});
  }
  gts.push_back({"a", {0, 40, 5, 45}, 0});
  const double base = mean_ap(dets, gts).map_value;
  Rng rng(6);
  for (int t = 0; t < 50; ++t) {
    auto shuffled = dets;
    rng.shuffle(shuffled);
    CHECK(mean_ap(shuffled, gts).map_value == base);
    CHECK(mean_ap(shuffled, gts, VocVersion::voc07).map_value == mean_ap(dets, gts, VocVersion::voc07).map_value);
  }
}

TEST_CASE("detections jsonl") {
  const std::vector<std::string> classes{"disc", "square"};
  const std::vector<Detection> dets{{"img_1", {1.5, 2, 3.25, 4}, 1, 0.875}, {"img_2", {0, 0, 1, 1}, 0, 0.1}};
  std::stringstream s;
  write_detections_jsonl(s, dets, classes);
  const std::string text = s.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 2);
  const auto first = nlohmann::json::parse(text.substr(0, text.find('\n')));
  CHECK(first["class"] == "square");
  CHECK(first["score"] == 0.875);

  std::istringstream in("\n" + text + "\n");
  const auto back = read_detections_jsonl(in, classes);
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back[i].image_id == dets[i].image_id);
    CHECK(back[i].bbox == dets[i].bbox);
    CHECK(back[i].class_id == dets[i].class_id);
    CHECK(back[i].score == dets[i].score);
  }

  auto expect_error = [&](const std::string& line, const std::string& where) {
    std::istringstream bad(text + line + "\n");
    try {
      read_detections_jsonl(bad, classes);
      FAIL("expected error");
    } catch (const data::DatasetError& e) {
      CHECK(e.context() == where);
    }
  };
  expect_error("{\"image_id\": \"x\"", "detections line 3");
  expect_error(R"({"image_id": "x", "class": "cube", "bbox": [0,0,1,1], "score": 0.5})", "detections line 3.class");
  expect_error(R"({"image_id": "x", "class": "disc", "bbox": [0,0,1], "score": 0.5})", "detections line 3.bbox");
  expect_error(R"({"image_id": "x", "class": "disc", "bbox": [2,0,1,1], "score": 0.5})", "detections line 3.bbox");
  expect_error(R"({"image_id": "x", "class": "disc", "bbox": [0,0,1,1], "score": 1.5})", "detections line 3.score");
  expect_error(R"({"image_id": "x", "class": "disc", "bbox": [0,0,1,1]})", "detections line 3");
}

TEST_CASE("reports") {
  const std::vector<std::string> classes{"disc", "square", "triangle"};
  EvalResult r;
  r.classes = {{0, 3, 5, 0.5}, {2, 1, 0, 0.25}};
  r.map_value = 0.375;
  r.version = VocVersion::voc07;
  const auto table = format_table(r, classes);
  CHECK(table.find("voc07") != std::string::npos);
  CHECK(table.find("disc") != std::string::npos);
  CHECK(table.find("square") == std::string::npos);
  CHECK(table.find("37.50") != std::string::npos);
  const auto j = nlohmann::json::parse(to_json(r, classes));
  CHECK(j["metric"] == "voc07");
  CHECK(j["map"] == 0.375);
  CHECK(j["per_class"]["triangle"] == 0.25);
  CHECK_FALSE(j["per_class"].contains("square"));
}
