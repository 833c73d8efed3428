#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "dataset_support.hpp"
#include "doctest.h"
#include "json.hpp"
#include "support.hpp"
#include "uda/data/dataset_io.hpp"
#include "uda/pipeline/experiment.hpp"

using namespace uda;
using namespace uda::pipeline;
using uda::testing::bit_equal;
using uda::testing::scratch_dir;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Small enough for a couple of seconds per run.
ExperimentConfig tiny_config(const fs::path& out) {
  ExperimentConfig c;
  c.synth = synth::SynthConfig{};
  c.synth->n_train = 8;
  c.synth->n_test = 4;
  c.seeds = {7};
  c.output_dir = out;
  c.cyclegan.epochs_fixed = 1;
  c.cyclegan.epochs_decay = 0;
  c.adain.iterations = 10;
  c.detector.iterations = 30;
  c.detector.decay_start = 20;
  return c;
}

const StageRecord* stage(const ExperimentReport& r, std::string_view name) {
  for (const auto& s : r.stages)
    if (s.name == name) return &s;
  return nullptr;
}

std::map<std::string, std::string> file_hashes(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).generic_string()] = sha256_file(e.path());
  return out;
}

struct EnvGuard {
  explicit EnvGuard(const char* value) {
    if (value)
      setenv("UDA_THREADS", value, 1);
    else
      unsetenv("UDA_THREADS");
  }
  ~EnvGuard() { unsetenv("UDA_THREADS"); }
};

}  // namespace

TEST_CASE("sha256 known answers") {
  CHECK(sha256_hex({}) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  const std::string abc = "abc";
  CHECK(sha256_hex({reinterpret_cast<const std::uint8_t*>(abc.data()), abc.size()}) ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("experiment config parsing") {
  SUBCASE("defaults") {
    const auto c = parse_experiment_config(R"({"synth": {}})");
    CHECK(c.settings.size() == 3);
    CHECK(c.settings[0].name() == "OURS-C");
    CHECK(c.translators == TranslatorChoice::both);
    CHECK(c.metric == eval::VocVersion::voc12);
    CHECK(c.iou_threshold == 0.5);
    CHECK(c.seeds == std::vector<std::uint64_t>{7});
    CHECK(c.cyclegan.base_lr == doctest::Approx(7e-4));
    CHECK(c.cyclegan.batch_size == 1);
    CHECK(c.detector.iterations == 1000);
    CHECK(c.adain_alpha == 1.0);
  }
  SUBCASE("fields") {
    const auto c = parse_experiment_config(R"({
      "synth": {"n_train": 10, "shift": {"fog_alpha": 0.3}},
      "translators": "cyclegan", "settings": ["S+C", "C"], "metric": "voc07", "iou": 0.7,
      "seeds": [1, 2], "output_dir": "runs/x", "resume": true, "evaluate_source_plus_target": true,
      "cyclegan": {"epochs_fixed": 2, "base_lr": 0.001},
      "adain": {"iterations": 5, "alpha": 0.5, "layer_taps": [2]},
      "detector": {"iterations": 40, "decay_start": 10, "anchors": [[12, 2]], "loss_weights": {"box": 2}}})",
                                           "/base");
    CHECK(c.synth->n_train == 10);
    CHECK(c.synth->shift.fog_alpha == 0.3);
    CHECK(c.settings[0].name() == "OURS-S+C");
    CHECK(c.metric == eval::VocVersion::voc07);
    CHECK(c.output_dir == fs::path("/base/runs/x"));
    CHECK(c.resume);
    CHECK(c.cyclegan.epochs_fixed == 2);
    CHECK(c.adain.layer_taps == std::vector<std::size_t>{2});
    CHECK(c.adain_alpha == 0.5);
    CHECK(c.detector.anchors == std::vector<detector::Anchor>{{12, 2}});
    CHECK(c.detector.weights.box == 2);
  }
  SUBCASE("canonical json round trips") {
    auto c = parse_experiment_config(R"({"synth": {}, "settings": ["A", "S+C+A"], "seeds": [3, 4]})");
    const auto again = parse_experiment_config(to_json(c));
    CHECK(to_json(again) == to_json(c));
    CHECK(config_hash(again) == config_hash(c));
  }
  SUBCASE("hash ignores output and resume only") {
    auto a = parse_experiment_config(R"({"synth": {}})");
    auto b = a;
    b.output_dir = "elsewhere";
    b.resume = true;
    CHECK(config_hash(a) == config_hash(b));
    b.seeds = {8};
    CHECK(config_hash(a) != config_hash(b));
    auto d = a;
    d.detector.iterations += 1;
    CHECK(config_hash(a) != config_hash(d));
  }
  SUBCASE("rejections") {
    for (const char* bad : {
             R"({})",
             R"({"synth": {}, "datasets": {"source_train": "a", "source_test": "b", "target_train": "c", "target_test": "d"}})",
             R"({"synth": {}, "bogus": 1})",
             R"({"synth": {}, "settings": []})",
             R"({"synth": {}, "settings": ["C", "OURS-C"]})",
             R"({"synth": {}, "settings": ["Q"]})",
             R"({"synth": {}, "translators": "cyclegan", "settings": ["A"]})",
             R"({"synth": {}, "translators": "adain", "settings": ["C+A"]})",
             R"({"synth": {}, "translators": "gan"})",
             R"({"synth": {}, "seeds": []})",
             R"({"synth": {}, "seeds": [1, 1]})",
             R"({"synth": {}, "iou": 0})",
             R"({"synth": {}, "metric": "coco"})",
             R"({"synth": {}, "adain": {"alpha": 1.5}})",
             R"({"synth": {}, "detector": {"decay_start": 5000}})",
             R"({"synth": {}, "detector": {"iterations": "many"}})",
             R"({"synth": {"scene": {"classes": []}}})",
             R"({"datasets": {"source_train": "/nonexistent/a", "source_test": "/nonexistent/b", "target_train": "/nonexistent/c", "target_test": "/nonexistent/d"}})",
             R"({"datasets": {"source_train": "a"}})",
             R"({"synth": {})",
         }) {
      CAPTURE(bad);
      CHECK_THROWS_AS(parse_experiment_config(bad), std::invalid_argument);
    }
  }
  SUBCASE("sections scope skips data checks") {
    const auto c = parse_experiment_config(R"({"detector": {"iterations": 7, "decay_start": 7}})", {},
                                           ConfigScope::sections);
    CHECK(c.detector.iterations == 7);
    CHECK_THROWS(parse_experiment_config(R"({"detector": {"decay_start": 5000}})", {}, ConfigScope::sections));
  }
}

TEST_CASE("thread count from the environment") {
  {
    EnvGuard env(nullptr);
    CHECK(thread_count() >= 1);
  }
  {
    EnvGuard env("3");
    CHECK(thread_count() == 3);
  }
  for (const char* bad : {"0", "-2", "abc", "4x", ""}) {
    EnvGuard env(bad);
    CAPTURE(bad);
    CHECK_THROWS_AS(thread_count(), std::invalid_argument);
  }
}

TEST_CASE("dataset translation keeps annotations and ignores thread count") {
  synth::SceneConfig sc;
  const auto pair = synth::generate_domain_pair(sc, synth::default_shift(), 6, 1);
  const auto styles = images_of(pair.target_train);

  const cyclegan::CycleGanModel<float> cg(3);
  const auto c1 = translate_with_cyclegan(cg, pair.source_train, 1);
  const auto c4 = translate_with_cyclegan(cg, pair.source_train, 4);
  CHECK(data::same_content(c1, c4));
  REQUIRE(c1.size() == pair.source_train.size());
  for (std::size_t i = 0; i < c1.size(); ++i) {
    const auto& src = pair.source_train.records[i];
    CHECK(c1.records[i].image_id == src.image_id);
    CHECK(c1.records[i].annotations == src.annotations);
    CHECK(c1.records[i].domain_tag == data::DomainTag::fake_target_cyclegan);
    CHECK(c1.records[i].provenance == src.image_id);
    // A fresh generator is the identity.
    CHECK(bit_equal(c1.records[i].image.data(), src.image.data()));
  }

  const adain::StyleTransferModel<float> st(4);
  const auto a1 = translate_with_adain(st, pair.source_train, styles, 1.0, 9, 1);
  const auto a3 = translate_with_adain(st, pair.source_train, styles, 1.0, 9, 3);
  CHECK(data::same_content(a1, a3));
  Rng pick(9);
  for (std::size_t i = 0; i < a1.size(); ++i) {
    const auto& src = pair.source_train.records[i];
    const Image expect = adain::stylize(st, src.image, styles[pick.below(styles.size())], 1.0);
    CHECK(bit_equal(a1.records[i].image.data(), expect.data()));
    CHECK(a1.records[i].annotations == src.annotations);
    CHECK(a1.records[i].domain_tag == data::DomainTag::fake_target_adain);
  }
  CHECK_FALSE(data::same_content(a1, translate_with_adain(st, pair.source_train, styles, 1.0, 10, 1)));
  CHECK_THROWS_AS(translate_with_adain(st, pair.source_train, {}, 1.0, 9, 1), std::invalid_argument);

  auto images_only = pair.source_train;
  images_only.annotations_loaded = false;
  CHECK_THROWS_AS(translate_with_cyclegan(cg, images_only, 1), std::invalid_argument);
}

TEST_CASE("detect_dataset matches per-image detection in record order") {
  synth::SceneConfig sc;
  const auto pair = synth::generate_domain_pair(sc, synth::default_shift(), 5, 1);
  detector::DetectorArch arch{pair.source_train.class_table};
  const detector::GridDetector<float> model(arch, 2);
  auto params = model.parameters();
  Rng rng(1);
  for (const auto& p : params.items())
    for (auto& v : Tensor<float>(p.tensor).mutable_data()) v += static_cast<float>(rng.normal() * 0.1);
  std::vector<eval::Detection> expect;
  for (const auto& r : pair.source_train.records) {
    const auto d = detector::detect(model, r.image, 0.05, 0.45, r.image_id);
    expect.insert(expect.end(), d.begin(), d.end());
  }
  REQUIRE_FALSE(expect.empty());
  for (std::size_t threads : {1u, 3u}) {
    const auto got = detect_dataset(model, pair.source_train, 0.05, 0.45, threads);
    REQUIRE(got.size() == expect.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].image_id == expect[i].image_id);
      CHECK(got[i].bbox == expect[i].bbox);
      CHECK(got[i].score == expect[i].score);
    }
  }
}

TEST_CASE("single setting run: one setting detector, bounds present, no source records") {
  const auto out = scratch_dir("pipeline_single");
  auto c = tiny_config(out);
  c.translators = TranslatorChoice::cyclegan;
  c.settings = {data::parse_setting("OURS-C")};
  const auto report = run_experiment(c);

  REQUIRE(report.rows.size() == 3);
  CHECK(report.rows[0].name == "source-only");
  CHECK(report.rows[0].role == RowRole::lower_bound);
  CHECK(report.rows[1].name == "OURS-C");
  CHECK(report.rows[2].name == "target-only");
  CHECK(report.rows[2].role == RowRole::upper_bound);
  for (const auto& r : report.rows) CHECK(r.target.size() == 1);

  std::set<std::string> detectors;
  for (const auto& e : fs::directory_iterator(out / "seed_7" / "detectors")) detectors.insert(e.path().filename());
  CHECK(detectors == std::set<std::string>{"OURS-C", "source-only", "target-only"});
  CHECK_FALSE(fs::exists(out / "seed_7" / "adain"));
  CHECK_FALSE(fs::exists(out / "seed_7" / "fake_adain"));

  const auto training = nlohmann::json::parse(slurp(out / "seed_7/detectors/OURS-C/model/training.json"));
  CHECK(training["records"] == 8);
  CHECK(training["by_tag"] == nlohmann::json{{"fake_target_cyclegan", 8}});
  const auto bound = nlohmann::json::parse(slurp(out / "seed_7/detectors/source-only/model/training.json"));
  CHECK(bound["by_tag"] == nlohmann::json{{"source", 8}});
  const auto upper = nlohmann::json::parse(slurp(out / "seed_7/detectors/target-only/model/training.json"));
  CHECK(upper["by_tag"] == nlohmann::json{{"target", 8}});

  // The report on disk is the one returned.
  CHECK(slurp(out / "report.json") == report_json(report));
  CHECK(slurp(out / "report.txt") == report_text(report));
  const auto j = nlohmann::json::parse(slurp(out / "report.json"));
  CHECK(j["rows"].size() == 3);
  CHECK(j["rows"][0]["setting"] == "source-only");
  CHECK(j["rows"][2]["setting"] == "target-only");
  CHECK(j["provenance"]["config_hash"] == config_hash(c));
  CHECK(j["provenance"]["stages"].size() == report.stages.size());
  CHECK(report_text(report).find("target-only") != std::string::npos);
}

TEST_CASE("plain S setting is the lower bound row, not a duplicate") {
  const auto out = scratch_dir("pipeline_s_row");
  auto c = tiny_config(out);
  c.translators = TranslatorChoice::adain;
  c.settings = {data::parse_setting("S"), data::parse_setting("S+A")};
  const auto report = run_experiment(c);
  REQUIRE(report.rows.size() == 3);
  CHECK(report.rows[1].name == "OURS-S+A");
  const auto training = nlohmann::json::parse(slurp(out / "seed_7/detectors/OURS-S+A/model/training.json"));
  CHECK(training["by_tag"] == nlohmann::json{{"fake_target_adain", 8}, {"source", 8}});
}

TEST_CASE("target annotations are read only by target-only training and evaluation") {
  const auto out = scratch_dir("pipeline_instrumented");
  auto c = tiny_config(out);
  c.evaluate_source_plus_target = true;
  data::reset_target_annotation_counter();
  const auto report = run_experiment(c);

  for (const auto& s : report.stages) {
    CAPTURE(s.name);
    const bool allowed = s.name == "seed_7/train-detector:target-only" || s.name.starts_with("seed_7/evaluate:");
    if (allowed)
      CHECK(s.target_annotations_read > 0);
    else
      CHECK(s.target_annotations_read == 0);
  }
  // Translator training reads only images: zero target annotations there.
  REQUIRE(stage(report, "seed_7/train-cyclegan") != nullptr);
  REQUIRE(stage(report, "seed_7/train-adain") != nullptr);
  CHECK(stage(report, "seed_7/train-cyclegan")->target_annotations_read == 0);
  CHECK(stage(report, "seed_7/train-adain")->target_annotations_read == 0);

  for (const auto& r : report.rows) CHECK(r.source_plus_target.size() == 1);
  CHECK(report_text(report).find("source test + target test") != std::string::npos);
}

TEST_CASE("a training stage that touches target annotations fails with a stage error") {
  // Feed the target domain in as the "source": translating it needs its
  // annotations, which the unsupervised constraint forbids.
  const auto root = scratch_dir("pipeline_guard");
  synth::SceneConfig sc;
  const auto pair = synth::generate_domain_pair(sc, synth::default_shift(), 8, 4);
  data::save_dataset(pair.target_train, root / "tt");
  data::save_dataset(pair.target_test, root / "te");
  data::save_dataset(pair.source_test, root / "se");

  auto c = tiny_config(root / "out");
  c.synth.reset();
  c.datasets = DatasetPaths{root / "tt", root / "se", root / "tt", root / "te"};
  c.translators = TranslatorChoice::cyclegan;
  c.settings = {data::parse_setting("C")};
  try {
    run_experiment(c);
    FAIL("expected a StageError");
  } catch (const StageError& e) {
    CHECK(e.stage() == "seed_7/translate-cyclegan");
    CHECK(e.completed() == std::vector<std::string>{"seed_7/cyclegan"});
    CHECK(std::string(e.what()).find("target annotations") != std::string::npos);
    const auto j = nlohmann::json::parse(e.to_json());
    CHECK(j["stage"] == "seed_7/translate-cyclegan");
    CHECK(j["completed_artifacts"] == nlohmann::json::array({"seed_7/cyclegan"}));
  }
}

TEST_CASE("stage failures name the stage and what completed") {
  const auto root = scratch_dir("pipeline_failure");
  synth::SceneConfig sc;
  const auto pair = synth::generate_domain_pair(sc, synth::default_shift(), 4, 2);
  data::save_dataset(pair.source_train, root / "st");
  data::save_dataset(pair.source_test, root / "se");
  data::save_dataset(pair.target_train, root / "tt");
  data::save_dataset(pair.target_test, root / "te");
  auto c = tiny_config(root / "out");
  c.synth.reset();
  c.datasets = DatasetPaths{root / "st", root / "se", root / "tt", root / "te"};
  c.translators = TranslatorChoice::adain;
  c.settings = {data::parse_setting("A")};
  c.adain.crop_size = 128;  // larger than the images
  try {
    run_experiment(c);
    FAIL("expected a StageError");
  } catch (const StageError& e) {
    CHECK(e.stage() == "seed_7/train-adain");
    CHECK(e.completed().empty());
  }
}

TEST_CASE("dataset inputs are fingerprinted in the provenance") {
  const auto root = scratch_dir("pipeline_inputs");
  synth::SceneConfig sc;
  const auto pair = synth::generate_domain_pair(sc, synth::default_shift(), 8, 4);
  data::save_dataset(pair.source_train, root / "st");
  data::save_dataset(pair.source_test, root / "se");
  data::save_dataset(pair.target_train, root / "tt");
  data::save_dataset(pair.target_test, root / "te");
  auto c = tiny_config(root / "out");
  c.synth.reset();
  c.datasets = DatasetPaths{root / "st", root / "se", root / "tt", root / "te"};
  c.translators = TranslatorChoice::cyclegan;
  c.settings = {data::parse_setting("C")};
  const auto report = run_experiment(c);
  REQUIRE(report.stages.size() >= 4);
  CHECK(report.stages[0].name == "input:source_train");
  CHECK(report.stages[3].name == "input:target_test");
  CHECK(stage(report, "seed_7/synth-gen") == nullptr);
  CHECK(report.class_table == pair.source_train.class_table);
}

TEST_CASE("identical configs give byte-identical reports and artifacts") {
  const auto a = scratch_dir("pipeline_det_a");
  const auto b = scratch_dir("pipeline_det_b");
  auto ca = tiny_config(a);
  auto cb = tiny_config(b);
  run_experiment(ca);
  {
    EnvGuard env("3");  // worker count must not matter
    run_experiment(cb);
  }
  CHECK(slurp(a / "report.json") == slurp(b / "report.json"));
  CHECK(slurp(a / "report.txt") == slurp(b / "report.txt"));
  auto ha = file_hashes(a), hb = file_hashes(b);
  CHECK(ha == hb);

  auto other = tiny_config(scratch_dir("pipeline_det_c"));
  other.seeds = {8};
  run_experiment(other);
  CHECK(slurp(a / "report.json") != slurp(other.output_dir / "report.json"));
}

TEST_CASE("resume reuses artifacts byte-identically") {
  const auto out = scratch_dir("pipeline_resume");
  auto c = tiny_config(out);
  const auto first = run_experiment(c);
  const auto report = slurp(out / "report.json");
  const auto before = file_hashes(out);
  for (const auto& s : first.stages) CHECK_FALSE(s.reused);

  fs::remove(out / "report.json");
  fs::remove(out / "report.txt");
  c.resume = true;
  std::vector<std::string> log;
  const auto second = run_experiment(c, [&](std::string_view s) { log.emplace_back(s); });
  for (const auto& s : second.stages) CHECK(s.reused);
  for (const auto& line : log) CHECK(line.ends_with(": reused"));
  CHECK(slurp(out / "report.json") == report);
  CHECK(file_hashes(out) == before);

  SUBCASE("a damaged artifact reruns only its stage, reproducing it") {
    const auto ckpt = out / "seed_7/detectors/OURS-A/model/detector.ckpt";
    { std::ofstream(ckpt, std::ios::app) << 'x'; }
    const auto third = run_experiment(c);
    for (const auto& s : third.stages) {
      CAPTURE(s.name);
      CHECK(s.reused == (s.name != "seed_7/train-detector:OURS-A"));
    }
    CHECK(file_hashes(out) == before);
  }
  SUBCASE("a removed stage marker reruns the stage") {
    fs::remove(out / "seed_7/fake_cyclegan/stage.json");
    const auto third = run_experiment(c);
    CHECK_FALSE(stage(third, "seed_7/translate-cyclegan")->reused);
    CHECK(stage(third, "seed_7/train-detector:OURS-C")->reused);
    CHECK(file_hashes(out) == before);
  }
  SUBCASE("a different config refuses to resume") {
    auto changed = c;
    changed.detector.iterations = 31;
    CHECK_THROWS_AS(run_experiment(changed), StageError);
  }
  SUBCASE("without resume everything is recomputed to the same bytes") {
    c.resume = false;
    const auto again = run_experiment(c);
    for (const auto& s : again.stages) CHECK_FALSE(s.reused);
    CHECK(file_hashes(out) == before);
  }
}
