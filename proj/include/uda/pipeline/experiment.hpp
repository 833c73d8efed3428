#pragma once

// Experiment runner: translator training, fake-target generation, detector
// training per training setting plus the two bounds, evaluation and a
// report. Every stage writes its artifacts under <out>/seed_<s>/ and a
// stage.json marker last, so an interrupted run can resume.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "uda/adain/style_transfer.hpp"
#include "uda/cyclegan/cyclegan.hpp"
#include "uda/data/dataset.hpp"
#include "uda/detector/grid_detector.hpp"
#include "uda/eval/detection_eval.hpp"
#include "uda/synth/synthbench.hpp"

namespace uda::pipeline {

enum class TranslatorChoice { cyclegan, adain, both };

std::string_view to_string(TranslatorChoice choice);
TranslatorChoice parse_translator_choice(std::string_view text);

struct DatasetPaths {
  std::filesystem::path source_train, source_test, target_train, target_test;
};

// Experiment defaults: CycleGAN 5 + 5 epochs at lr 7e-4, detector 1000
// iterations with decay from 700.
cyclegan::CycleTrainConfig default_cyclegan_config();
detector::DetectorTrainConfig default_detector_config();

struct ExperimentConfig {
  // Exactly one of these. With `synth`, each seed generates its own domain
  // pair and the scene seed is replaced by the experiment seed.
  std::optional<synth::SynthConfig> synth;
  std::optional<DatasetPaths> datasets;

  TranslatorChoice translators = TranslatorChoice::both;
  // Rows besides the bounds. A plain "S" row is the source-only bound and
  // is not repeated.
  std::vector<data::TrainingSetting> settings{{false, true, false}, {false, false, true}, {false, true, true}};
  eval::VocVersion metric = eval::VocVersion::voc12;
  double iou_threshold = 0.5;
  std::vector<std::uint64_t> seeds{7};
  std::filesystem::path output_dir = "experiment";
  bool resume = false;
  // Also evaluate on source_test + target_test.
  bool evaluate_source_plus_target = false;

  // Training seeds in these are overwritten by the experiment seed.
  cyclegan::CycleTrainConfig cyclegan = default_cyclegan_config();
  adain::StyleTrainConfig adain;
  double adain_alpha = 1.0;
  detector::DetectorTrainConfig detector = default_detector_config();
};

enum class ConfigScope {
  experiment,  // everything must be present and consistent
  sections,    // only the training sections are checked (stage commands)
};

// Throws std::invalid_argument: no or both data sources, empty or duplicate
// settings, a setting needing a translator that is not selected, no seeds,
// iou outside (0, 1], alpha outside [0, 1], a missing dataset directory, or
// an invalid sub-config. With ConfigScope::sections only the sub-configs
// are checked.
void validate(const ExperimentConfig& config, ConfigScope scope = ConfigScope::experiment);

// JSON layout:
//   {"synth": {...} | "datasets": {"source_train", "source_test",
//    "target_train", "target_test"},
//    "translators": "cyclegan" | "adain" | "both",
//    "settings": ["OURS-C", ...], "metric": "voc12", "iou": 0.5,
//    "seeds": [7, ...], "output_dir": "...", "resume": false,
//    "evaluate_source_plus_target": false,
//    "cyclegan": {"epochs_fixed", "epochs_decay", "steps_per_epoch",
//                 "batch_size", "base_lr", "cycle_weight",
//                 "adversarial_weight", "crop_size", "flip_probability"},
//    "adain": {"iterations", "batch_size", "crop_size", "style_loss_weight",
//              "base_lr", "layer_taps", "alpha"},
//    "detector": {"iterations", "batch_size", "base_lr", "decay_start",
//                 "flip_probability", "score_threshold", "nms_iou", "width",
//                 "anchors": [[scale, aspect], ...],
//                 "loss_weights": {"objectness", "no_object",
//                                  "classification", "box"}}}
// Missing keys keep defaults, unknown keys are rejected. Relative paths
// are resolved against `base_dir`. The result is validated in `scope`.
ExperimentConfig parse_experiment_config(const std::string& json_text, const std::filesystem::path& base_dir = {},
                                         ConfigScope scope = ConfigScope::experiment);
ExperimentConfig load_experiment_config(const std::filesystem::path& file,
                                        ConfigScope scope = ConfigScope::experiment);
// Canonical form: every field, fixed key order.
std::string to_json(const ExperimentConfig& config);

// Hex SHA-256 of the canonical config without output_dir and resume.
std::string config_hash(const ExperimentConfig& config);

// A failed stage. `completed()` lists the directories of stages that
// finished (relative to the output directory) and can be resumed from.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, std::vector<std::string> completed, const std::string& message);
  const std::string& stage() const noexcept { return stage_; }
  const std::vector<std::string>& completed() const noexcept { return completed_; }
  // {"stage", "message", "completed_artifacts": [...]}
  std::string to_json() const;

 private:
  std::string stage_;
  std::vector<std::string> completed_;
};

enum class RowRole { lower_bound, setting, upper_bound };
std::string_view to_string(RowRole role);

struct RowResult {
  std::string name;  // "source-only", "OURS-C", ..., "target-only"
  RowRole role = RowRole::setting;
  std::vector<eval::EvalResult> target;              // one per seed
  std::vector<eval::EvalResult> source_plus_target;  // empty unless requested
};

struct StageRecord {
  std::string name;  // e.g. "seed_7/train-detector:OURS-C"
  std::string dir;   // relative to the output directory
  std::string digest;
  std::size_t target_annotations_read = 0;
  bool reused = false;
};

struct ExperimentReport {
  std::vector<std::string> class_table;
  std::vector<std::uint64_t> seeds;
  eval::VocVersion metric = eval::VocVersion::voc12;
  double iou_threshold = 0.5;
  std::vector<RowResult> rows;  // source-only, settings in config order, target-only
  std::string config_hash;
  std::vector<StageRecord> stages;  // execution order

  const RowResult* row(std::string_view name) const;
};

// Deterministic: no timestamps or absolute paths, so identical configs give
// byte-identical output.
std::string report_json(const ExperimentReport& report);
std::string report_text(const ExperimentReport& report);

using ProgressFn = std::function<void(std::string_view)>;

// Runs every stage for every seed and writes <out>/report.json and
// <out>/report.txt. Without `resume` every stage is recomputed; with it a
// stage whose marker and artifact hashes check out is reused, and a marker
// written under a different config hash is an error.
// Target annotations are only read by target-only training and by
// evaluation; any other stage that reads one fails.
// Throws StageError wrapping the underlying failure.
ExperimentReport run_experiment(const ExperimentConfig& config, const ProgressFn& progress = {});

// --- building blocks shared with the command line --------------------------

// Worker count for per-image loops: UDA_THREADS if set (positive integer,
// otherwise std::invalid_argument), else the hardware concurrency.
std::size_t thread_count();

// Translates every source record with the generator, keeping annotations.
data::DomainDataset translate_with_cyclegan(const cyclegan::CycleGanModel<float>& model,
                                            const data::DomainDataset& source, std::size_t threads);

// Stylizes every source record with a style image drawn uniformly from
// `styles` by Rng(seed), one draw per record in record order.
data::DomainDataset translate_with_adain(const adain::StyleTransferModel<float>& model,
                                         const data::DomainDataset& source, std::span<const Image> styles,
                                         double alpha, std::uint64_t seed, std::size_t threads);

// detect() on every record, concatenated in record order.
std::vector<eval::Detection> detect_dataset(const detector::GridDetector<float>& model,
                                            const data::DomainDataset& dataset, double score_threshold,
                                            double nms_iou, std::size_t threads);

std::vector<Image> images_of(const data::DomainDataset& dataset);

// Hex SHA-256.
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_file(const std::filesystem::path& file);

}  // namespace uda::pipeline
