#include "uda/pipeline/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "uda/data/dataset_io.hpp"

namespace uda::pipeline {
namespace {

using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;

template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> workers;
  for (std::size_t t = 0; t < threads; ++t)
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& w : workers) w.join();
  if (error) std::rethrow_exception(error);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Regular files under `dir` by generic relative path, sorted.
std::vector<std::string> list_files(const fs::path& dir) {
  std::vector<std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), dir).generic_string());
  std::sort(files.begin(), files.end());
  return files;
}

std::string digest_of(const ojson& artifacts) {
  std::string joined;
  for (const auto& [name, hash] : artifacts.items()) joined += name + '\t' + hash.get<std::string>() + '\n';
  return sha256_hex({reinterpret_cast<const std::uint8_t*>(joined.data()), joined.size()});
}

ojson hash_tree(const fs::path& dir, std::string_view skip = {}) {
  ojson artifacts = ojson::object();
  for (const auto& f : list_files(dir))
    if (f != skip) artifacts[f] = sha256_file(dir / f);
  return artifacts;
}

class StageRunner {
 public:
  StageRunner(fs::path out, std::string hash, bool resume, const ProgressFn& progress)
      : out_(std::move(out)), hash_(std::move(hash)), resume_(resume), progress_(progress) {}

  // An input that is not produced by a stage, fingerprinted by `digest`.
  void add_input(const std::string& name, std::string digest) {
    records_.push_back({name, "", std::move(digest), 0, true});
  }

  // Runs `body(dir)` in a fresh <out>/<rel_dir> unless a valid marker allows
  // reuse: same config, untouched artifacts, and the same digests for the
  // stages in `deps`. `may_read_target` permits deserializing target
  // annotations.
  template <typename Body>
  void run(const std::string& name, const std::string& rel_dir, const std::vector<std::string>& deps,
           bool may_read_target, Body&& body) {
    const fs::path dir = out_ / rel_dir;
    const fs::path marker = dir / "stage.json";
    const ojson inputs = input_digests(deps);
    if (resume_ && fs::exists(marker) && try_reuse(name, rel_dir, marker, inputs)) return;

    note(name + ": running");
    const std::size_t before = data::target_annotations_deserialized();
    try {
      fs::remove_all(dir);
      fs::create_directories(dir);
      body(dir);
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(name, completed_, e.what());
    }
    const std::size_t read = data::target_annotations_deserialized() - before;
    if (read > 0 && !may_read_target)
      throw StageError(name, completed_,
                       "read " + std::to_string(read) + " target annotations outside evaluation and target-only training");

    const ojson artifacts = hash_tree(dir, "stage.json");
    StageRecord rec{name, rel_dir, digest_of(artifacts), read, false};
    const ojson m = {{"stage", name},
                     {"config_hash", hash_},
                     {"target_annotations_read", read},
                     {"digest", rec.digest},
                     {"inputs", inputs},
                     {"artifacts", artifacts}};
    try {
      write_text(marker, m.dump(1) + '\n');
    } catch (const std::exception& e) {
      throw StageError(name, completed_, e.what());
    }
    finish(std::move(rec));
  }

  const std::vector<StageRecord>& records() const { return records_; }
  const std::vector<std::string>& completed() const { return completed_; }

 private:
  ojson input_digests(const std::vector<std::string>& deps) const {
    ojson inputs = ojson::object();
    for (const auto& d : deps) {
      const auto it = std::find_if(records_.begin(), records_.end(), [&](const StageRecord& r) { return r.name == d; });
      if (it == records_.end()) throw std::logic_error("stage dependency " + d + " has not run");
      inputs[d] = it->digest;
    }
    return inputs;
  }

  bool try_reuse(const std::string& name, const std::string& rel_dir, const fs::path& marker, const ojson& inputs) {
    ojson m;
    try {
      m = ojson::parse(read_text(marker));
    } catch (const std::exception&) {
      return false;  // torn marker: redo the stage
    }
    const std::string their_hash = m.value("config_hash", "");
    if (their_hash != hash_)
      throw StageError(name, completed_,
                       "resume: " + marker.string() + " was written by config " + their_hash + ", current is " + hash_);
    const fs::path dir = out_ / rel_dir;
    try {
      if (m.at("inputs") != inputs || hash_tree(dir, "stage.json") != m.at("artifacts")) return false;
      StageRecord rec{name, rel_dir, m.at("digest").get<std::string>(),
                      m.at("target_annotations_read").get<std::size_t>(), true};
      note(name + ": reused");
      finish(std::move(rec));
      return true;
    } catch (const std::exception&) {
      return false;
    }
  }

  void finish(StageRecord rec) {
    completed_.push_back(rec.dir);
    records_.push_back(std::move(rec));
  }

  void note(const std::string& text) const {
    if (progress_) progress_(text);
  }

  fs::path out_;
  std::string hash_;
  bool resume_;
  const ProgressFn& progress_;
  std::vector<StageRecord> records_;
  std::vector<std::string> completed_;
};

struct Row {
  std::string name;
  RowRole role;
  data::TrainingSetting setting;  // unused for the target-only row
};

std::vector<Row> rows_of(const ExperimentConfig& c) {
  std::vector<Row> rows{{"source-only", RowRole::lower_bound, {true, false, false}}};
  for (const auto& s : c.settings)
    if (s != data::TrainingSetting{true, false, false}) rows.push_back({s.name(), RowRole::setting, s});
  rows.push_back({"target-only", RowRole::upper_bound, {}});
  return rows;
}

ojson eval_json(const eval::EvalResult& r, std::span<const std::string> classes) {
  ojson per_class = ojson::object();
  for (const auto& cr : r.classes) per_class[classes[static_cast<std::size_t>(cr.class_id)]] = cr.ap;
  return {{"map", r.map_value}, {"per_class", per_class}};
}

// Per class mean over the seeds where the class had ground truth.
ojson mean_json(const std::vector<eval::EvalResult>& results, std::span<const std::string> classes) {
  ojson per_class = ojson::object();
  for (std::size_t k = 0; k < classes.size(); ++k) {
    double sum = 0;
    std::size_t n = 0;
    for (const auto& r : results)
      if (auto ap = r.ap(static_cast<int>(k))) {
        sum += *ap;
        ++n;
      }
    if (n > 0) per_class[classes[k]] = sum / static_cast<double>(n);
  }
  double map_sum = 0;
  for (const auto& r : results) map_sum += r.map_value;
  return {{"map", results.empty() ? 0.0 : map_sum / static_cast<double>(results.size())}, {"per_class", per_class}};
}

std::string seed_dir(std::uint64_t seed) { return "seed_" + std::to_string(seed); }

eval::EvalResult evaluate_file(const fs::path& jsonl, const data::DomainDataset& truth, const ExperimentConfig& c) {
  std::ifstream in(jsonl, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + jsonl.string());
  const auto dets = eval::read_detections_jsonl(in, truth.class_table);
  const auto gts = eval::ground_truths_of(truth);
  return eval::mean_ap(dets, gts, c.metric, c.iou_threshold);
}

void write_detections(const fs::path& path, const std::vector<eval::Detection>& dets,
                      std::span<const std::string> classes) {
  std::ofstream out(path, std::ios::binary);
  eval::write_detections_jsonl(out, dets, classes);
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace

StageError::StageError(std::string stage, std::vector<std::string> completed, const std::string& message)
    : std::runtime_error(stage + ": " + message), stage_(std::move(stage)), completed_(std::move(completed)) {}

std::string StageError::to_json() const {
  const std::string full = what();
  const ojson j = {{"stage", stage_}, {"message", full.substr(stage_.size() + 2)}, {"completed_artifacts", completed_}};
  return j.dump();
}

std::string_view to_string(RowRole role) {
  switch (role) {
    case RowRole::lower_bound: return "lower_bound";
    case RowRole::setting: return "setting";
    case RowRole::upper_bound: return "upper_bound";
  }
  return "setting";
}

const RowResult* ExperimentReport::row(std::string_view name) const {
  for (const auto& r : rows)
    if (r.name == name) return &r;
  return nullptr;
}

std::size_t thread_count() {
  if (const char* env = std::getenv("UDA_THREADS")) {
    const std::string_view text(env);
    std::size_t n = 0;
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), n);
    if (ec != std::errc{} || end != text.data() + text.size() || n == 0)
      throw std::invalid_argument("UDA_THREADS must be a positive integer, got '" + std::string(text) + "'");
    return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<Image> images_of(const data::DomainDataset& dataset) {
  std::vector<Image> out;
  out.reserve(dataset.size());
  for (const auto& r : dataset.records) out.push_back(r.image);
  return out;
}

namespace {

data::DomainDataset fake_shell(const data::DomainDataset& source, std::string_view suffix) {
  if (!source.annotations_loaded) throw std::invalid_argument("translation needs the source annotations loaded");
  data::DomainDataset out;
  out.domain_name = source.domain_name + std::string(suffix);
  out.class_table = source.class_table;
  out.records.resize(source.size());
  return out;
}

}  // namespace

data::DomainDataset translate_with_cyclegan(const cyclegan::CycleGanModel<float>& model,
                                            const data::DomainDataset& source, std::size_t threads) {
  auto out = fake_shell(source, "_cyclegan");
  parallel_for(source.size(), threads, [&](std::size_t i) {
    const auto& rec = source.records[i];
    out.records[i] = data::inherit_annotations(rec, cyclegan::translate(model, rec.image),
                                               data::DomainTag::fake_target_cyclegan);
  });
  return out;
}

data::DomainDataset translate_with_adain(const adain::StyleTransferModel<float>& model,
                                         const data::DomainDataset& source, std::span<const Image> styles,
                                         double alpha, std::uint64_t seed, std::size_t threads) {
  if (styles.empty()) throw std::invalid_argument("translate_with_adain: no style images");
  auto out = fake_shell(source, "_adain");
  Rng rng(seed);
  std::vector<std::size_t> pick(source.size());
  for (auto& p : pick) p = rng.below(styles.size());
  parallel_for(source.size(), threads, [&](std::size_t i) {
    const auto& rec = source.records[i];
    out.records[i] = data::inherit_annotations(rec, adain::stylize(model, rec.image, styles[pick[i]], alpha),
                                               data::DomainTag::fake_target_adain);
  });
  return out;
}

std::vector<eval::Detection> detect_dataset(const detector::GridDetector<float>& model,
                                            const data::DomainDataset& dataset, double score_threshold,
                                            double nms_iou, std::size_t threads) {
  std::vector<std::vector<eval::Detection>> per_image(dataset.size());
  parallel_for(dataset.size(), threads, [&](std::size_t i) {
    const auto& rec = dataset.records[i];
    per_image[i] = detector::detect(model, rec.image, score_threshold, nms_iou, rec.image_id);
  });
  std::vector<eval::Detection> all;
  for (auto& v : per_image) all.insert(all.end(), v.begin(), v.end());
  return all;
}

ExperimentReport run_experiment(const ExperimentConfig& config, const ProgressFn& progress) {
  validate(config);
  const fs::path out = config.output_dir;
  const std::size_t threads = thread_count();
  const std::string hash = config_hash(config);
  fs::create_directories(out);
  StageRunner stages(out, hash, config.resume, progress);

  const bool use_c = config.translators != TranslatorChoice::adain;
  const bool use_a = config.translators != TranslatorChoice::cyclegan;
  const auto rows = rows_of(config);

  ExperimentReport report;
  report.seeds = config.seeds;
  report.metric = config.metric;
  report.iou_threshold = config.iou_threshold;
  report.config_hash = hash;
  for (const auto& r : rows) {
    report.rows.push_back({r.name, r.role, {}, {}});
  }

  std::vector<std::string> data_deps;
  if (config.datasets) {
    // User-supplied inputs are fingerprinted too, images and manifest alike.
    const std::pair<const char*, const fs::path*> inputs[] = {{"source_train", &config.datasets->source_train},
                                                              {"source_test", &config.datasets->source_test},
                                                              {"target_train", &config.datasets->target_train},
                                                              {"target_test", &config.datasets->target_test}};
    for (const auto& [name, dir] : inputs) {
      try {
        stages.add_input(std::string("input:") + name, digest_of(hash_tree(*dir)));
      } catch (const std::exception& e) {
        throw StageError(std::string("input:") + name, {}, e.what());
      }
      data_deps.push_back(std::string("input:") + name);
    }
  }

  for (const std::uint64_t seed : config.seeds) {
    const std::string sd = seed_dir(seed);
    if (config.synth) data_deps = {sd + "/synth-gen"};
    const auto with_data = [&](std::vector<std::string> more) {
      more.insert(more.begin(), data_deps.begin(), data_deps.end());
      return more;
    };
    DatasetPaths paths;
    if (config.synth) {
      stages.run(sd + "/synth-gen", sd + "/data", {}, false, [&](const fs::path& dir) {
        auto sc = config.synth->scene;
        sc.seed = seed;
        const auto pair = synth::generate_domain_pair(sc, config.synth->shift, config.synth->n_train,
                                                      config.synth->n_test);
        data::save_dataset(pair.source_train, dir / "source_train");
        data::save_dataset(pair.source_test, dir / "source_test");
        data::save_dataset(pair.target_train, dir / "target_train");
        data::save_dataset(pair.target_test, dir / "target_test");
      });
      const fs::path d = out / sd / "data";
      paths = {d / "source_train", d / "source_test", d / "target_train", d / "target_test"};
    } else {
      paths = *config.datasets;
    }
    const auto images_only = [](const fs::path& p) { return data::load_dataset(p, data::LoadParts::images_only); };

    if (use_c) {
      stages.run(sd + "/train-cyclegan", sd + "/cyclegan", with_data({}), false, [&](const fs::path& dir) {
        const auto src = images_of(images_only(paths.source_train));
        const auto tgt = images_of(images_only(paths.target_train));
        auto cfg = config.cyclegan;
        cfg.seed = seed;
        const auto result = cyclegan::train_cyclegan(src, tgt, cfg);
        cyclegan::save_cyclegan(result.model, dir);
        ojson hist = ojson::array();
        for (const auto& h : result.history)
          hist.push_back({{"epoch", h.epoch},
                          {"learning_rate", h.learning_rate},
                          {"generator_adversarial", h.generator_adversarial},
                          {"cycle", h.cycle},
                          {"discriminator", h.discriminator},
                          {"disc_t_real", h.disc_t_real},
                          {"disc_t_fake", h.disc_t_fake}});
        write_text(dir / "history.json", hist.dump(1) + '\n');
      });
      stages.run(sd + "/translate-cyclegan", sd + "/fake_cyclegan", with_data({sd + "/train-cyclegan"}), false, [&](const fs::path& dir) {
        const auto model = cyclegan::load_cyclegan(out / sd / "cyclegan");
        data::save_dataset(translate_with_cyclegan(model, data::load_dataset(paths.source_train), threads), dir);
      });
    }
    if (use_a) {
      stages.run(sd + "/train-adain", sd + "/adain", with_data({}), false, [&](const fs::path& dir) {
        const auto src = images_of(images_only(paths.source_train));
        const auto tgt = images_of(images_only(paths.target_train));
        auto cfg = config.adain;
        cfg.seed = seed;
        const auto result = adain::train_style_transfer(src, tgt, cfg);
        adain::save_style_model(result.model, dir);
        ojson hist = ojson::array();
        for (const auto& h : result.history)
          hist.push_back({{"iteration", h.iteration},
                          {"content", h.losses.content},
                          {"style", h.losses.style},
                          {"total", h.losses.total}});
        write_text(dir / "history.json", hist.dump(1) + '\n');
      });
      stages.run(sd + "/translate-adain", sd + "/fake_adain", with_data({sd + "/train-adain"}), false, [&](const fs::path& dir) {
        const auto model = adain::load_style_model(out / sd / "adain");
        const auto styles = images_of(images_only(paths.target_train));
        data::save_dataset(translate_with_adain(model, data::load_dataset(paths.source_train), styles,
                                                config.adain_alpha, seed, threads),
                           dir);
      });
    }

    for (std::size_t ri = 0; ri < rows.size(); ++ri) {
      const auto& row = rows[ri];
      const std::string row_dir = sd + "/detectors/" + row.name;
      const bool upper = row.role == RowRole::upper_bound;
      std::vector<std::string> train_deps;
      if (row.setting.use_cyclegan_fake) train_deps.push_back(sd + "/translate-cyclegan");
      if (row.setting.use_adain_fake) train_deps.push_back(sd + "/translate-adain");
      stages.run(sd + "/train-detector:" + row.name, row_dir + "/model", with_data(train_deps), upper,
                 [&](const fs::path& dir) {
        data::DomainDataset train;
        if (upper) {
          train = data::load_dataset(paths.target_train);
        } else {
          const auto& s = row.setting;
          data::DomainDataset src, fc, fa;
          if (s.use_source) src = data::load_dataset(paths.source_train);
          if (s.use_cyclegan_fake) fc = data::load_dataset(out / sd / "fake_cyclegan");
          if (s.use_adain_fake) fa = data::load_dataset(out / sd / "fake_adain");
          train = data::assemble_setting(s, src, fc, fa);
        }
        auto cfg = config.detector;
        cfg.seed = seed;
        const auto result = detector::train_detector(train, cfg);
        detector::save_detector(result.model, dir);
        ojson by_tag = ojson::object();
        for (const auto& r : train.records) {
          const std::string tag(data::to_string(r.domain_tag));
          by_tag[tag] = by_tag.value(tag, 0) + 1;
        }
        const ojson summary = {{"records", train.size()}, {"by_tag", by_tag}, {"loss", result.loss_history}};
        write_text(dir / "training.json", summary.dump(1) + '\n');
      });
      stages.run(sd + "/evaluate:" + row.name, row_dir + "/eval", with_data({sd + "/train-detector:" + row.name}), true,
                 [&](const fs::path& dir) {
        const auto model = detector::load_detector(out / row_dir / "model");
        const auto& d = config.detector;
        const auto target_test = data::load_dataset(paths.target_test);
        write_detections(dir / "target_test.jsonl",
                         detect_dataset(model, target_test, d.score_threshold, d.nms_iou, threads),
                         target_test.class_table);
        if (config.evaluate_source_plus_target) {
          const auto source_test = data::load_dataset(paths.source_test);
          const data::DomainDataset* parts[] = {&source_test, &target_test};
          const auto both = data::merge_datasets(parts, "source+target");
          write_detections(dir / "source_plus_target.jsonl",
                           detect_dataset(model, both, d.score_threshold, d.nms_iou, threads), both.class_table);
        }
      });
    }

    // Scores are recomputed from the stored detections, so a resumed run
    // reports exactly what a fresh one would.
    try {
      const auto target_test = data::load_dataset(paths.target_test);
      if (report.class_table.empty()) report.class_table = target_test.class_table;
      if (report.class_table != target_test.class_table)
        throw std::runtime_error("class tables differ between seeds");
      std::optional<data::DomainDataset> both;
      if (config.evaluate_source_plus_target) {
        const auto source_test = data::load_dataset(paths.source_test);
        const data::DomainDataset* parts[] = {&source_test, &target_test};
        both = data::merge_datasets(parts, "source+target");
      }
      for (std::size_t ri = 0; ri < rows.size(); ++ri) {
        const fs::path eval_dir = out / sd / "detectors" / rows[ri].name / "eval";
        report.rows[ri].target.push_back(evaluate_file(eval_dir / "target_test.jsonl", target_test, config));
        if (both)
          report.rows[ri].source_plus_target.push_back(
              evaluate_file(eval_dir / "source_plus_target.jsonl", *both, config));
      }
    } catch (const std::exception& e) {
      throw StageError(sd + "/report", stages.completed(), e.what());
    }
  }

  report.stages = stages.records();
  try {
    write_text(out / "report.json", report_json(report));
    write_text(out / "report.txt", report_text(report));
  } catch (const std::exception& e) {
    throw StageError("report", stages.completed(), e.what());
  }
  return report;
}

std::string report_json(const ExperimentReport& report) {
  const std::span<const std::string> classes(report.class_table);
  const auto block = [&](const std::vector<eval::EvalResult>& results) {
    ojson per_seed = ojson::array();
    for (std::size_t i = 0; i < results.size(); ++i) {
      ojson entry = {{"seed", report.seeds[i]}};
      entry.update(eval_json(results[i], classes));
      per_seed.push_back(entry);
    }
    return ojson{{"per_seed", per_seed}, {"mean", mean_json(results, classes)}};
  };
  ojson rows = ojson::array();
  for (const auto& r : report.rows) {
    ojson row = {{"setting", r.name}, {"role", std::string(to_string(r.role))}, {"target", block(r.target)}};
    if (!r.source_plus_target.empty()) row["source_plus_target"] = block(r.source_plus_target);
    rows.push_back(row);
  }
  ojson stages = ojson::array();
  for (const auto& s : report.stages)
    stages.push_back({{"stage", s.name},
                      {"dir", s.dir},
                      {"digest", s.digest},
                      {"target_annotations_read", s.target_annotations_read}});
  const ojson j = {{"metric", std::string(eval::to_string(report.metric))},
                   {"iou_threshold", report.iou_threshold},
                   {"seeds", report.seeds},
                   {"classes", report.class_table},
                   {"rows", rows},
                   {"provenance", {{"config_hash", report.config_hash}, {"seeds", report.seeds}, {"stages", stages}}}};
  return j.dump(2) + '\n';
}

namespace {

std::string table(const ExperimentReport& report, bool source_plus_target) {
  std::ostringstream out;
  char buf[64];
  out << "setting        bound ";
  for (const auto& c : report.class_table) {
    std::snprintf(buf, sizeof buf, " %9.9s", c.c_str());
    out << buf;
  }
  out << "       mAP";
  for (const auto s : report.seeds) {
    std::snprintf(buf, sizeof buf, " %9s", ("seed " + std::to_string(s)).c_str());
    out << buf;
  }
  out << '\n';
  for (const auto& r : report.rows) {
    const auto& results = source_plus_target ? r.source_plus_target : r.target;
    const ojson mean = mean_json(results, report.class_table);
    const char* bound = r.role == RowRole::lower_bound ? "lower" : r.role == RowRole::upper_bound ? "upper" : "";
    std::snprintf(buf, sizeof buf, "%-14s %-6s", r.name.c_str(), bound);
    out << buf;
    for (const auto& c : report.class_table) {
      if (mean["per_class"].contains(c))
        std::snprintf(buf, sizeof buf, " %9.1f", 100 * mean["per_class"][c].get<double>());
      else
        std::snprintf(buf, sizeof buf, " %9s", "-");
      out << buf;
    }
    std::snprintf(buf, sizeof buf, " %9.1f", 100 * mean["map"].get<double>());
    out << buf;
    for (const auto& e : results) {
      std::snprintf(buf, sizeof buf, " %9.1f", 100 * e.map_value);
      out << buf;
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace

std::string report_text(const ExperimentReport& report) {
  std::ostringstream out;
  out << "metric " << eval::to_string(report.metric) << ", IoU " << report.iou_threshold << ", seeds";
  for (const auto s : report.seeds) out << ' ' << s;
  out << "\nconfig sha256 " << report.config_hash << "\n\n";
  out << "target test, AP in percent (per-class and mAP columns are seed means)\n" << table(report, false);
  if (!report.rows.empty() && !report.rows.front().source_plus_target.empty())
    out << "\nsource test + target test\n" << table(report, true);
  return out.str();
}

}  // namespace uda::pipeline
