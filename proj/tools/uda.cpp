// uda: stage commands and the experiment runner.
//
//   uda synth-gen       --out DIR [--config F] [--seed N]
//   uda train-cyclegan  --source DIR --target DIR --out DIR [--config F] [--seed N]
//   uda train-adain     --source DIR --target DIR --out DIR [--config F] [--seed N]
//   uda translate       --translator cyclegan|adain --model DIR --source DIR --out DIR
//                       [--style DIR] [--alpha A] [--seed N] [--config F]
//   uda assemble        --setting S+C+A --out DIR [--source DIR] [--cyclegan DIR] [--adain DIR]
//   uda train-detector  --data DIR --out DIR [--config F] [--seed N]
//   uda evaluate        --data DIR (--detections FILE | --model DIR) [--metric M] [--iou T]
//                       [--out FILE] [--save-detections FILE] [--config F]
//   uda run             --config F [--out DIR] [--seed N] [--metric M] [--iou T] [--resume]
//
// Failures print one JSON object to stderr and exit with status 1.

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "uda/data/dataset_io.hpp"
#include "uda/pipeline/experiment.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace uda;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

pipeline::ExperimentConfig sections(const Common& c) {
  if (c.config.empty()) return {};
  return pipeline::load_experiment_config(c.config, pipeline::ConfigScope::sections);
}

std::uint64_t seed_or(const Common& c, std::uint64_t fallback) { return c.seed.value_or(fallback); }

void write_json_file(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << j.dump(1) << '\n';
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

int fail(const json& error) {
  std::cerr << json{{"error", error}}.dump() << std::endl;
  return 1;
}

void progress(std::string_view line) { std::cerr << json{{"progress", line}}.dump() << std::endl; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unsupervised domain adaptation for detection: translators, fake-target data, detectors"};
  app.require_subcommand(1);

  Common common;
  const auto add_config = [&](CLI::App* cmd) {
    cmd->add_option("--config", common.config, "experiment config JSON")->check(CLI::ExistingFile);
  };
  const auto add_seed = [&](CLI::App* cmd) { cmd->add_option("--seed", common.seed, "random seed"); };

  // synth-gen
  auto* synth_cmd = app.add_subcommand("synth-gen", "generate a source/target synthetic domain pair");
  add_config(synth_cmd);
  add_seed(synth_cmd);
  synth_cmd->add_option("--out", common.out, "output directory")->required();

  // train-cyclegan / train-adain
  std::string source_dir, target_dir;
  auto* cg_cmd = app.add_subcommand("train-cyclegan", "train the CycleGAN translator on unpaired images");
  auto* ad_cmd = app.add_subcommand("train-adain", "train the AdaIN style transfer decoder on unpaired images");
  for (auto* cmd : {cg_cmd, ad_cmd}) {
    add_config(cmd);
    add_seed(cmd);
    cmd->add_option("--source", source_dir, "source dataset")->required()->check(CLI::ExistingDirectory);
    cmd->add_option("--target", target_dir, "target dataset (images only are read)")
        ->required()
        ->check(CLI::ExistingDirectory);
    cmd->add_option("--out", common.out, "model directory")->required();
  }

  // translate
  std::string translator, model_dir, style_dir;
  std::optional<double> alpha;
  auto* tr_cmd = app.add_subcommand("translate", "make a fake-target dataset from a source dataset");
  add_config(tr_cmd);
  add_seed(tr_cmd);
  tr_cmd->add_option("--translator", translator, "cyclegan or adain")
      ->required()
      ->check(CLI::IsMember({"cyclegan", "adain"}));
  tr_cmd->add_option("--model", model_dir, "trained translator directory")->required()->check(CLI::ExistingDirectory);
  tr_cmd->add_option("--source", source_dir, "annotated source dataset")->required()->check(CLI::ExistingDirectory);
  tr_cmd->add_option("--style", style_dir, "target dataset providing style images (adain)")
      ->check(CLI::ExistingDirectory);
  tr_cmd->add_option("--alpha", alpha, "adain style weight in [0, 1]");
  tr_cmd->add_option("--out", common.out, "output dataset directory")->required();

  // assemble
  std::string setting, cyclegan_dir, adain_dir;
  auto* as_cmd = app.add_subcommand("assemble", "merge source and fake datasets for a training setting");
  as_cmd->add_option("--setting", setting, "e.g. S+C+A or OURS-C")->required();
  as_cmd->add_option("--source", source_dir, "source dataset")->check(CLI::ExistingDirectory);
  as_cmd->add_option("--cyclegan", cyclegan_dir, "CycleGAN fake dataset")->check(CLI::ExistingDirectory);
  as_cmd->add_option("--adain", adain_dir, "AdaIN fake dataset")->check(CLI::ExistingDirectory);
  as_cmd->add_option("--out", common.out, "output dataset directory")->required();

  // train-detector
  std::string data_dir;
  auto* td_cmd = app.add_subcommand("train-detector", "train the grid detector on an annotated dataset");
  add_config(td_cmd);
  add_seed(td_cmd);
  td_cmd->add_option("--data", data_dir, "training dataset")->required()->check(CLI::ExistingDirectory);
  td_cmd->add_option("--out", common.out, "model directory")->required();

  // evaluate
  std::string detections_file, save_detections, metric_text;
  std::optional<double> iou;
  auto* ev_cmd = app.add_subcommand("evaluate", "VOC average precision of detections against a dataset");
  add_config(ev_cmd);
  ev_cmd->add_option("--data", data_dir, "annotated test dataset")->required()->check(CLI::ExistingDirectory);
  auto* det_opt = ev_cmd->add_option("--detections", detections_file, "detections, JSON lines")
                      ->check(CLI::ExistingFile);
  auto* model_opt = ev_cmd->add_option("--model", model_dir, "detector directory to run")
                        ->check(CLI::ExistingDirectory);
  det_opt->excludes(model_opt);
  ev_cmd->add_option("--metric", metric_text, "voc07 or voc12")->check(CLI::IsMember({"voc07", "voc12", "2007", "2012"}));
  ev_cmd->add_option("--iou", iou, "match threshold");
  ev_cmd->add_option("--out", common.out, "write the JSON report here");
  ev_cmd->add_option("--save-detections", save_detections, "with --model, also write the detections");

  // run
  bool resume = false;
  auto* run_cmd = app.add_subcommand("run", "run the full experiment and write report.json / report.txt");
  run_cmd->add_option("--config", common.config, "experiment config JSON")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--out", common.out, "output directory (overrides the config)");
  run_cmd->add_option("--seed", common.seed, "run this single seed instead of the config's list");
  run_cmd->add_option("--metric", metric_text, "voc07 or voc12")->check(CLI::IsMember({"voc07", "voc12", "2007", "2012"}));
  run_cmd->add_option("--iou", iou, "match threshold");
  run_cmd->add_flag("--resume", resume, "reuse finished stages");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail({{"type", "usage"}, {"message", e.what()}});
  }

  try {
    if (synth_cmd->parsed()) {
      auto cfg = sections(common);
      synth::SynthConfig sc = cfg.synth.value_or(synth::SynthConfig{});
      sc.scene.seed = seed_or(common, sc.scene.seed);
      const auto pair = synth::generate_domain_pair(sc.scene, sc.shift, sc.n_train, sc.n_test);
      const fs::path out = common.out;
      data::save_dataset(pair.source_train, out / "source_train");
      data::save_dataset(pair.source_test, out / "source_test");
      data::save_dataset(pair.target_train, out / "target_train");
      data::save_dataset(pair.target_test, out / "target_test");
    } else if (cg_cmd->parsed() || ad_cmd->parsed()) {
      const auto cfg = sections(common);
      const auto src = pipeline::images_of(data::load_dataset(source_dir, data::LoadParts::images_only));
      const auto tgt = pipeline::images_of(data::load_dataset(target_dir, data::LoadParts::images_only));
      if (cg_cmd->parsed()) {
        auto tc = cfg.cyclegan;
        tc.seed = seed_or(common, tc.seed);
        cyclegan::save_cyclegan(cyclegan::train_cyclegan(src, tgt, tc).model, common.out);
      } else {
        auto tc = cfg.adain;
        tc.seed = seed_or(common, tc.seed);
        adain::save_style_model(adain::train_style_transfer(src, tgt, tc).model, common.out);
      }
    } else if (tr_cmd->parsed()) {
      const auto cfg = sections(common);
      const auto source = data::load_dataset(source_dir);
      const std::size_t threads = pipeline::thread_count();
      data::DomainDataset fake;
      if (translator == "cyclegan") {
        fake = pipeline::translate_with_cyclegan(cyclegan::load_cyclegan(model_dir), source, threads);
      } else {
        if (style_dir.empty()) throw std::invalid_argument("translate --translator adain needs --style");
        const auto styles = pipeline::images_of(data::load_dataset(style_dir, data::LoadParts::images_only));
        fake = pipeline::translate_with_adain(adain::load_style_model(model_dir), source, styles,
                                              alpha.value_or(cfg.adain_alpha), seed_or(common, 7), threads);
      }
      data::save_dataset(fake, common.out);
    } else if (as_cmd->parsed()) {
      const auto s = data::parse_setting(setting);
      const auto load_if = [](bool wanted, const std::string& dir, const char* flag) {
        if (!wanted) return data::DomainDataset{};
        if (dir.empty()) throw std::invalid_argument(std::string("setting needs ") + flag);
        return data::load_dataset(dir);
      };
      const auto src = load_if(s.use_source, source_dir, "--source");
      const auto fc = load_if(s.use_cyclegan_fake, cyclegan_dir, "--cyclegan");
      const auto fa = load_if(s.use_adain_fake, adain_dir, "--adain");
      data::save_dataset(data::assemble_setting(s, src, fc, fa), common.out);
    } else if (td_cmd->parsed()) {
      auto tc = sections(common).detector;
      tc.seed = seed_or(common, tc.seed);
      const auto result = detector::train_detector(data::load_dataset(data_dir), tc);
      detector::save_detector(result.model, common.out);
      write_json_file(fs::path(common.out) / "loss.json", result.loss_history);
    } else if (ev_cmd->parsed()) {
      const auto cfg = sections(common);
      const auto truth = data::load_dataset(data_dir);
      std::vector<eval::Detection> dets;
      if (!detections_file.empty()) {
        std::ifstream in(detections_file, std::ios::binary);
        dets = eval::read_detections_jsonl(in, truth.class_table);
      } else if (!model_dir.empty()) {
        dets = pipeline::detect_dataset(detector::load_detector(model_dir), truth, cfg.detector.score_threshold,
                                        cfg.detector.nms_iou, pipeline::thread_count());
        if (!save_detections.empty()) {
          std::ofstream out(save_detections, std::ios::binary);
          eval::write_detections_jsonl(out, dets, truth.class_table);
          if (!out) throw std::runtime_error("cannot write " + save_detections);
        }
      } else {
        throw std::invalid_argument("evaluate needs --detections or --model");
      }
      const auto metric = metric_text.empty() ? cfg.metric : eval::parse_voc_version(metric_text);
      const auto result = eval::mean_ap(dets, eval::ground_truths_of(truth), metric, iou.value_or(cfg.iou_threshold));
      std::cout << eval::format_table(result, truth.class_table);
      if (!common.out.empty()) {
        std::ofstream out(common.out, std::ios::binary);
        out << eval::to_json(result, truth.class_table) << '\n';
        if (!out) throw std::runtime_error("cannot write " + common.out);
      }
    } else if (run_cmd->parsed()) {
      auto cfg = pipeline::load_experiment_config(common.config);
      if (!common.out.empty()) cfg.output_dir = common.out;
      if (common.seed) cfg.seeds = {*common.seed};
      if (!metric_text.empty()) cfg.metric = eval::parse_voc_version(metric_text);
      if (iou) cfg.iou_threshold = *iou;
      if (resume) cfg.resume = true;
      const auto report = pipeline::run_experiment(cfg, progress);
      std::cout << pipeline::report_text(report);
    }
  } catch (const pipeline::StageError& e) {
    return fail(json::parse(e.to_json()));
  } catch (const data::DatasetError& e) {
    return fail({{"type", "dataset"}, {"context", e.context()}, {"message", e.message()}});
  } catch (const TrainingDiverged& e) {
    return fail({{"type", "diverged"}, {"step", e.step()}, {"message", e.what()}});
  } catch (const std::invalid_argument& e) {
    return fail({{"type", "invalid_argument"}, {"message", e.what()}});
  } catch (const std::exception& e) {
    return fail({{"type", "error"}, {"message", e.what()}});
  }
  return 0;
}
