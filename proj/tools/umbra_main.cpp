// Command-line front end: dataset synthesis and validation, training,
// inference, and evaluation. Results go to stdout, diagnostics to stderr.
// Exit codes: 0 success, 1 domain failure (data, I/O, numerics, missing
// predictions), 2 usage errors (bad flags or configuration).

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "umbra/config.hpp"
#include "umbra/data/dataset.hpp"
#include "umbra/data/synth.hpp"
#include "umbra/eval/evaluate.hpp"
#include "umbra/infer/infer.hpp"
#include "umbra/net/model.hpp"
#include "umbra/train/trainer.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string device = "cpu";
  bool has_seed = false;
  std::int64_t seed = 0;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "JSON configuration file");
  cmd->add_option("--set", o.overrides, "override, e.g. --set train.epochs=3")
      ->take_all()
      ->expected(-1);
  cmd->add_option("--device", o.device, "compute device (only 'cpu' exists)");
  cmd->add_option("--seed", o.seed, "shorthand for --set train.seed=N")
      ->each([&o](const std::string&) { o.has_seed = true; });
}

umbra::Config resolve_config(const CommonOpts& o) {
  std::vector<std::string> overrides = o.overrides;
  if (o.has_seed) overrides.push_back("train.seed=" + std::to_string(o.seed));
  umbra::Config c = umbra::load_config(o.config_path, overrides);
  umbra::validate(c);
  if (o.device != "cpu")
    throw umbra::ConfigError("unknown device '" + o.device + "': only cpu is supported");
  return c;
}

void write_effective_config(const umbra::Config& c, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  std::ofstream f(out_dir / "config.json");
  if (!f) throw umbra::IoError("cannot write " + (out_dir / "config.json").string());
  f << umbra::to_json(c).dump(2) << '\n';
}

int run_synth(const std::string& out, int videos, int frames, int size, std::uint64_t seed,
              const std::string& split) {
  umbra::SynthSpec spec;
  spec.n_videos = videos;
  spec.frames_per_video = frames;
  spec.size = size;
  spec.seed = seed;
  spec.split = split;
  nlohmann::json summary = umbra::generate_synthetic(out, spec);
  std::cout << summary.dump(2) << '\n';
  return 0;
}

int run_validate(const CommonOpts& common, const std::string& root_flag,
                 const std::string& split, bool as_json) {
  umbra::Config c = resolve_config(common);
  std::string root = root_flag.empty() ? c.data.root : root_flag;
  if (root.empty()) throw umbra::ConfigError("no dataset root: pass --root or data.root");
  umbra::DatasetIndex index = umbra::index_dataset(root, split);
  umbra::ValidationReport report = umbra::validate_dataset(index);
  if (as_json)
    std::cout << umbra::report_to_json(report).dump(2) << '\n';
  else
    std::cout << umbra::report_to_text(report);
  return 0;
}

int run_train(const CommonOpts& common, const std::string& out, const std::string& resume) {
  umbra::Config c = resolve_config(common);
  if (c.data.root.empty()) throw umbra::ConfigError("training needs data.root");
  fs::path out_dir(out);
  write_effective_config(c, out_dir);

  umbra::DatasetIndex index = umbra::index_dataset(c.data.root, "train");
  umbra::Model model(c);
  umbra::Trainer trainer(model, index, &std::cerr);
  if (!resume.empty()) {
    trainer.restore(resume, &std::cerr);
    std::cerr << "resumed from " << resume << " at step " << trainer.current_step() << '\n';
  }

  std::ofstream csv(out_dir / "loss.csv",
                    trainer.current_step() > 0 ? std::ios::app : std::ios::trunc);
  if (!csv) throw umbra::IoError("cannot write " + (out_dir / "loss.csv").string());
  std::string ckpt = (out_dir / "model.ckpt").string();
  umbra::TrainResult result = trainer.run(&csv, ckpt);

  nlohmann::json summary;
  summary["steps"] = trainer.total_steps();
  summary["steps_per_epoch"] = trainer.steps_per_epoch_count();
  summary["initial_total"] = result.initial_total;
  summary["final_total"] = result.final_total;
  summary["checkpoint"] = ckpt;
  summary["loss_log"] = (out_dir / "loss.csv").string();
  std::cout << summary.dump(2) << '\n';
  return 0;
}

int run_infer(const CommonOpts& common, const std::string& checkpoint, const std::string& out,
              const std::string& split) {
  umbra::Config c = resolve_config(common);
  if (c.data.root.empty()) throw umbra::ConfigError("inference needs data.root");
  umbra::Model model(c);
  umbra::load_checkpoint(checkpoint, model.params(), nullptr, umbra::config_hash(c),
                         &std::cerr);
  umbra::DatasetIndex index = umbra::index_dataset(c.data.root, split);
  fs::path out_dir(out);
  write_effective_config(c, out_dir);
  umbra::InferReport report = umbra::infer_dataset(model, index, out, c.infer.window);

  nlohmann::json summary;
  summary["frames"] = report.frames.size();
  summary["failures"] = report.failures;
  summary["total_seconds"] = report.total_seconds;
  summary["manifest"] = (out_dir / "manifest.json").string();
  std::cout << summary.dump(2) << '\n';
  if (report.failures > 0) {
    std::cerr << report.failures << " frame(s) failed; see manifest\n";
    return 1;
  }
  return 0;
}

int run_eval(const CommonOpts& common, const std::string& pred, const std::string& split,
             const std::string& out) {
  umbra::Config c = resolve_config(common);
  if (c.data.root.empty()) throw umbra::ConfigError("evaluation needs data.root");
  umbra::DatasetIndex index = umbra::index_dataset(c.data.root, split);
  umbra::EvalReport report = umbra::evaluate_predictions(index, pred);

  std::cout << umbra::eval_report_to_text(report);
  if (!out.empty()) {
    fs::path out_dir(out);
    fs::create_directories(out_dir);
    std::ofstream jf(out_dir / "report.json");
    jf << umbra::eval_report_to_json(report).dump(2) << '\n';
    std::ofstream tf(out_dir / "report.txt");
    tf << umbra::eval_report_to_text(report);
    if (!jf || !tf) throw umbra::IoError("cannot write report under " + out);
  }
  if (!report.missing.empty()) {
    std::cerr << report.missing.size() << " prediction(s) missing\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"video shadow detection: train, infer, evaluate"};
  app.require_subcommand(1);

  CommonOpts synth_common;  // synth takes no config, kept for uniform shape
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset fixture");
  std::string synth_out, synth_split = "train";
  int synth_videos = 2, synth_frames = 8, synth_size = 64;
  std::uint64_t synth_seed = 1;
  synth->add_option("--out", synth_out, "dataset root to create")->required();
  synth->add_option("--videos", synth_videos, "number of videos");
  synth->add_option("--frames", synth_frames, "frames per video");
  synth->add_option("--size", synth_size, "square frame size in pixels");
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--split", synth_split, "split directory name");

  CommonOpts val_common;
  auto* val = app.add_subcommand("validate", "check dataset layout and statistics");
  std::string val_root, val_split = "train";
  bool val_json = false;
  add_common(val, val_common);
  val->add_option("--root", val_root, "dataset root (defaults to data.root)");
  val->add_option("--split", val_split, "split to validate");
  val->add_flag("--json", val_json, "emit JSON instead of text");

  CommonOpts train_common;
  auto* train = app.add_subcommand("train", "train a model");
  std::string train_out, train_resume;
  add_common(train, train_common);
  train->add_option("--out", train_out, "output directory")->required();
  train->add_option("--checkpoint", train_resume, "checkpoint to resume from");

  CommonOpts infer_common;
  auto* infer = app.add_subcommand("infer", "write probability maps for a split");
  std::string infer_ckpt, infer_out, infer_split = "test";
  add_common(infer, infer_common);
  infer->add_option("--checkpoint", infer_ckpt, "trained checkpoint")->required();
  infer->add_option("--out", infer_out, "output directory")->required();
  infer->add_option("--split", infer_split, "split to run on");

  CommonOpts eval_common;
  auto* eval = app.add_subcommand("eval", "score predictions against ground truth");
  std::string eval_pred, eval_split = "test", eval_out;
  add_common(eval, eval_common);
  eval->add_option("--pred", eval_pred, "directory of predicted maps")->required();
  eval->add_option("--split", eval_split, "split to score");
  eval->add_option("--out", eval_out, "directory for report.json / report.txt");

  try {
    app.parse(argc, argv);
    if (synth->parsed())
      return run_synth(synth_out, synth_videos, synth_frames, synth_size, synth_seed,
                       synth_split);
    if (val->parsed()) return run_validate(val_common, val_root, val_split, val_json);
    if (train->parsed()) return run_train(train_common, train_out, train_resume);
    if (infer->parsed()) return run_infer(infer_common, infer_ckpt, infer_out, infer_split);
    if (eval->parsed()) return run_eval(eval_common, eval_pred, eval_split, eval_out);
    return 2;
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  } catch (const umbra::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const umbra::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << '\n';
    return 1;
  }
}
