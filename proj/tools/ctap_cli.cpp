// ctap: command-line driver for every pipeline stage.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "ctap/ctap.hpp"

namespace fs = std::filesystem;

namespace {

int exit_code(ctap::ErrorKind kind) {
  using ctap::ErrorKind;
  switch (kind) {
    case ErrorKind::InvalidArgument: return 2;
    case ErrorKind::Config: return 3;
    case ErrorKind::Io: return 4;
    case ErrorKind::Decode:
    case ErrorKind::Parse: return 5;
    case ErrorKind::MissingModel: return 6;
    case ErrorKind::Numeric: return 7;
    case ErrorKind::Data: return 8;
  }
  return 1;
}

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string mode;
  std::string final_nms;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config, "run configuration (JSON)")->check(CLI::ExistingFile);
    cmd->add_option("--seed", seed, "overrides the config seed");
    cmd->add_option("--mode", mode, "candidate combination mode")
        ->check(CLI::IsMember({"ctap", "union", "union-nms", "tiou-select", "tag-only", "sw-only"}));
    cmd->add_option("--final-nms", final_nms, "NMS threshold after TAR, or 'off'");
  }

  ctap::RunConfig resolve() const {
    ctap::RunConfig cfg = config.empty() ? ctap::RunConfig{} : ctap::load_run_config(config);
    if (seed) cfg.seed = *seed;
    if (!mode.empty()) cfg.mode = ctap::parse_mode(mode);
    if (final_nms == "off") {
      cfg.final_nms.reset();
    } else if (!final_nms.empty()) {
      double t = 0.0;
      if (!ctap::detail::parse_number(final_nms, t)) {
        throw ctap::Error(ctap::ErrorKind::Config, "final_nms: expected a number or 'off'");
      }
      cfg.final_nms = t;
    }
    cfg.validate();
    return cfg;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Complementary temporal action proposals"};
  app.require_subcommand(1);
  CommonFlags flags;
  std::string out_dir, out, train, test, data, model, scores, tag, windows, pate, models_dir, proposals, annotations;

  auto* gen = app.add_subcommand("gen-synth", "write synthetic train/test splits");
  gen->add_option("--out-dir", out_dir)->required();

  auto* train_act = app.add_subcommand("train-actionness", "train the unit actionness classifier");
  train_act->add_option("--train", train, "training manifest")->required()->check(CLI::ExistingFile);
  train_act->add_option("--out", out, "checkpoint path")->required();

  auto* score = app.add_subcommand("score-actionness", "per-unit actionness scores");
  bool out_of_fold = false;
  score->add_option("--model", model, "actionness checkpoint");
  score->add_option("--data", data, "dataset manifest")->required()->check(CLI::ExistingFile);
  score->add_flag("--out-of-fold", out_of_fold, "train pate.label_folds models on --data and score each video out of fold")
      ->excludes("--model");
  score->add_option("--out", out)->required();

  auto* tag_cmd = app.add_subcommand("tag-group", "TAG proposals from a score file");
  tag_cmd->add_option("--scores", scores)->required()->check(CLI::ExistingFile);
  tag_cmd->add_option("--out", out)->required();

  auto* win = app.add_subcommand("gen-windows", "multi-scale sliding windows");
  win->add_option("--data", data, "dataset manifest")->required()->check(CLI::ExistingFile);
  win->add_option("--out", out)->required();

  auto* train_pate_cmd = app.add_subcommand("train-pate", "train the window trust estimator");
  train_pate_cmd->add_option("--train", train, "training manifest")->required()->check(CLI::ExistingFile);
  train_pate_cmd->add_option("--tag", tag, "TAG proposals on the training split")->required()->check(CLI::ExistingFile);
  train_pate_cmd->add_option("--out", out, "checkpoint path")->required();

  auto* filter = app.add_subcommand("filter", "combine TAG proposals and windows per --mode");
  filter->add_option("--data", data, "dataset manifest")->required()->check(CLI::ExistingFile);
  filter->add_option("--tag", tag)->required()->check(CLI::ExistingFile);
  filter->add_option("--windows", windows)->required()->check(CLI::ExistingFile);
  filter->add_option("--pate", pate, "PATE checkpoint (ctap mode)");
  filter->add_option("--out", out)->required();

  auto* train_tar_cmd = app.add_subcommand("train-tar", "train ranking and boundary adjustment");
  train_tar_cmd->add_option("--train", train, "training manifest")->required()->check(CLI::ExistingFile);
  train_tar_cmd->add_option("--out", out, "checkpoint path")->required();

  auto* infer = app.add_subcommand("infer", "full proposal generation on one split");
  infer->add_option("--data", data, "dataset manifest")->required()->check(CLI::ExistingFile);
  infer->add_option("--models-dir", models_dir, "directory with actionness/pate/tar .ckpt")->required();
  infer->add_option("--out-dir", out_dir)->required();

  auto* eval = app.add_subcommand("eval", "AR-AN curve and AUC");
  eval->add_option("--proposals", proposals)->required()->check(CLI::ExistingFile);
  eval->add_option("--annotations", annotations)->required()->check(CLI::ExistingFile);
  eval->add_option("--out-dir", out_dir)->required();

  auto* pipeline = app.add_subcommand("pipeline", "synthesize or load data, train, infer, evaluate");
  pipeline->add_option("--out-dir", out_dir)->required();
  pipeline->add_option("--train", train, "training manifest (default: synthetic)");
  pipeline->add_option("--test", test, "test manifest (default: synthetic)");

  for (auto* cmd : app.get_subcommands([](CLI::App*) { return true; })) flags.attach(cmd);

  CLI11_PARSE(app, argc, argv);

  try {
    const auto cfg = flags.resolve();
    if (*gen) {
      const auto split = ctap::stage_gen_synth(cfg, out_dir);
      std::cout << split.train.string() << '\n' << split.test.string() << '\n';
    } else if (*train_act) {
      const auto r = ctap::stage_train_actionness(cfg, train, out);
      std::cout << "final loss " << r.epoch_loss.back() << '\n';
    } else if (*score) {
      if (out_of_fold) {
        ctap::stage_score_train(cfg, data, out);
      } else if (model.empty()) {
        throw ctap::Error(ctap::ErrorKind::InvalidArgument, "score-actionness needs --model or --out-of-fold");
      } else {
        ctap::stage_score(model, data, out);
      }
    } else if (*tag_cmd) {
      ctap::stage_tag(cfg, scores, out);
    } else if (*win) {
      ctap::stage_windows(cfg, data, out);
    } else if (*train_pate_cmd) {
      const auto r = ctap::stage_train_pate(cfg, train, tag, out);
      if (!r.warning.empty()) std::cerr << "warning: " << r.warning << '\n';
      std::cout << r.positives << " positive, " << r.negatives << " negative\n";
    } else if (*filter) {
      ctap::stage_filter(cfg, data, tag, windows, pate, out);
    } else if (*train_tar_cmd) {
      const auto r = ctap::stage_train_tar(cfg, train, out);
      std::cout << r.positives << " positive, " << r.negatives << " negative windows\n";
    } else if (*infer) {
      const auto paths = ctap::stage_infer(cfg, data, ctap::ModelPaths::in(models_dir), out_dir);
      std::cout << paths.proposals.string() << '\n';
    } else if (*eval) {
      const auto curve = ctap::stage_eval(cfg, proposals, annotations, out_dir);
      std::cout << "auc " << curve.auc << '\n';
    } else if (*pipeline) {
      const auto r = ctap::run_pipeline(cfg, out_dir, {train, test}, &std::cerr);
      std::cout << "auc " << r.curve.auc << '\n';
    }
  } catch (const ctap::Error& e) {
    std::cerr << "error [" << ctap::to_string(e.kind()) << "]: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
