#pragma once

// File-to-file stages. Every intermediate artifact is written to disk, so a
// `pipeline` run is the same sequence of calls the individual subcommands make.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctap/actionness.hpp"
#include "ctap/checkpoint.hpp"
#include "ctap/config.hpp"
#include "ctap/core.hpp"
#include "ctap/data_io.hpp"
#include "ctap/error.hpp"
#include "ctap/eval.hpp"
#include "ctap/initial_proposals.hpp"
#include "ctap/pate.hpp"
#include "ctap/tar.hpp"

namespace ctap {

namespace fs = std::filesystem;

using ScoreTable = std::map<std::string, std::vector<double>>;

// ---------------------------------------------------------------------------
// Per-unit actionness score files: video_id \t unit \t score.

inline std::string format_scores(const ScoreTable& scores) {
  std::string out;
  for (const auto& [vid, values] : scores) {
    for (std::size_t u = 0; u < values.size(); ++u) {
      out += vid + '\t' + std::to_string(u) + '\t' + detail::format_real(values[u]) + '\n';
    }
  }
  return out;
}

inline ScoreTable parse_scores(std::string_view text) {
  ScoreTable out;
  detail::for_each_record(text, [&](std::size_t line_no, std::string_view line) {
    const auto fields = detail::split_tabs(line);
    if (fields.size() != 3) throw ParseError(line_no, "expected 3 tab-separated fields");
    auto& values = out[std::string(fields[0])];
    std::size_t unit = 0;
    double score = 0.0;
    if (!detail::parse_number(fields[1], unit)) throw ParseError(line_no, "non-integer unit index");
    if (!detail::parse_number(fields[2], score)) throw ParseError(line_no, "bad score");
    if (unit != values.size()) throw ParseError(line_no, "units must be consecutive from 0");
    values.push_back(score);
  });
  return out;
}

inline void write_scores(const ScoreTable& scores, const fs::path& path) {
  detail::write_file(path, format_scores(scores));
}

inline ScoreTable read_scores(const fs::path& path) { return parse_scores(detail::read_file(path)); }

// ---------------------------------------------------------------------------
// Model files.

template <typename Model>
Model load_model(const fs::path& path, const std::string& name) {
  if (!fs::exists(path)) throw Error(ErrorKind::MissingModel, "missing model: " + name);
  return Model::from_checkpoint(nn::load_checkpoint(path));
}

struct ModelPaths {
  fs::path actionness;
  fs::path pate;
  fs::path tar;

  static ModelPaths in(const fs::path& dir) {
    return {dir / "actionness.ckpt", dir / "pate.ckpt", dir / "tar.ckpt"};
  }
};

// ---------------------------------------------------------------------------
// Stages.

struct SplitPaths {
  fs::path train;
  fs::path test;
};

/// Generates both synthetic splits under dir; returns their manifests.
inline SplitPaths stage_gen_synth(const RunConfig& cfg, const fs::path& dir) {
  const auto train = generate_synthetic_dataset(cfg.synth_split("train"));
  const auto test = generate_synthetic_dataset(cfg.synth_split("test"));
  return {save_dataset(train.dataset, dir), save_dataset(test.dataset, dir)};
}

inline ActionnessTrainResult stage_train_actionness(const RunConfig& cfg, const fs::path& train_manifest,
                                                    const fs::path& model_out) {
  const auto data = load_dataset(train_manifest);
  auto result = train_actionness(data, cfg.actionness, cfg.actionness_train_seeded());
  nn::save_checkpoint(result.model.to_checkpoint(), model_out);
  return result;
}

inline ScoreTable score_dataset(const ActionnessModel& model, const Dataset& data) {
  ScoreTable out;
  for (const auto& seq : data.videos) out[seq.video_id] = score_units(model, seq);
  return out;
}

inline void stage_score(const fs::path& model_path, const fs::path& manifest, const fs::path& scores_out) {
  const auto model = load_model<ActionnessModel>(model_path, "actionness");
  write_scores(score_dataset(model, load_dataset(manifest)), scores_out);
}

/// Training-split scores for PATE labelling, out of fold when configured.
inline void stage_score_train(const RunConfig& cfg, const fs::path& train_manifest, const fs::path& scores_out) {
  write_scores(score_out_of_fold(load_dataset(train_manifest), cfg.actionness, cfg.actionness_train_seeded(),
                                 cfg.pate_label_folds),
               scores_out);
}

inline std::vector<Proposal> tag_all(const ScoreTable& scores, const TagConfig& tag) {
  std::vector<Proposal> out;
  for (const auto& [vid, values] : scores) {
    auto props = tag_proposals(values, tag, values.size(), vid);
    out.insert(out.end(), props.begin(), props.end());
  }
  return out;
}

inline void stage_tag(const RunConfig& cfg, const fs::path& scores_path, const fs::path& out) {
  write_proposals(tag_all(read_scores(scores_path), cfg.tag), out);
}

inline void stage_windows(const RunConfig& cfg, const fs::path& manifest, const fs::path& out) {
  std::vector<Proposal> all;
  for (const auto& entry : read_manifest(manifest).videos) {
    auto w = sliding_windows(entry.n_units, cfg.windows, entry.video_id);
    all.insert(all.end(), w.begin(), w.end());
  }
  write_proposals(std::move(all), out);
}

inline PateTrainResult stage_train_pate(const RunConfig& cfg, const fs::path& train_manifest,
                                        const fs::path& train_tag, const fs::path& model_out) {
  const auto data = load_dataset(train_manifest);
  const auto props = read_proposals(train_tag);
  auto result = train_pate(data, group_by_video<Proposal>(props), cfg.pate, cfg.pate_train_seeded());
  nn::save_checkpoint(result.model.to_checkpoint(), model_out);
  return result;
}

/// Candidate set handed to TAR for one video under the configured mode.
inline std::vector<Proposal> combine_candidates(const RunConfig& cfg, std::span<const Proposal> tag,
                                                std::span<const Proposal> windows, const FeatureSequence& seq,
                                                const PateModel* pate) {
  std::vector<Proposal> out;
  switch (cfg.mode) {
    case CombineMode::Ctap:
      if (!pate) throw Error(ErrorKind::MissingModel, "missing model: pate");
      return complementary_filter(windows, tag, *pate, seq, cfg.pate.theta_a);
    case CombineMode::Union:
    case CombineMode::UnionNms:
      out.assign(tag.begin(), tag.end());
      out.insert(out.end(), windows.begin(), windows.end());
      return out;
    case CombineMode::TiouSelect: {
      out.assign(tag.begin(), tag.end());
      for (const auto& w : windows) {
        double best = 0.0;
        for (const auto& t : tag) best = std::max(best, tiou(w.interval, t.interval));
        if (best < cfg.tiou_select_threshold) out.push_back(w);
      }
      return out;
    }
    case CombineMode::TagOnly:
      out.assign(tag.begin(), tag.end());
      return out;
    case CombineMode::SwOnly:
      out.assign(windows.begin(), windows.end());
      return out;
  }
  return out;
}

inline std::vector<Proposal> combine_all(const RunConfig& cfg, const Dataset& data, std::span<const Proposal> tag,
                                         std::span<const Proposal> windows, const PateModel* pate) {
  const auto tag_by = group_by_video<Proposal>(tag);
  const auto win_by = group_by_video<Proposal>(windows);
  static const std::vector<Proposal> kNone;
  std::vector<Proposal> out;
  for (const auto& seq : data.videos) {
    const auto t = tag_by.find(seq.video_id);
    const auto w = win_by.find(seq.video_id);
    auto c = combine_candidates(cfg, t == tag_by.end() ? kNone : t->second, w == win_by.end() ? kNone : w->second,
                                seq, pate);
    out.insert(out.end(), c.begin(), c.end());
  }
  return out;
}

inline void stage_filter(const RunConfig& cfg, const fs::path& manifest, const fs::path& tag_path,
                         const fs::path& windows_path, const fs::path& pate_path, const fs::path& out) {
  std::optional<PateModel> pate;
  if (cfg.mode == CombineMode::Ctap) pate = load_model<PateModel>(pate_path, "pate");
  const auto data = load_dataset(manifest);
  write_proposals(combine_all(cfg, data, read_proposals(tag_path), read_proposals(windows_path),
                              pate ? &*pate : nullptr),
                  out);
}

inline TarTrainResult stage_train_tar(const RunConfig& cfg, const fs::path& train_manifest,
                                      const fs::path& model_out) {
  auto result = train_tar(load_dataset(train_manifest), cfg.tar, cfg.windows, cfg.tar_train_seeded());
  nn::save_checkpoint(result.model.to_checkpoint(), model_out);
  return result;
}

inline ApplyTarOptions tar_options(const RunConfig& cfg) {
  ApplyTarOptions opt;
  opt.final_nms = cfg.mode == CombineMode::UnionNms ? std::optional<double>(cfg.union_nms_threshold) : cfg.final_nms;
  return opt;
}

inline std::vector<Proposal> apply_tar_all(const TarModel& model, const Dataset& data,
                                           std::span<const Proposal> candidates, const ApplyTarOptions& opt) {
  const auto by = group_by_video<Proposal>(candidates);
  std::vector<Proposal> out;
  for (const auto& seq : data.videos) {
    const auto it = by.find(seq.video_id);
    if (it == by.end()) continue;
    auto r = apply_tar(model, it->second, seq, opt);
    out.insert(out.end(), r.begin(), r.end());
  }
  return out;
}

inline void stage_apply_tar(const RunConfig& cfg, const fs::path& manifest, const fs::path& candidates,
                            const fs::path& tar_path, const fs::path& out) {
  const auto model = load_model<TarModel>(tar_path, "tar");
  write_proposals(apply_tar_all(model, load_dataset(manifest), read_proposals(candidates), tar_options(cfg)), out);
}

struct InferPaths {
  fs::path scores;
  fs::path tag;
  fs::path windows;
  fs::path candidates;
  fs::path proposals;

  static InferPaths in(const fs::path& dir) {
    return {dir / "scores.tsv", dir / "tag.tsv", dir / "windows.tsv", dir / "candidates.tsv",
            dir / "proposals.tsv"};
  }
};

/// Actionness scoring, TAG, windows, combination and TAR on one split.
/// Every model the mode needs is checked before any work starts.
inline InferPaths stage_infer(const RunConfig& cfg, const fs::path& manifest, const ModelPaths& models,
                              const fs::path& out_dir) {
  for (const auto& [path, name] : {std::pair{models.actionness, "actionness"}, std::pair{models.pate, "pate"},
                                   std::pair{models.tar, "tar"}}) {
    if (std::string(name) == "pate" && cfg.mode != CombineMode::Ctap) continue;
    if (!fs::exists(path)) throw Error(ErrorKind::MissingModel, std::string("missing model: ") + name);
  }
  const auto paths = InferPaths::in(out_dir);
  stage_score(models.actionness, manifest, paths.scores);
  stage_tag(cfg, paths.scores, paths.tag);
  stage_windows(cfg, manifest, paths.windows);
  stage_filter(cfg, manifest, paths.tag, paths.windows, models.pate, paths.candidates);
  stage_apply_tar(cfg, manifest, paths.candidates, models.tar, paths.proposals);
  return paths;
}

inline ArAnCurve stage_eval(const RunConfig& cfg, const fs::path& proposals, const fs::path& annotations,
                            const fs::path& out_dir) {
  const auto props = read_proposals(proposals);
  const auto gts = read_annotations(annotations);
  const auto grid = cfg.eval.grid();
  auto curve = ar_an_curve(props, gts, grid, cfg.eval.an_max, cfg.eval.budget);
  write_curve_csv(curve, out_dir);
  return curve;
}

// ---------------------------------------------------------------------------
// End to end.

struct PipelineInputs {
  /// When both are empty the synthetic section of the config is used.
  fs::path train_manifest;
  fs::path test_manifest;
};

struct PipelineResult {
  fs::path manifest;
  ArAnCurve curve;
};

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Layout under out_dir: data/, models/, train/, test/, eval/, config.json
/// and run_manifest.json.
inline PipelineResult run_pipeline(const RunConfig& cfg, const fs::path& out_dir, PipelineInputs inputs = {},
                                   std::ostream* log = nullptr) {
  cfg.validate();
  using clock = std::chrono::steady_clock;
  nlohmann::ordered_json stages = nlohmann::ordered_json::array();
  auto timed = [&](const std::string& name, auto&& body, std::vector<fs::path> outputs) {
    const auto t0 = clock::now();
    try {
      body();
    } catch (const Error& e) {
      throw Error(e.kind(), name + ": " + e.what());
    }
    const double secs = std::chrono::duration<double>(clock::now() - t0).count();
    nlohmann::ordered_json outs = nlohmann::ordered_json::array();
    for (const auto& p : outputs) outs.push_back(fs::relative(p, out_dir).generic_string());
    stages.push_back({{"stage", name}, {"seconds", secs}, {"outputs", outs}});
    if (log) *log << name << " done in " << secs << " s\n";
  };

  detail::write_file(out_dir / "config.json", cfg.to_json().dump(2) + "\n");
  if (inputs.train_manifest.empty() != inputs.test_manifest.empty()) {
    throw Error(ErrorKind::InvalidArgument, "pipeline needs both train and test manifests or neither");
  }
  if (inputs.train_manifest.empty()) {
    timed("gen-synth", [&] {
      const auto split = stage_gen_synth(cfg, out_dir / "data");
      inputs.train_manifest = split.train;
      inputs.test_manifest = split.test;
    }, {out_dir / "data"});
  }

  const auto models = ModelPaths::in(out_dir / "models");
  const fs::path train_scores = out_dir / "train" / "scores.tsv";
  const fs::path train_tag = out_dir / "train" / "tag.tsv";
  const auto test = InferPaths::in(out_dir / "test");
  const bool need_pate = cfg.mode == CombineMode::Ctap;

  timed("train-actionness", [&] {
    const auto r = stage_train_actionness(cfg, inputs.train_manifest, models.actionness);
    if (log && !r.epoch_loss.empty()) *log << "actionness final loss " << r.epoch_loss.back() << '\n';
  }, {models.actionness});
  if (need_pate) {
    timed("score-actionness", [&] {
      if (cfg.pate_label_folds > 1) {
        stage_score_train(cfg, inputs.train_manifest, train_scores);
      } else {
        stage_score(models.actionness, inputs.train_manifest, train_scores);
      }
    }, {train_scores});
    timed("tag-group", [&] { stage_tag(cfg, train_scores, train_tag); }, {train_tag});
    timed("train-pate", [&] {
      const auto r = stage_train_pate(cfg, inputs.train_manifest, train_tag, models.pate);
      if (log && !r.warning.empty()) *log << "warning: " << r.warning << '\n';
    }, {models.pate});
  }
  timed("train-tar", [&] { stage_train_tar(cfg, inputs.train_manifest, models.tar); }, {models.tar});
  timed("infer", [&] { stage_infer(cfg, inputs.test_manifest, models, out_dir / "test"); },
        {test.scores, test.tag, test.windows, test.candidates, test.proposals});

  PipelineResult result;
  const auto eval_dir = out_dir / "eval";
  timed("eval", [&] {
    const auto manifest = read_manifest(inputs.test_manifest);
    result.curve = stage_eval(cfg, test.proposals, inputs.test_manifest.parent_path() / manifest.annotations,
                              eval_dir);
  }, {eval_dir / "curve.csv", eval_dir / "summary.csv", eval_dir / "auc.csv"});

  nlohmann::ordered_json run;
  run["config_hash"] = hex64(config_hash(cfg));
  run["seed"] = cfg.seed;
  run["mode"] = to_string(cfg.mode);
  run["train_manifest"] = fs::absolute(inputs.train_manifest).lexically_normal().generic_string();
  run["test_manifest"] = fs::absolute(inputs.test_manifest).lexically_normal().generic_string();
  run["stages"] = stages;
  run["auc"] = result.curve.auc;
  result.manifest = out_dir / "run_manifest.json";
  detail::write_file(result.manifest, run.dump(2) + "\n");
  return result;
}

}  // namespace ctap
