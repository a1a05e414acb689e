#pragma once

// Run configuration: every stage's hyperparameters in one JSON document.
// Missing fields keep their defaults; unknown fields and out-of-range values
// are rejected with the offending field path.

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctap/actionness.hpp"
#include "ctap/data_io.hpp"
#include "ctap/error.hpp"
#include "ctap/eval.hpp"
#include "ctap/initial_proposals.hpp"
#include "ctap/pate.hpp"
#include "ctap/rng.hpp"
#include "ctap/tar.hpp"
#include "ctap/training.hpp"

namespace ctap {

/// How sliding windows and actionness proposals are combined before TAR.
enum class CombineMode { Ctap, Union, UnionNms, TiouSelect, TagOnly, SwOnly };

inline const char* to_string(CombineMode mode) {
  switch (mode) {
    case CombineMode::Ctap: return "ctap";
    case CombineMode::Union: return "union";
    case CombineMode::UnionNms: return "union-nms";
    case CombineMode::TiouSelect: return "tiou-select";
    case CombineMode::TagOnly: return "tag-only";
    case CombineMode::SwOnly: return "sw-only";
  }
  return "ctap";
}

inline CombineMode parse_mode(const std::string& text) {
  for (auto mode : {CombineMode::Ctap, CombineMode::Union, CombineMode::UnionNms, CombineMode::TiouSelect,
                    CombineMode::TagOnly, CombineMode::SwOnly}) {
    if (text == to_string(mode)) return mode;
  }
  throw Error(ErrorKind::Config, "mode: unknown value '" + text + "'");
}

/// Synthetic data section: one SynthConfig template, two splits.
struct SynthSection {
  SynthConfig base;
  std::size_t n_train = 40;
  std::size_t n_test = 10;
};

struct EvalConfig {
  double tiou_min = 0.5;
  double tiou_max = 1.0;
  double tiou_step = 0.05;
  std::size_t an_max = 100;
  BudgetMode budget = BudgetMode::PerVideo;

  std::vector<double> grid() const { return tiou_grid(tiou_min, tiou_max, tiou_step); }

  void validate() const {
    if (!(tiou_min > 0.0 && tiou_min <= tiou_max && tiou_max <= 1.0)) {
      throw Error(ErrorKind::Config, "eval.tiou_min/tiou_max: need 0 < min <= max <= 1");
    }
    if (!(tiou_step > 0.0)) throw Error(ErrorKind::Config, "eval.tiou_step: must be > 0");
    if (an_max == 0) throw Error(ErrorKind::Config, "eval.an_max: must be >= 1");
  }
};

struct RunConfig {
  std::uint64_t seed = 0;
  CombineMode mode = CombineMode::Ctap;
  std::optional<double> final_nms;
  double union_nms_threshold = 0.7;
  double tiou_select_threshold = 0.5;
  std::optional<SynthSection> synth;

  ActionnessHyper actionness;
  TrainConfig actionness_train;
  TagConfig tag;
  WindowConfig windows;
  PateHyper pate;
  TrainConfig pate_train;
  /// Folds for scoring the training split before PATE labelling; 1 uses the
  /// in-sample actionness model.
  std::size_t pate_label_folds = 1;
  TarHyper tar;
  TrainConfig tar_train;
  EvalConfig eval;

  void validate() const {
    auto unit_range = [](double v, const char* field) {
      if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorKind::Config, std::string(field) + ": must be in [0,1]");
    };
    if (final_nms) unit_range(*final_nms, "final_nms");
    unit_range(union_nms_threshold, "union_nms_threshold");
    unit_range(tiou_select_threshold, "tiou_select_threshold");
    if (synth) {
      synth->base.validate();
      if (synth->n_train == 0) throw Error(ErrorKind::Config, "synth.n_train: must be >= 1");
      if (synth->n_test == 0) throw Error(ErrorKind::Config, "synth.n_test: must be >= 1");
    }
    actionness.validate();
    actionness_train.validate("actionness.train");
    tag.validate();
    windows.validate();
    pate.validate();
    pate_train.validate("pate.train");
    if (pate_label_folds == 0) throw Error(ErrorKind::Config, "pate.label_folds: must be >= 1");
    tar.validate();
    tar_train.validate("tar.train");
    eval.validate();
  }

  /// Stage seeds derive from the run seed by label.
  std::uint64_t stage_seed(const std::string& stage) const { return derive_seed(seed, stage); }

  TrainConfig actionness_train_seeded() const {
    auto t = actionness_train;
    t.seed = stage_seed("actionness");
    return t;
  }
  TrainConfig pate_train_seeded() const {
    auto t = pate_train;
    t.seed = stage_seed("pate");
    return t;
  }
  TrainConfig tar_train_seeded() const {
    auto t = tar_train;
    t.seed = stage_seed("tar");
    return t;
  }

  SynthConfig synth_split(const std::string& split) const {
    const SynthSection section = synth.value_or(SynthSection{});
    SynthConfig cfg = section.base;
    cfg.split = split;
    cfg.seed = stage_seed("synth");
    cfg.n_videos = split == "train" ? section.n_train : section.n_test;
    return cfg;
  }

  nlohmann::ordered_json to_json() const;
  static RunConfig from_json(const nlohmann::json& doc);
};

namespace detail {

/// Reads one JSON object, tracking consumed keys so leftovers can be reported.
class ConfigSection {
 public:
  ConfigSection(const nlohmann::json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) throw Error(ErrorKind::Config, where() + "expected an object");
  }

  bool has(const std::string& key) const { return node_.contains(key); }

  void get(const std::string& key, double& out) {
    if (const auto* v = take(key)) {
      if (!v->is_number()) fail(key, "expected a number");
      out = v->get<double>();
    }
  }

  void get(const std::string& key, std::size_t& out) {
    if (const auto* v = take(key)) {
      if (!v->is_number_unsigned()) fail(key, "expected a non-negative integer");
      out = v->get<std::size_t>();
    }
  }

  void get(const std::string& key, std::uint64_t& out, int /*seed tag*/) {
    if (const auto* v = take(key)) {
      if (!v->is_number_unsigned()) fail(key, "expected a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }

  void get(const std::string& key, std::string& out) {
    if (const auto* v = take(key)) {
      if (!v->is_string()) fail(key, "expected a string");
      out = v->get<std::string>();
    }
  }

  void get(const std::string& key, std::vector<std::size_t>& out) {
    if (const auto* v = take(key)) {
      if (!v->is_array()) fail(key, "expected an array of integers");
      out.clear();
      for (const auto& item : *v) {
        if (!item.is_number_unsigned()) fail(key, "expected an array of non-negative integers");
        out.push_back(item.get<std::size_t>());
      }
    }
  }

  const nlohmann::json* take(const std::string& key) {
    used_.insert(key);
    return node_.contains(key) ? &node_.at(key) : nullptr;
  }

  ConfigSection child(const std::string& key) {
    used_.insert(key);
    return ConfigSection(node_.at(key), path_.empty() ? key : path_ + "." + key);
  }

  void finish() const {
    for (const auto& [key, value] : node_.items()) {
      if (!used_.count(key)) fail(key, "unknown field");
    }
  }

  [[noreturn]] void fail(const std::string& key, const std::string& message) const {
    throw Error(ErrorKind::Config, (path_.empty() ? key : path_ + "." + key) + ": " + message);
  }

 private:
  std::string where() const { return path_.empty() ? "" : path_ + ": "; }

  const nlohmann::json& node_;
  std::string path_;
  std::set<std::string> used_;
};

inline void read_train(ConfigSection& parent, TrainConfig& train) {
  if (!parent.has("train")) return;
  auto s = parent.child("train");
  s.get("batch_size", train.batch_size);
  s.get("learning_rate", train.learning_rate);
  s.get("epochs", train.epochs);
  s.finish();
}

inline nlohmann::ordered_json train_json(const TrainConfig& t) {
  return {{"batch_size", t.batch_size}, {"learning_rate", t.learning_rate}, {"epochs", t.epochs}};
}

}  // namespace detail

inline RunConfig RunConfig::from_json(const nlohmann::json& doc) {
  RunConfig cfg;
  detail::ConfigSection root(doc, "");
  root.get("seed", cfg.seed, 0);
  if (const auto* mode = root.take("mode")) {
    if (!mode->is_string()) root.fail("mode", "expected a string");
    cfg.mode = parse_mode(mode->get<std::string>());
  }
  if (const auto* nms_value = root.take("final_nms")) {
    if (nms_value->is_null() || (nms_value->is_string() && nms_value->get<std::string>() == "off")) {
      cfg.final_nms.reset();
    } else if (nms_value->is_number()) {
      cfg.final_nms = nms_value->get<double>();
    } else {
      root.fail("final_nms", "expected a number, null or \"off\"");
    }
  }
  root.get("union_nms_threshold", cfg.union_nms_threshold);
  root.get("tiou_select_threshold", cfg.tiou_select_threshold);

  if (root.has("synth")) {
    auto s = root.child("synth");
    SynthSection synth;
    s.get("n_train", synth.n_train);
    s.get("n_test", synth.n_test);
    s.get("units_min", synth.base.units_min);
    s.get("units_max", synth.base.units_max);
    s.get("segments_min", synth.base.segments_min);
    s.get("segments_max", synth.base.segments_max);
    s.get("segment_length_min", synth.base.segment_length_min);
    s.get("segment_length_max", synth.base.segment_length_max);
    s.get("d_f", synth.base.d_f);
    s.get("separation", synth.base.separation);
    s.get("failure_fraction", synth.base.failure_fraction);
    s.finish();
    cfg.synth = synth;
  }
  if (root.has("actionness")) {
    auto s = root.child("actionness");
    s.get("d_m", cfg.actionness.d_m);
    s.get("k", cfg.actionness.k);
    s.get("t_a", cfg.actionness.t_a);
    detail::read_train(s, cfg.actionness_train);
    s.finish();
  }
  if (root.has("tag")) {
    auto s = root.child("tag");
    s.get("tau_init", cfg.tag.tau_init);
    s.get("tau_step", cfg.tag.tau_step);
    s.get("tau_max", cfg.tag.tau_max);
    s.get("eta_min", cfg.tag.eta_min);
    s.get("eta_max", cfg.tag.eta_max);
    s.get("eta_step", cfg.tag.eta_step);
    s.get("nms_threshold", cfg.tag.nms_threshold);
    s.finish();
  }
  if (root.has("windows")) {
    auto s = root.child("windows");
    s.get("lengths", cfg.windows.lengths);
    s.get("overlap_tiou", cfg.windows.overlap_tiou);
    s.finish();
  }
  if (root.has("pate")) {
    auto s = root.child("pate");
    s.get("d_m", cfg.pate.d_m);
    s.get("theta_a", cfg.pate.theta_a);
    s.get("theta_c", cfg.pate.theta_c);
    s.get("label_folds", cfg.pate_label_folds);
    detail::read_train(s, cfg.pate_train);
    s.finish();
  }
  if (root.has("tar")) {
    auto s = root.child("tar");
    s.get("d_m", cfg.tar.d_m);
    s.get("k", cfg.tar.k);
    s.get("n_ctl", cfg.tar.n_ctl);
    s.get("n_ctx", cfg.tar.n_ctx);
    s.get("lambda_reg", cfg.tar.lambda_reg);
    s.get("negative_ratio", cfg.tar.negative_ratio);
    detail::read_train(s, cfg.tar_train);
    s.finish();
  }
  if (root.has("eval")) {
    auto s = root.child("eval");
    s.get("tiou_min", cfg.eval.tiou_min);
    s.get("tiou_max", cfg.eval.tiou_max);
    s.get("tiou_step", cfg.eval.tiou_step);
    s.get("an_max", cfg.eval.an_max);
    std::string budget = cfg.eval.budget == BudgetMode::Global ? "global" : "per-video";
    s.get("budget", budget);
    if (budget == "per-video") {
      cfg.eval.budget = BudgetMode::PerVideo;
    } else if (budget == "global") {
      cfg.eval.budget = BudgetMode::Global;
    } else {
      s.fail("budget", "expected \"per-video\" or \"global\"");
    }
    s.finish();
  }
  root.finish();
  cfg.validate();
  return cfg;
}

inline nlohmann::ordered_json RunConfig::to_json() const {
  nlohmann::ordered_json doc;
  doc["seed"] = seed;
  doc["mode"] = to_string(mode);
  doc["final_nms"] = final_nms ? nlohmann::ordered_json(*final_nms) : nlohmann::ordered_json(nullptr);
  doc["union_nms_threshold"] = union_nms_threshold;
  doc["tiou_select_threshold"] = tiou_select_threshold;
  if (synth) {
    const auto& b = synth->base;
    doc["synth"] = {{"n_train", synth->n_train},
                    {"n_test", synth->n_test},
                    {"units_min", b.units_min},
                    {"units_max", b.units_max},
                    {"segments_min", b.segments_min},
                    {"segments_max", b.segments_max},
                    {"segment_length_min", b.segment_length_min},
                    {"segment_length_max", b.segment_length_max},
                    {"d_f", b.d_f},
                    {"separation", b.separation},
                    {"failure_fraction", b.failure_fraction}};
  }
  doc["actionness"] = {{"d_m", actionness.d_m},
                       {"k", actionness.k},
                       {"t_a", actionness.t_a},
                       {"train", detail::train_json(actionness_train)}};
  doc["tag"] = {{"tau_init", tag.tau_init},   {"tau_step", tag.tau_step}, {"tau_max", tag.tau_max},
                {"eta_min", tag.eta_min},     {"eta_max", tag.eta_max},   {"eta_step", tag.eta_step},
                {"nms_threshold", tag.nms_threshold}};
  doc["windows"] = {{"lengths", windows.lengths}, {"overlap_tiou", windows.overlap_tiou}};
  doc["pate"] = {{"d_m", pate.d_m},
                 {"theta_a", pate.theta_a},
                 {"theta_c", pate.theta_c},
                 {"label_folds", pate_label_folds},
                 {"train", detail::train_json(pate_train)}};
  doc["tar"] = {{"d_m", tar.d_m},
                {"k", tar.k},
                {"n_ctl", tar.n_ctl},
                {"n_ctx", tar.n_ctx},
                {"lambda_reg", tar.lambda_reg},
                {"negative_ratio", tar.negative_ratio},
                {"train", detail::train_json(tar_train)}};
  doc["eval"] = {{"tiou_min", eval.tiou_min},
                 {"tiou_max", eval.tiou_max},
                 {"tiou_step", eval.tiou_step},
                 {"an_max", eval.an_max},
                 {"budget", eval.budget == BudgetMode::Global ? "global" : "per-video"}};
  return doc;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(detail::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::Config, path.string() + ": " + e.what());
  }
  return RunConfig::from_json(doc);
}

/// FNV-1a over the canonical JSON form.
inline std::uint64_t config_hash(const RunConfig& cfg) { return fnv1a64(cfg.to_json().dump()); }

}  // namespace ctap
