#pragma once

// Unit-level actionness scorer: two temporal convolutions with a sigmoid
// head, one probability per unit.

#include <algorithm>
#include <concepts>
#include <map>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "ctap/adam.hpp"
#include "ctap/checkpoint.hpp"
#include "ctap/data_io.hpp"
#include "ctap/features.hpp"
#include "ctap/nn.hpp"
#include "ctap/rng.hpp"
#include "ctap/training.hpp"

namespace ctap {

struct ActionnessHyper {
  std::size_t k = 3;
  std::size_t d_m = 1024;
  /// Units per training window.
  std::size_t t_a = 4;

  void validate() const {
    if (k == 0 || k % 2 == 0) throw Error(ErrorKind::Config, "actionness.k: must be odd");
    if (d_m == 0) throw Error(ErrorKind::Config, "actionness.d_m: must be >= 1");
    if (t_a == 0) throw Error(ErrorKind::Config, "actionness.t_a: must be >= 1");
  }
};

struct ActionnessModel {
  ActionnessHyper hyper;
  nn::TConvStack net;

  static ActionnessModel zeros(std::size_t d_f, const ActionnessHyper& hyper) {
    hyper.validate();
    return {hyper, nn::TConvStack::zeros(d_f, hyper.d_m, 1, hyper.k)};
  }

  static ActionnessModel init(std::size_t d_f, const ActionnessHyper& hyper, Rng& rng) {
    hyper.validate();
    return {hyper, nn::TConvStack::glorot(d_f, hyper.d_m, 1, hyper.k, rng)};
  }

  std::size_t d_f() const { return net.first.d_in(); }

  ActionnessModel zeros_like() const { return zeros(d_f(), hyper); }

  nn::Checkpoint to_checkpoint() const;
  static ActionnessModel from_checkpoint(const nn::Checkpoint& ckpt);
};

template <typename M, typename Fn>
  requires std::same_as<std::remove_const_t<M>, ActionnessModel>
void visit_params(M& model, Fn&& fn) {
  nn::visit_params(model.net, "", fn);
}

inline nn::Checkpoint ActionnessModel::to_checkpoint() const {
  nn::Checkpoint ckpt;
  ckpt.kind = "actionness";
  ckpt.hyper = {{"d_f", std::to_string(d_f())},
                {"d_m", std::to_string(hyper.d_m)},
                {"k", std::to_string(hyper.k)},
                {"t_a", std::to_string(hyper.t_a)}};
  store_tensors(*this, ckpt);
  return ckpt;
}

inline ActionnessModel ActionnessModel::from_checkpoint(const nn::Checkpoint& ckpt) {
  require_kind(ckpt, "actionness");
  ActionnessHyper hyper;
  hyper.d_m = hyper_size(ckpt, "d_m");
  hyper.k = hyper_size(ckpt, "k");
  hyper.t_a = hyper_size(ckpt, "t_a");
  auto model = zeros(hyper_size(ckpt, "d_f"), hyper);
  restore_tensors(ckpt, model);
  return model;
}

/// Per-unit action probabilities over the whole sequence at once.
inline std::vector<double> score_units(const ActionnessModel& model, const FeatureSequence& seq) {
  if (seq.d_f != model.d_f()) {
    throw Error(ErrorKind::InvalidArgument, "actionness model expects d_f=" + std::to_string(model.d_f()) +
                                                ", " + seq.video_id + " has " + std::to_string(seq.d_f));
  }
  if (seq.n_units == 0) return {};
  const auto out = nn::forward(model.net, slice_rows(seq, 0, seq.n_units), nn::Head::Sigmoid);
  return {out.values().begin(), out.values().end()};
}

/// y[u] = 1 iff unit u lies inside some ground-truth interval.
inline std::vector<double> make_unit_labels(std::size_t n_units, std::span<const GroundTruthSegment> gts) {
  std::vector<double> y(n_units, 0.0);
  for (const auto& gt : gts) {
    const auto end = std::min<UnitIndex>(gt.interval.end(), static_cast<UnitIndex>(n_units));
    for (auto u = gt.interval.start(); u < end; ++u) y[static_cast<std::size_t>(u)] = 1.0;
  }
  return y;
}

struct ActionnessTrainResult {
  ActionnessModel model;
  /// Mean mini-batch loss per epoch.
  std::vector<double> epoch_loss;
};

/// Minimises the windowed cross-entropy with Adam. Windows are consecutive
/// t_a-unit slices (trailing partial windows dropped), listed in (video_id,
/// start) order before the seeded shuffle so input order never matters.
inline ActionnessTrainResult train_actionness(const Dataset& data, const ActionnessHyper& hyper,
                                              const TrainConfig& train) {
  hyper.validate();
  train.validate("actionness.train");
  if (data.videos.empty()) throw Error(ErrorKind::Data, "train_actionness: empty dataset");

  std::vector<const FeatureSequence*> videos;
  for (const auto& v : data.videos) videos.push_back(&v);
  std::sort(videos.begin(), videos.end(),
            [](const auto* a, const auto* b) { return a->video_id < b->video_id; });

  struct Window {
    std::size_t video;
    std::size_t start;
  };
  std::vector<Window> windows;
  std::vector<std::vector<double>> labels;
  for (std::size_t v = 0; v < videos.size(); ++v) {
    labels.push_back(make_unit_labels(videos[v]->n_units, data.gts_for(videos[v]->video_id)));
    for (std::size_t s = 0; s + hyper.t_a <= videos[v]->n_units; s += hyper.t_a) windows.push_back({v, s});
  }
  if (windows.empty()) throw Error(ErrorKind::Data, "train_actionness: no video holds a full t_a window");

  Rng init_rng(derive_seed(train.seed, "actionness/init"));
  Rng shuffle_rng(derive_seed(train.seed, "actionness/shuffle"));
  ActionnessTrainResult result{ActionnessModel::init(videos.front()->d_f, hyper, init_rng), {}};
  auto grads = result.model.zeros_like();
  nn::Adam adam(train.adam());
  const auto slots = param_slots(result.model, grads);

  nn::TConvTape tape;
  for (std::size_t epoch = 0; epoch < train.epochs; ++epoch) {
    shuffle_rng.shuffle(windows);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < windows.size(); b += train.batch_size) {
      const std::size_t end = std::min(windows.size(), b + train.batch_size);
      const double inv_n = 1.0 / static_cast<double>(end - b);
      zero_grads(grads);
      double batch_loss = 0.0;
      for (std::size_t i = b; i < end; ++i) {
        const auto& w = windows[i];
        const auto x = slice_rows(*videos[w.video], w.start, hyper.t_a);
        const auto p = nn::forward(result.model.net, x, nn::Head::Sigmoid, &tape);
        const std::span<const double> y(labels[w.video].data() + w.start, hyper.t_a);
        auto loss = nn::bce_loss(p.values(), y);
        batch_loss += loss.value * inv_n;
        nn::Matrix g(hyper.t_a, 1);
        for (std::size_t t = 0; t < hyper.t_a; ++t) g(t, 0) = loss.grad[t] * inv_n;
        nn::backward(result.model.net, tape, g, grads.net);
      }
      detail::require_finite_loss(batch_loss, "actionness");
      adam.step(slots);
      loss_sum += batch_loss;
      ++batches;
    }
    result.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
  }
  return result;
}

/// Scores every training video with a model that never saw it: videos are
/// dealt round-robin (in id order) into `folds` groups, and each group is
/// scored by a model trained on the others. folds = 1 scores the training
/// set with a single in-sample model.
inline std::map<std::string, std::vector<double>> score_out_of_fold(const Dataset& data, const ActionnessHyper& hyper,
                                                                   const TrainConfig& train, std::size_t folds) {
  if (folds == 0) throw Error(ErrorKind::Config, "pate.label_folds: must be >= 1");
  std::vector<const FeatureSequence*> videos;
  for (const auto& v : data.videos) videos.push_back(&v);
  std::sort(videos.begin(), videos.end(), [](const auto* a, const auto* b) { return a->video_id < b->video_id; });
  if (folds > 1 && videos.size() < folds) {
    throw Error(ErrorKind::Data, "score_out_of_fold: fewer videos than folds");
  }
  std::map<std::string, std::vector<double>> out;
  if (folds == 1) {
    const auto model = train_actionness(data, hyper, train).model;
    for (const auto* seq : videos) out[seq->video_id] = score_units(model, *seq);
    return out;
  }
  for (std::size_t f = 0; f < folds; ++f) {
    Dataset rest;
    rest.split = data.split;
    for (std::size_t i = 0; i < videos.size(); ++i) {
      if (i % folds == f) continue;
      rest.videos.push_back(*videos[i]);
      for (const auto& gt : data.gts_for(videos[i]->video_id)) rest.annotations.push_back(gt);
    }
    auto fold_train = train;
    fold_train.seed = derive_seed(train.seed, "fold/" + std::to_string(f));
    const auto model = train_actionness(rest, hyper, fold_train).model;
    for (std::size_t i = f; i < videos.size(); i += folds) out[videos[i]->video_id] = score_units(model, *videos[i]);
  }
  return out;
}

/// Fraction of units whose thresholded score matches the label.
inline double unit_accuracy(std::span<const double> scores, std::span<const double> labels,
                            double threshold = 0.5) {
  if (scores.size() != labels.size() || scores.empty()) {
    throw Error(ErrorKind::InvalidArgument, "unit_accuracy needs equal, non-empty inputs");
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    correct += (scores[i] > threshold) == (labels[i] > 0.5) ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(scores.size());
}

}  // namespace ctap
