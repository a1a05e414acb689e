#pragma once

// Proposal-level actionness trustworthiness estimator (PATE). A two-layer
// classifier over mean-pooled proposal features that predicts whether TAG
// would recover the segment; sliding windows it distrusts are kept as
// complementary proposals.

#include <algorithm>
#include <concepts>
#include <map>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "ctap/actionness.hpp"
#include "ctap/adam.hpp"
#include "ctap/checkpoint.hpp"
#include "ctap/core.hpp"
#include "ctap/data_io.hpp"
#include "ctap/features.hpp"
#include "ctap/initial_proposals.hpp"
#include "ctap/nn.hpp"
#include "ctap/training.hpp"

namespace ctap {

struct PateHyper {
  std::size_t d_m = 1024;
  /// Windows with trust below theta_a are collected.
  double theta_a = 0.1;
  /// A gt is "recovered by TAG" when some actionness proposal exceeds this tIoU.
  double theta_c = 0.5;

  void validate() const {
    if (d_m == 0) throw Error(ErrorKind::Config, "pate.d_m: must be >= 1");
    if (!(theta_a > 0.0 && theta_a < 1.0)) throw Error(ErrorKind::Config, "pate.theta_a: must be in (0,1)");
    if (!(theta_c > 0.0 && theta_c < 1.0)) throw Error(ErrorKind::Config, "pate.theta_c: must be in (0,1)");
  }
};

struct PateModel {
  PateHyper hyper;
  nn::Dense hidden;
  nn::Dense output;

  static PateModel zeros(std::size_t d_f, const PateHyper& hyper) {
    return {hyper, nn::Dense::zeros(d_f, hyper.d_m), nn::Dense::zeros(hyper.d_m, 1)};
  }

  static PateModel init(std::size_t d_f, const PateHyper& hyper, Rng& rng) {
    auto hidden = nn::Dense::glorot(d_f, hyper.d_m, rng);
    auto output = nn::Dense::glorot(hyper.d_m, 1, rng);
    return {hyper, std::move(hidden), std::move(output)};
  }

  std::size_t d_f() const { return hidden.d_in(); }
  PateModel zeros_like() const { return zeros(d_f(), hyper); }

  nn::Checkpoint to_checkpoint() const;
  static PateModel from_checkpoint(const nn::Checkpoint& ckpt);
};

template <typename M, typename Fn>
  requires std::same_as<std::remove_const_t<M>, PateModel>
void visit_params(M& model, Fn&& fn) {
  nn::visit_params(model.hidden, "fc1.", fn);
  nn::visit_params(model.output, "fc2.", fn);
}

inline nn::Checkpoint PateModel::to_checkpoint() const {
  nn::Checkpoint ckpt;
  ckpt.kind = "pate";
  ckpt.hyper = {{"d_f", std::to_string(d_f())},
                {"d_m", std::to_string(hyper.d_m)},
                {"theta_a", detail::format_real(hyper.theta_a)},
                {"theta_c", detail::format_real(hyper.theta_c)}};
  store_tensors(*this, ckpt);
  return ckpt;
}

inline PateModel PateModel::from_checkpoint(const nn::Checkpoint& ckpt) {
  require_kind(ckpt, "pate");
  PateHyper hyper;
  hyper.d_m = hyper_size(ckpt, "d_m");
  hyper.theta_a = hyper_real(ckpt, "theta_a");
  hyper.theta_c = hyper_real(ckpt, "theta_c");
  auto model = zeros(hyper_size(ckpt, "d_f"), hyper);
  restore_tensors(ckpt, model);
  return model;
}

/// Forward intermediates for one sample.
struct PateTape {
  std::vector<double> input;
  std::vector<double> hidden_pre;
  std::vector<double> hidden;
  double score = 0.0;
};

inline double pate_score(const PateModel& model, std::span<const double> feature, PateTape* tape = nullptr) {
  auto pre = nn::forward(model.hidden, feature);
  auto act = pre;
  for (auto& v : act) v = std::max(v, 0.0);
  const double s = nn::sigmoid(nn::forward(model.output, act)[0]);
  if (tape) {
    tape->input.assign(feature.begin(), feature.end());
    tape->hidden_pre = std::move(pre);
    tape->hidden = std::move(act);
    tape->score = s;
  }
  return s;
}

inline std::vector<double> pate_scores(const PateModel& model, std::span<const std::vector<double>> features) {
  std::vector<double> out;
  out.reserve(features.size());
  for (const auto& f : features) out.push_back(pate_score(model, f));
  return out;
}

/// Accumulates parameter gradients for dL/ds = grad_score.
inline void pate_backward(const PateModel& model, const PateTape& tape, double grad_score, PateModel& grads) {
  const double grad_logit = grad_score * tape.score * (1.0 - tape.score);
  std::vector<double> grad_hidden;
  const double g[1] = {grad_logit};
  nn::backward(model.output, tape.hidden, g, grads.output, &grad_hidden);
  for (std::size_t i = 0; i < grad_hidden.size(); ++i) {
    if (tape.hidden_pre[i] <= 0.0) grad_hidden[i] = 0.0;
  }
  nn::backward(model.hidden, tape.input, grad_hidden, grads.hidden, nullptr);
}

struct PateLabel {
  GroundTruthSegment gt;
  int label = 0;
};

/// y = 1 iff some actionness proposal has tIoU > theta_c with the gt.
inline std::vector<PateLabel> build_pate_labels(std::span<const GroundTruthSegment> gts,
                                                std::span<const Proposal> actionness_proposals,
                                                double theta_c) {
  const auto table = best_matches(actionness_proposals, gts);
  std::vector<PateLabel> out;
  for (std::size_t g = 0; g < gts.size(); ++g) {
    out.push_back({gts[g], table.gt_best_tiou[g] > theta_c ? 1 : 0});
  }
  return out;
}

struct PateSample {
  std::vector<double> feature;
  double label = 0.0;
};

struct PateTrainResult {
  PateModel model;
  std::vector<double> epoch_loss;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  /// Set when every label has the same class.
  std::string warning;
};

inline PateTrainResult train_pate_on_samples(std::vector<PateSample> samples, std::size_t d_f,
                                             const PateHyper& hyper, const TrainConfig& train) {
  hyper.validate();
  train.validate("pate.train");
  if (samples.empty()) throw Error(ErrorKind::Data, "train_pate: no ground-truth segments to learn from");
  Rng init_rng(derive_seed(train.seed, "pate/init"));
  Rng shuffle_rng(derive_seed(train.seed, "pate/shuffle"));
  PateTrainResult result{PateModel::init(d_f, hyper, init_rng), {}, 0, 0, {}};
  for (const auto& s : samples) (s.label > 0.5 ? result.positives : result.negatives)++;
  if (result.positives == 0 || result.negatives == 0) {
    result.warning = "all PATE labels belong to one class (" + std::to_string(result.positives) + " positive, " +
                     std::to_string(result.negatives) + " negative)";
  }
  auto grads = result.model.zeros_like();
  nn::Adam adam(train.adam());
  const auto slots = param_slots(result.model, grads);
  PateTape tape;
  for (std::size_t epoch = 0; epoch < train.epochs; ++epoch) {
    shuffle_rng.shuffle(samples);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < samples.size(); b += train.batch_size) {
      const std::size_t end = std::min(samples.size(), b + train.batch_size);
      std::vector<double> p;
      std::vector<double> y;
      std::vector<PateTape> tapes;
      for (std::size_t i = b; i < end; ++i) {
        p.push_back(pate_score(result.model, samples[i].feature, &tape));
        y.push_back(samples[i].label);
        tapes.push_back(tape);
      }
      const auto loss = nn::bce_loss(p, y);
      detail::require_finite_loss(loss.value, "pate");
      zero_grads(grads);
      for (std::size_t i = 0; i < tapes.size(); ++i) pate_backward(result.model, tapes[i], loss.grad[i], grads);
      adam.step(slots);
      loss_sum += loss.value;
      ++batches;
    }
    result.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
  }
  return result;
}

/// Labels every training gt against the TAG proposals of its video, then fits
/// PATE on the mean-pooled gt features. tag_by_video must hold the actionness
/// proposals for every video of `data`.
inline PateTrainResult train_pate(const Dataset& data,
                                  const std::map<std::string, std::vector<Proposal>>& tag_by_video,
                                  const PateHyper& hyper, const TrainConfig& train) {
  std::vector<const FeatureSequence*> videos;
  for (const auto& v : data.videos) videos.push_back(&v);
  std::sort(videos.begin(), videos.end(), [](const auto* a, const auto* b) { return a->video_id < b->video_id; });
  if (videos.empty()) throw Error(ErrorKind::Data, "train_pate: empty dataset");
  std::vector<PateSample> samples;
  static const std::vector<Proposal> kNone;
  for (const auto* seq : videos) {
    const auto gts = data.gts_for(seq->video_id);
    const auto it = tag_by_video.find(seq->video_id);
    const auto& props = it == tag_by_video.end() ? kNone : it->second;
    for (const auto& lab : build_pate_labels(gts, props, hyper.theta_c)) {
      samples.push_back({mean_pool_feature(*seq, lab.gt.interval), static_cast<double>(lab.label)});
    }
  }
  return train_pate_on_samples(std::move(samples), videos.front()->d_f, hyper, train);
}

/// Convenience overload that runs actionness scoring and TAG itself.
inline PateTrainResult train_pate(const Dataset& data, const ActionnessModel& actionness, const TagConfig& tag,
                                  const PateHyper& hyper, const TrainConfig& train) {
  std::map<std::string, std::vector<Proposal>> tag_by_video;
  for (const auto& seq : data.videos) {
    const auto scores = score_units(actionness, seq);
    tag_by_video[seq.video_id] = tag_proposals(scores, tag, seq.n_units, seq.video_id);
  }
  return train_pate(data, tag_by_video, hyper, train);
}

/// Keeps the windows with trust p_t < theta_a (recording p_t on them) and
/// returns them together with every actionness proposal. No NMS.
inline std::vector<Proposal> complementary_filter(std::span<const Proposal> windows,
                                                  std::span<const Proposal> actionness_proposals,
                                                  const PateModel& model, const FeatureSequence& seq,
                                                  double theta_a) {
  std::vector<Proposal> out(actionness_proposals.begin(), actionness_proposals.end());
  for (const auto& w : windows) {
    const double trust = pate_score(model, mean_pool_feature(seq, w.interval));
    if (trust < theta_a) {
      Proposal kept = w;
      kept.pate_score = trust;
      out.push_back(std::move(kept));
    }
  }
  return out;
}

}  // namespace ctap
