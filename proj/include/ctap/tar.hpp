#pragma once

// Temporal convolutional adjustment and ranking (TAR): three independent
// two-layer temporal conv stacks over start-boundary units, proposal units
// and end-boundary units, producing (o_s, p_c, o_e).

#include <algorithm>
#include <cmath>
#include <concepts>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "ctap/adam.hpp"
#include "ctap/checkpoint.hpp"
#include "ctap/core.hpp"
#include "ctap/data_io.hpp"
#include "ctap/features.hpp"
#include "ctap/initial_proposals.hpp"
#include "ctap/nn.hpp"
#include "ctap/training.hpp"

namespace ctap {

struct TarHyper {
  std::size_t n_ctl = 4;
  std::size_t n_ctx = 4;
  std::size_t d_m = 1024;
  std::size_t k = 3;
  /// Weight of the boundary regression loss against the ranking loss.
  double lambda_reg = 1.0;
  /// Negatives kept per positive in each epoch.
  double negative_ratio = 1.0;

  void validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorKind::Config, m); };
    if (n_ctl == 0) fail("tar.n_ctl: must be >= 1");
    if (n_ctx < 2 || n_ctx % 2 != 0) fail("tar.n_ctx: must be even and >= 2");
    if (d_m == 0) fail("tar.d_m: must be >= 1");
    if (k == 0 || k % 2 == 0) fail("tar.k: must be odd");
    if (!(lambda_reg >= 0.0)) fail("tar.lambda_reg: must be >= 0");
    if (!(negative_ratio >= 0.0)) fail("tar.negative_ratio: must be >= 0");
  }
};

struct TarModel {
  TarHyper hyper;
  nn::TConvStack start;
  nn::TConvStack proposal;
  nn::TConvStack end;

  static TarModel zeros(std::size_t d_f, const TarHyper& hyper) {
    hyper.validate();
    return {hyper, nn::TConvStack::zeros(d_f, hyper.d_m, 1, hyper.k),
            nn::TConvStack::zeros(d_f, hyper.d_m, 1, hyper.k), nn::TConvStack::zeros(d_f, hyper.d_m, 1, hyper.k)};
  }

  static TarModel init(std::size_t d_f, const TarHyper& hyper, Rng& rng) {
    hyper.validate();
    auto s = nn::TConvStack::glorot(d_f, hyper.d_m, 1, hyper.k, rng);
    auto p = nn::TConvStack::glorot(d_f, hyper.d_m, 1, hyper.k, rng);
    auto e = nn::TConvStack::glorot(d_f, hyper.d_m, 1, hyper.k, rng);
    return {hyper, std::move(s), std::move(p), std::move(e)};
  }

  std::size_t d_f() const { return proposal.first.d_in(); }
  TarModel zeros_like() const { return zeros(d_f(), hyper); }

  nn::Checkpoint to_checkpoint() const;
  static TarModel from_checkpoint(const nn::Checkpoint& ckpt);
};

template <typename M, typename Fn>
  requires std::same_as<std::remove_const_t<M>, TarModel>
void visit_params(M& model, Fn&& fn) {
  nn::visit_params(model.start, "start.", fn);
  nn::visit_params(model.proposal, "proposal.", fn);
  nn::visit_params(model.end, "end.", fn);
}

inline nn::Checkpoint TarModel::to_checkpoint() const {
  nn::Checkpoint ckpt;
  ckpt.kind = "tar";
  ckpt.hyper = {{"d_f", std::to_string(d_f())},
                {"d_m", std::to_string(hyper.d_m)},
                {"k", std::to_string(hyper.k)},
                {"n_ctl", std::to_string(hyper.n_ctl)},
                {"n_ctx", std::to_string(hyper.n_ctx)},
                {"lambda_reg", detail::format_real(hyper.lambda_reg)},
                {"negative_ratio", detail::format_real(hyper.negative_ratio)}};
  store_tensors(*this, ckpt);
  return ckpt;
}

inline TarModel TarModel::from_checkpoint(const nn::Checkpoint& ckpt) {
  require_kind(ckpt, "tar");
  TarHyper hyper;
  hyper.d_m = hyper_size(ckpt, "d_m");
  hyper.k = hyper_size(ckpt, "k");
  hyper.n_ctl = hyper_size(ckpt, "n_ctl");
  hyper.n_ctx = hyper_size(ckpt, "n_ctx");
  hyper.lambda_reg = hyper_real(ckpt, "lambda_reg");
  hyper.negative_ratio = hyper_real(ckpt, "negative_ratio");
  auto model = zeros(hyper_size(ckpt, "d_f"), hyper);
  restore_tensors(ckpt, model);
  return model;
}

// ---------------------------------------------------------------------------
// Unit sampling

struct TarUnits {
  std::vector<std::size_t> start;
  std::vector<std::size_t> center;
  std::vector<std::size_t> end;
};

/// Interior: n_ctl indices round(u_s + (i + 0.5) * len / n_ctl - 0.5).
/// Boundaries: n_ctx consecutive units centred on u_s and on u_e. All
/// indices are clamped into [0, n_units - 1].
inline TarUnits sample_units(std::size_t n_units, const Interval& interval, std::size_t n_ctl, std::size_t n_ctx) {
  if (n_units == 0) throw Error(ErrorKind::InvalidArgument, "sample_units needs n_units >= 1");
  const auto last = static_cast<UnitIndex>(n_units) - 1;
  auto clamp_unit = [&](UnitIndex u) { return static_cast<std::size_t>(std::clamp<UnitIndex>(u, 0, last)); };
  TarUnits out;
  const double len = static_cast<double>(interval.length());
  for (std::size_t i = 0; i < n_ctl; ++i) {
    const double pos = static_cast<double>(interval.start()) +
                       (static_cast<double>(i) + 0.5) * len / static_cast<double>(n_ctl) - 0.5;
    auto u = static_cast<UnitIndex>(std::llround(pos));
    u = std::clamp<UnitIndex>(u, interval.start(), interval.end() - 1);
    out.center.push_back(clamp_unit(u));
  }
  const auto half = static_cast<UnitIndex>(n_ctx / 2);
  for (UnitIndex j = 0; j < static_cast<UnitIndex>(n_ctx); ++j) {
    out.start.push_back(clamp_unit(interval.start() - half + j));
    out.end.push_back(clamp_unit(interval.end() - half + j));
  }
  return out;
}

struct TarInputs {
  nn::Matrix start;
  nn::Matrix center;
  nn::Matrix end;
};

inline TarInputs gather_tar_inputs(const FeatureSequence& seq, const Interval& interval, const TarHyper& hyper) {
  const auto units = sample_units(seq.n_units, interval, hyper.n_ctl, hyper.n_ctx);
  return {gather_rows(seq, units.start), gather_rows(seq, units.center), gather_rows(seq, units.end)};
}

// ---------------------------------------------------------------------------
// Forward / backward

struct TarOutput {
  double start_offset = 0.0;
  double probability = 0.5;
  double end_offset = 0.0;
};

struct TarTape {
  nn::TConvTape start;
  nn::TConvTape proposal;
  nn::TConvTape end;
  TarOutput output;
};

namespace detail {

inline double temporal_mean(const nn::Matrix& m) {
  double sum = 0.0;
  for (double v : m.values()) sum += v;
  return sum / static_cast<double>(m.rows());
}

}  // namespace detail

/// Each stack's per-step outputs are averaged over time; p_c applies the
/// sigmoid after averaging. Offsets are raw unit counts.
inline TarOutput tar_forward(const TarModel& model, const nn::Matrix& x_start, const nn::Matrix& x_center,
                             const nn::Matrix& x_end, TarTape* tape = nullptr) {
  TarOutput out;
  out.start_offset =
      detail::temporal_mean(nn::forward(model.start, x_start, nn::Head::Linear, tape ? &tape->start : nullptr));
  out.probability = nn::sigmoid(
      detail::temporal_mean(nn::forward(model.proposal, x_center, nn::Head::Linear, tape ? &tape->proposal : nullptr)));
  out.end_offset =
      detail::temporal_mean(nn::forward(model.end, x_end, nn::Head::Linear, tape ? &tape->end : nullptr));
  if (tape) tape->output = out;
  return out;
}

inline TarOutput tar_forward(const TarModel& model, const TarInputs& in, TarTape* tape = nullptr) {
  return tar_forward(model, in.start, in.center, in.end, tape);
}

/// Gradients of the loss w.r.t. the three scalar outputs.
struct TarOutputGrad {
  double start_offset = 0.0;
  double probability = 0.0;
  double end_offset = 0.0;
};

inline void tar_backward(const TarModel& model, const TarTape& tape, const TarOutputGrad& grad, TarModel& grads) {
  auto spread = [](const nn::TConvTape& t, double g) {
    nn::Matrix m(t.output.rows(), 1, g / static_cast<double>(t.output.rows()));
    return m;
  };
  if (grad.start_offset != 0.0) {
    nn::backward(model.start, tape.start, spread(tape.start, grad.start_offset), grads.start);
  }
  if (grad.probability != 0.0) {
    const double p = tape.output.probability;
    nn::backward(model.proposal, tape.proposal, spread(tape.proposal, grad.probability * p * (1.0 - p)),
                 grads.proposal);
  }
  if (grad.end_offset != 0.0) {
    nn::backward(model.end, tape.end, spread(tape.end, grad.end_offset), grads.end);
  }
}

// ---------------------------------------------------------------------------
// Training samples

struct TarSample {
  Interval interval;
  int label = 0;
  /// gt_start - window_start and gt_end - window_end; set only for positives.
  std::optional<double> start_offset;
  std::optional<double> end_offset;
  std::optional<std::size_t> gt_index;
};

/// A window is positive if it is some gt's best-overlapping window (ties to
/// the earliest start) or if it has tIoU > 0.5 with any gt. Positives regress
/// towards their best-overlapping gt, or towards the gt that selected them
/// when that overlap is <= 0.5.
inline std::vector<TarSample> assign_training_samples(std::span<const Interval> windows,
                                                      std::span<const Interval> gts) {
  std::vector<TarSample> out;
  out.reserve(windows.size());
  for (const auto& w : windows) out.push_back({w, 0, std::nullopt, std::nullopt, std::nullopt});

  std::vector<double> best_tiou(windows.size(), 0.0);
  std::vector<std::optional<std::size_t>> best_gt(windows.size());
  for (std::size_t w = 0; w < windows.size(); ++w) {
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double t = tiou(windows[w], gts[g]);
      if (t > best_tiou[w]) {
        best_tiou[w] = t;
        best_gt[w] = g;
      }
    }
  }
  auto make_positive = [&](std::size_t w, std::size_t g) {
    out[w].label = 1;
    out[w].gt_index = g;
    out[w].start_offset = static_cast<double>(gts[g].start() - windows[w].start());
    out[w].end_offset = static_cast<double>(gts[g].end() - windows[w].end());
  };
  for (std::size_t g = 0; g < gts.size(); ++g) {
    std::optional<std::size_t> arg;
    double best = 0.0;
    for (std::size_t w = 0; w < windows.size(); ++w) {
      const double t = tiou(windows[w], gts[g]);
      if (t <= 0.0) continue;
      if (!arg || t > best || (t == best && windows[w].start() < windows[*arg].start())) {
        arg = w;
        best = t;
      }
    }
    if (arg && out[*arg].label == 0) make_positive(*arg, g);
  }
  for (std::size_t w = 0; w < windows.size(); ++w) {
    if (best_tiou[w] > 0.5) make_positive(w, *best_gt[w]);
  }
  return out;
}

struct TarTrainResult {
  TarModel model;
  std::vector<double> epoch_loss;
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

struct TarTrainingItem {
  TarInputs inputs;
  double label = 0.0;
  double start_target = 0.0;
  double end_target = 0.0;
};

/// Per-batch loss: mean cross-entropy on p_c plus lambda_reg times the L1
/// boundary loss over the batch's positives. Negatives are resampled to
/// negative_ratio per positive every epoch.
inline TarTrainResult train_tar(const Dataset& data, const TarHyper& hyper, const WindowConfig& windows,
                                const TrainConfig& train) {
  hyper.validate();
  train.validate("tar.train");
  if (data.videos.empty()) throw Error(ErrorKind::Data, "train_tar: empty dataset");
  std::vector<const FeatureSequence*> videos;
  for (const auto& v : data.videos) videos.push_back(&v);
  std::sort(videos.begin(), videos.end(), [](const auto* a, const auto* b) { return a->video_id < b->video_id; });

  std::vector<TarTrainingItem> positives;
  std::vector<TarTrainingItem> negatives;
  for (const auto* seq : videos) {
    std::vector<Interval> gt_intervals;
    for (const auto& gt : data.gts_for(seq->video_id)) gt_intervals.push_back(gt.interval);
    std::vector<Interval> window_intervals;
    for (const auto& w : sliding_windows(seq->n_units, windows, seq->video_id)) window_intervals.push_back(w.interval);
    for (const auto& s : assign_training_samples(window_intervals, gt_intervals)) {
      TarTrainingItem item{gather_tar_inputs(*seq, s.interval, hyper), static_cast<double>(s.label),
                           s.start_offset.value_or(0.0), s.end_offset.value_or(0.0)};
      (s.label == 1 ? positives : negatives).push_back(std::move(item));
    }
  }
  if (positives.empty()) throw Error(ErrorKind::Data, "train_tar: no positive training windows");

  Rng init_rng(derive_seed(train.seed, "tar/init"));
  Rng sample_rng(derive_seed(train.seed, "tar/sample"));
  TarTrainResult result{TarModel::init(videos.front()->d_f, hyper, init_rng), {}, positives.size(), negatives.size()};
  auto grads = result.model.zeros_like();
  nn::Adam adam(train.adam());
  const auto slots = param_slots(result.model, grads);

  const auto n_neg = std::min(negatives.size(), static_cast<std::size_t>(std::llround(
                                                    hyper.negative_ratio * static_cast<double>(positives.size()))));
  std::vector<std::size_t> neg_order(negatives.size());
  for (std::size_t i = 0; i < neg_order.size(); ++i) neg_order[i] = i;

  struct Ref {
    bool positive;
    std::size_t index;
  };
  TarTape tape;
  for (std::size_t epoch = 0; epoch < train.epochs; ++epoch) {
    sample_rng.shuffle(neg_order);
    std::vector<Ref> epoch_items;
    for (std::size_t i = 0; i < positives.size(); ++i) epoch_items.push_back({true, i});
    for (std::size_t i = 0; i < n_neg; ++i) epoch_items.push_back({false, neg_order[i]});
    sample_rng.shuffle(epoch_items);

    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < epoch_items.size(); b += train.batch_size) {
      const std::size_t end = std::min(epoch_items.size(), b + train.batch_size);
      std::vector<TarTape> tapes;
      std::vector<double> probs;
      std::vector<double> labels;
      std::vector<double> pred;
      std::vector<double> target;
      std::vector<int> is_positive;
      for (std::size_t i = b; i < end; ++i) {
        const auto& item = epoch_items[i].positive ? positives[epoch_items[i].index] : negatives[epoch_items[i].index];
        const auto out = tar_forward(result.model, item.inputs, &tape);
        tapes.push_back(tape);
        probs.push_back(out.probability);
        labels.push_back(item.label);
        pred.push_back(out.start_offset);
        pred.push_back(out.end_offset);
        target.push_back(item.start_target);
        target.push_back(item.end_target);
        is_positive.push_back(epoch_items[i].positive ? 1 : 0);
      }
      const auto rank = nn::bce_loss(probs, labels);
      const auto reg = nn::l1_loss(pred, target, is_positive);
      const double loss = rank.value + hyper.lambda_reg * reg.value;
      detail::require_finite_loss(loss, "tar");
      zero_grads(grads);
      for (std::size_t i = 0; i < tapes.size(); ++i) {
        TarOutputGrad g{hyper.lambda_reg * reg.grad[2 * i], rank.grad[i], hyper.lambda_reg * reg.grad[2 * i + 1]};
        tar_backward(result.model, tapes[i], g, grads);
      }
      adam.step(slots);
      loss_sum += loss;
      ++batches;
    }
    result.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Inference

struct ApplyTarOptions {
  /// When false, only scores are replaced (ranking-only ablation).
  bool adjust_boundaries = true;
  std::optional<double> final_nms;
};

/// Applies (o_s, p_c, o_e) to every proposal. Boundaries move by the rounded
/// offsets and are clamped into the video with length >= 1. Window proposals
/// carrying a trust score get p_t * p_c; everything else gets p_c. Output is
/// score-descending.
inline std::vector<Proposal> apply_tar(const TarModel& model, std::span<const Proposal> proposals,
                                       const FeatureSequence& seq, const ApplyTarOptions& options = {}) {
  if (seq.d_f != model.d_f()) throw Error(ErrorKind::InvalidArgument, "tar model d_f does not match features");
  const auto n = static_cast<UnitIndex>(seq.n_units);
  std::vector<Proposal> out;
  out.reserve(proposals.size());
  for (const auto& p : proposals) {
    const auto res = tar_forward(model, gather_tar_inputs(seq, p.interval, model.hyper));
    Proposal scored = p;
    if (options.adjust_boundaries) {
      UnitIndex start = std::llround(static_cast<double>(p.interval.start()) + res.start_offset);
      UnitIndex end = std::llround(static_cast<double>(p.interval.end()) + res.end_offset);
      start = std::clamp<UnitIndex>(start, 0, n - 1);
      end = std::clamp<UnitIndex>(end, 0, n);
      if (end <= start) end = start + 1;
      scored.interval = Interval(start, end);
      scored.adjusted = true;
    }
    scored.score = p.source == ProposalSource::SlidingWindow && p.pate_score ? *p.pate_score * res.probability
                                                                              : res.probability;
    out.push_back(std::move(scored));
  }
  if (options.final_nms) return nms(out, *options.final_nms);
  std::vector<Proposal> sorted;
  sorted.reserve(out.size());
  for (auto i : ::ctap::detail::nms_order(out)) sorted.push_back(out[i]);
  return sorted;
}

}  // namespace ctap
