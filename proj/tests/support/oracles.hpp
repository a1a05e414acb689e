#pragma once

// Independent reference implementations used by the unit tests and the
// acceptance harness. Deliberately naive: quadratic loops, no shared code
// paths with the library beyond tiou() and the data types.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "ctap/ctap.hpp"

namespace ctap::oracle {

/// True when a should be visited before b: score desc, start asc, longer first.
inline bool ranks_before(const Proposal& a, const Proposal& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.interval.start() != b.interval.start()) return a.interval.start() < b.interval.start();
  return a.interval.length() > b.interval.length();
}

/// Repeatedly pulls the best remaining proposal (first in input order among
/// equals) and deletes everything overlapping it at tIoU >= threshold.
inline std::vector<Proposal> reference_nms(std::vector<Proposal> pool, double threshold) {
  std::vector<Proposal> kept;
  while (!pool.empty()) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < pool.size(); ++i) {
      if (ranks_before(pool[i], pool[best])) best = i;
    }
    const Proposal chosen = pool[best];
    kept.push_back(chosen);
    std::vector<Proposal> rest;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (i == best) continue;
      if (tiou(chosen.interval, pool[i].interval) < threshold) rest.push_back(pool[i]);
    }
    pool = std::move(rest);
  }
  return kept;
}

/// Materialises every (tau, eta) grouping, dedups by interval, scores by the
/// mean actionness and runs reference NMS.
inline std::vector<Proposal> reference_tag(const std::vector<double>& scores, const TagConfig& cfg,
                                           std::size_t video_len, const std::string& video_id = {}) {
  std::vector<double> taus;
  for (int i = 0;; ++i) {
    const double tau = cfg.tau_init + i * cfg.tau_step;
    if (tau >= cfg.tau_max) break;
    taus.push_back(tau);
  }
  std::vector<double> etas;
  for (int i = 0;; ++i) {
    const double eta = cfg.eta_min + i * cfg.eta_step;
    if (eta > cfg.eta_max + 1e-9) break;
    etas.push_back(eta);
  }
  std::vector<std::pair<UnitIndex, UnitIndex>> cands;
  const auto n = static_cast<UnitIndex>(scores.size());
  for (double tau : taus) {
    std::vector<std::pair<UnitIndex, UnitIndex>> raw;
    for (UnitIndex u = 0; u < n; ++u) {
      const bool above = scores[static_cast<std::size_t>(u)] > tau;
      const bool prev = u > 0 && scores[static_cast<std::size_t>(u - 1)] > tau;
      if (above && !prev) raw.push_back({u, u + 1});
      if (above && prev) raw.back().second = u + 1;
    }
    for (double eta : etas) {
      const double span = eta * static_cast<double>(video_len);
      std::size_t i = 0;
      while (i < raw.size()) {
        auto group = raw[i];
        std::size_t j = i + 1;
        for (; j < raw.size(); ++j) {
          if (static_cast<double>(raw[j].second - group.first) > span) break;
          group.second = raw[j].second;
        }
        cands.push_back(group);
        i = j;
      }
    }
  }
  std::sort(cands.begin(), cands.end());
  cands.erase(std::unique(cands.begin(), cands.end()), cands.end());
  std::vector<Proposal> pool;
  for (const auto& [s, e] : cands) {
    double sum = 0.0;
    for (auto u = s; u < e; ++u) sum += scores[static_cast<std::size_t>(u)];
    pool.push_back({video_id, Interval(s, e), sum / static_cast<double>(e - s), ProposalSource::Actionness,
                    std::nullopt, false});
  }
  return reference_nms(std::move(pool), cfg.nms_threshold);
}

/// Recall with the top-`an` proposals of every video: sort each video's
/// proposals, cut at an, test each gt against the survivors.
inline double naive_recall(const std::vector<Proposal>& proposals, const std::vector<GroundTruthSegment>& gts,
                           double threshold, std::size_t an) {
  std::map<std::string, std::vector<Proposal>> by_video;
  for (const auto& p : proposals) by_video[p.video_id].push_back(p);
  for (auto& [vid, list] : by_video) {
    std::stable_sort(list.begin(), list.end(), ranks_before);
    if (list.size() > an) list.erase(list.begin() + static_cast<std::ptrdiff_t>(an), list.end());
  }
  std::size_t hit = 0;
  for (const auto& gt : gts) {
    bool found = false;
    for (const auto& p : by_video[gt.video_id]) found = found || tiou(p.interval, gt.interval) >= threshold;
    hit += found ? 1 : 0;
  }
  return static_cast<double>(hit) / static_cast<double>(gts.size());
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checks.

/// Loss value plus a signature of every piecewise-linear branch taken
/// (ReLU signs, L1 residual signs). Coordinates whose +-h perturbation
/// changes the signature sit next to a kink and are excluded.
struct Evaluation {
  double loss = 0.0;
  std::vector<int> branches;
};

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  std::string worst;
};

inline void append_signs(std::vector<int>& out, std::span<const double> values) {
  for (double v : values) out.push_back(v > 0.0 ? 1 : v < 0.0 ? -1 : 0);
}

/// Compares `analytic` (same layout as model) with central differences of
/// eval, restricted to parameters whose name starts with `prefix`.
template <typename Model>
GradCheck finite_difference_check(Model& model, const Model& analytic,
                                  const std::function<Evaluation(const Model&)>& eval,
                                  const std::string& prefix = {}, double h = 1e-5) {
  std::vector<std::pair<std::string, nn::Tensor*>> params;
  visit_params(model, [&](const std::string& name, nn::Tensor& t) { params.emplace_back(name, &t); });
  std::vector<const nn::Tensor*> grads;
  visit_params(analytic, [&](const std::string&, const nn::Tensor& t) { grads.push_back(&t); });

  const auto base = eval(model);
  GradCheck out;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const auto& [name, tensor] = params[p];
    if (name.rfind(prefix, 0) != 0) continue;
    for (std::size_t i = 0; i < tensor->size(); ++i) {
      const double saved = tensor->values[i];
      tensor->values[i] = saved + h;
      const auto plus = eval(model);
      tensor->values[i] = saved - h;
      const auto minus = eval(model);
      tensor->values[i] = saved;
      if (plus.branches != base.branches || minus.branches != base.branches) {
        ++out.skipped;
        continue;
      }
      const double numeric = (plus.loss - minus.loss) / (2.0 * h);
      const double a = grads[p]->values[i];
      const double scale = std::max({std::abs(a), std::abs(numeric), 1e-6});
      const double rel = std::abs(a - numeric) / scale;
      ++out.checked;
      if (rel > out.max_rel_error) {
        out.max_rel_error = rel;
        out.worst = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return out;
}

inline nn::Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& gen) {
  std::normal_distribution<double> normal;
  nn::Matrix m(rows, cols);
  for (auto& v : m.values()) v = normal(gen);
  return m;
}

inline std::size_t pick(std::mt19937_64& gen, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(gen);
}

/// Windowed BCE over a batch of random sequences, the actionness objective.
inline GradCheck actionness_grad_check(std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  ActionnessHyper hyper;
  hyper.d_m = pick(gen, 2, 6);
  hyper.k = 2 * pick(gen, 0, 2) + 1;
  hyper.t_a = pick(gen, 1, 6);
  const std::size_t d_f = pick(gen, 1, 5);
  const std::size_t batch = pick(gen, 1, 4);
  Rng rng(seed);
  auto model = ActionnessModel::init(d_f, hyper, rng);
  std::vector<nn::Matrix> xs;
  std::vector<std::vector<double>> ys;
  std::bernoulli_distribution coin;
  for (std::size_t b = 0; b < batch; ++b) {
    xs.push_back(random_matrix(hyper.t_a, d_f, gen));
    std::vector<double> y(hyper.t_a);
    for (auto& v : y) v = coin(gen) ? 1.0 : 0.0;
    ys.push_back(std::move(y));
  }
  auto grads = model.zeros_like();
  nn::TConvTape tape;
  for (std::size_t b = 0; b < batch; ++b) {
    const auto p = nn::forward(model.net, xs[b], nn::Head::Sigmoid, &tape);
    const auto loss = nn::bce_loss(p.values(), ys[b]);
    nn::Matrix g(hyper.t_a, 1);
    for (std::size_t t = 0; t < hyper.t_a; ++t) g(t, 0) = loss.grad[t] / static_cast<double>(batch);
    nn::backward(model.net, tape, g, grads.net);
  }
  std::function<Evaluation(const ActionnessModel&)> eval = [&](const ActionnessModel& m) {
    Evaluation e;
    nn::TConvTape t;
    for (std::size_t b = 0; b < batch; ++b) {
      const auto p = nn::forward(m.net, xs[b], nn::Head::Sigmoid, &t);
      e.loss += nn::bce_loss(p.values(), ys[b]).value / static_cast<double>(batch);
      append_signs(e.branches, t.hidden_pre.values());
    }
    return e;
  };
  return finite_difference_check(model, grads, eval);
}

/// BCE of PATE trust scores on random pooled features.
inline GradCheck pate_grad_check(std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  PateHyper hyper;
  hyper.d_m = pick(gen, 2, 8);
  const std::size_t d_f = pick(gen, 1, 6);
  const std::size_t batch = pick(gen, 1, 6);
  Rng rng(seed);
  auto model = PateModel::init(d_f, hyper, rng);
  std::vector<std::vector<double>> xs;
  std::vector<double> ys;
  std::normal_distribution<double> normal;
  std::bernoulli_distribution coin;
  for (std::size_t b = 0; b < batch; ++b) {
    std::vector<double> x(d_f);
    for (auto& v : x) v = normal(gen);
    xs.push_back(std::move(x));
    ys.push_back(coin(gen) ? 1.0 : 0.0);
  }
  auto grads = model.zeros_like();
  {
    std::vector<double> p;
    std::vector<PateTape> tapes(batch);
    for (std::size_t b = 0; b < batch; ++b) p.push_back(pate_score(model, xs[b], &tapes[b]));
    const auto loss = nn::bce_loss(p, ys);
    for (std::size_t b = 0; b < batch; ++b) pate_backward(model, tapes[b], loss.grad[b], grads);
  }
  std::function<Evaluation(const PateModel&)> eval = [&](const PateModel& m) {
    Evaluation e;
    std::vector<double> p;
    PateTape t;
    for (std::size_t b = 0; b < batch; ++b) {
      p.push_back(pate_score(m, xs[b], &t));
      append_signs(e.branches, t.hidden_pre);
    }
    e.loss = nn::bce_loss(p, ys).value;
    return e;
  };
  return finite_difference_check(model, grads, eval);
}

struct TarGradChecks {
  GradCheck start;
  GradCheck proposal;
  GradCheck end;
};

/// Joint ranking + boundary objective on random TAR inputs; each sub-network
/// is checked on its own parameters.
inline TarGradChecks tar_grad_check(std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  TarHyper hyper;
  hyper.d_m = pick(gen, 2, 6);
  hyper.k = 2 * pick(gen, 0, 2) + 1;
  hyper.n_ctl = pick(gen, 1, 5);
  hyper.n_ctx = 2 * pick(gen, 1, 3);
  hyper.lambda_reg = std::uniform_real_distribution<double>(0.5, 2.0)(gen);
  const std::size_t d_f = pick(gen, 1, 5);
  const std::size_t batch = pick(gen, 2, 5);
  Rng rng(seed);
  auto model = TarModel::init(d_f, hyper, rng);
  std::vector<TarInputs> xs;
  std::vector<double> labels;
  std::vector<double> targets;
  std::vector<int> positive;
  std::normal_distribution<double> offset(0.0, 3.0);
  for (std::size_t b = 0; b < batch; ++b) {
    xs.push_back({random_matrix(hyper.n_ctx, d_f, gen), random_matrix(hyper.n_ctl, d_f, gen),
                  random_matrix(hyper.n_ctx, d_f, gen)});
    const int pos = b == 0 ? 1 : static_cast<int>(pick(gen, 0, 1));
    positive.push_back(pos);
    labels.push_back(pos);
    targets.push_back(offset(gen));
    targets.push_back(offset(gen));
  }
  auto objective = [&](const TarModel& m, std::vector<TarTape>* tapes, Evaluation* e) {
    std::vector<double> probs;
    std::vector<double> pred;
    TarTape tape;
    for (std::size_t b = 0; b < batch; ++b) {
      const auto out = tar_forward(m, xs[b], &tape);
      probs.push_back(out.probability);
      pred.push_back(out.start_offset);
      pred.push_back(out.end_offset);
      if (tapes) tapes->push_back(tape);
      if (e) {
        append_signs(e->branches, tape.start.hidden_pre.values());
        append_signs(e->branches, tape.proposal.hidden_pre.values());
        append_signs(e->branches, tape.end.hidden_pre.values());
      }
    }
    const auto rank = nn::bce_loss(probs, labels);
    const auto reg = nn::l1_loss(pred, targets, positive);
    if (e) {
      e->loss = rank.value + hyper.lambda_reg * reg.value;
      for (std::size_t i = 0; i < pred.size(); ++i) {
        e->branches.push_back(positive[i / 2] ? (pred[i] > targets[i] ? 1 : -1) : 0);
      }
    }
    return std::pair{rank, reg};
  };
  auto grads = model.zeros_like();
  std::vector<TarTape> tapes;
  const auto [rank, reg] = objective(model, &tapes, nullptr);
  for (std::size_t b = 0; b < batch; ++b) {
    TarOutputGrad g{hyper.lambda_reg * reg.grad[2 * b], rank.grad[b], hyper.lambda_reg * reg.grad[2 * b + 1]};
    tar_backward(model, tapes[b], g, grads);
  }
  std::function<Evaluation(const TarModel&)> eval = [&](const TarModel& m) {
    Evaluation e;
    objective(m, nullptr, &e);
    return e;
  };
  return {finite_difference_check(model, grads, eval, "start."),
          finite_difference_check(model, grads, eval, "proposal."),
          finite_difference_check(model, grads, eval, "end.")};
}

}  // namespace ctap::oracle
