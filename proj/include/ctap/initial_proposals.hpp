#pragma once

// The two initial proposal sources: watershed-style temporal action grouping
// (TAG) over actionness scores, and multi-scale sliding windows.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "ctap/core.hpp"
#include "ctap/error.hpp"

namespace ctap {

struct TagConfig {
  double tau_init = 0.085;
  double tau_step = 0.085;
  /// Exclusive upper bound of the tau sweep.
  double tau_max = 1.0;
  double eta_min = 0.025;
  /// Inclusive upper bound of the eta sweep.
  double eta_max = 1.0;
  double eta_step = 0.025;
  double nms_threshold = 0.95;

  void validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorKind::Config, m); };
    if (!(tau_init > 0.0 && tau_init <= tau_max && tau_max <= 1.0)) {
      fail("tag.tau_init/tau_max: need 0 < tau_init <= tau_max <= 1");
    }
    if (!(eta_min > 0.0 && eta_min <= eta_max && eta_max <= 1.0)) {
      fail("tag.eta_min/eta_max: need 0 < eta_min <= eta_max <= 1");
    }
    if (!(tau_step > 0.0)) fail("tag.tau_step: must be > 0");
    if (!(eta_step > 0.0)) fail("tag.eta_step: must be > 0");
    if (!(nms_threshold >= 0.0 && nms_threshold <= 1.0)) fail("tag.nms_threshold: must be in [0,1]");
  }

  std::vector<double> taus() const {
    std::vector<double> out;
    for (std::size_t i = 0;; ++i) {
      const double tau = tau_init + static_cast<double>(i) * tau_step;
      if (tau >= tau_max) break;
      out.push_back(tau);
    }
    return out;
  }

  std::vector<double> etas() const {
    std::vector<double> out;
    for (std::size_t i = 0;; ++i) {
      const double eta = eta_min + static_cast<double>(i) * eta_step;
      if (eta > eta_max + 1e-9) break;
      out.push_back(eta);
    }
    return out;
  }
};

struct WindowConfig {
  std::vector<std::size_t> lengths = {16, 32, 64, 128, 256, 512};
  /// tIoU between consecutive windows of one length.
  double overlap_tiou = 0.75;

  void validate() const {
    if (lengths.empty()) throw Error(ErrorKind::Config, "windows.lengths: must be non-empty");
    for (std::size_t i = 0; i < lengths.size(); ++i) {
      if (lengths[i] == 0 || (i > 0 && lengths[i] <= lengths[i - 1])) {
        throw Error(ErrorKind::Config, "windows.lengths: must be positive and strictly increasing");
      }
    }
    if (!(overlap_tiou >= 0.0 && overlap_tiou < 1.0)) {
      throw Error(ErrorKind::Config, "windows.overlap_tiou: must be in [0,1)");
    }
  }

  /// Stride s with tIoU([0,L),[s,L+s)) = (L-s)/(L+s) = overlap, floored, >= 1.
  std::size_t stride(std::size_t length) const {
    const double s = static_cast<double>(length) * (1.0 - overlap_tiou) / (1.0 + overlap_tiou);
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(s)));
  }
};

/// Maximal runs of units with score > tau, in temporal order.
inline std::vector<Interval> threshold_regions(std::span<const double> scores, double tau) {
  std::vector<Interval> out;
  std::size_t u = 0;
  while (u < scores.size()) {
    if (scores[u] > tau) {
      const std::size_t start = u;
      while (u < scores.size() && scores[u] > tau) ++u;
      out.emplace_back(static_cast<UnitIndex>(start), static_cast<UnitIndex>(u));
    } else {
      ++u;
    }
  }
  return out;
}

/// Greedy left-to-right merge of sorted, disjoint raw regions: each group
/// absorbs neighbours while its span stays <= eta * video_len.
inline std::vector<Interval> group_regions(std::span<const Interval> raw, double eta, std::size_t video_len) {
  const double max_span = eta * static_cast<double>(video_len);
  std::vector<Interval> out;
  std::size_t i = 0;
  while (i < raw.size()) {
    const UnitIndex start = raw[i].start();
    UnitIndex end = raw[i].end();
    std::size_t j = i + 1;
    while (j < raw.size() && static_cast<double>(raw[j].end() - start) <= max_span) {
      end = raw[j].end();
      ++j;
    }
    out.emplace_back(start, end);
    i = j;
  }
  return out;
}

/// Mean of the unit scores inside `interval`, summed left to right.
inline double mean_score(std::span<const double> scores, const Interval& interval) {
  double sum = 0.0;
  for (auto u = interval.start(); u < interval.end(); ++u) sum += scores[static_cast<std::size_t>(u)];
  return sum / static_cast<double>(interval.length());
}

/// TAG over the full (tau, eta) grid, pooled, deduplicated and NMS-filtered.
inline std::vector<Proposal> tag_proposals(std::span<const double> scores, const TagConfig& cfg,
                                           std::size_t video_len, const std::string& video_id = {}) {
  cfg.validate();
  if (video_len < scores.size()) throw Error(ErrorKind::InvalidArgument, "video_len shorter than score vector");
  // One entry per distinct interval; the score depends only on the interval.
  std::set<Interval> candidates;
  const auto etas = cfg.etas();
  for (double tau : cfg.taus()) {
    const auto raw = threshold_regions(scores, tau);
    if (raw.empty()) continue;
    for (double eta : etas) {
      for (const auto& iv : group_regions(raw, eta, video_len)) candidates.insert(iv);
    }
  }
  std::vector<Proposal> pool;
  pool.reserve(candidates.size());
  for (const auto& iv : candidates) {
    pool.push_back({video_id, iv, mean_score(scores, iv), ProposalSource::Actionness, std::nullopt, false});
  }
  return nms(pool, cfg.nms_threshold);
}

/// Multi-scale windows. Windows at least as long as the video collapse to a
/// single [0, n_units); otherwise a final window is clamped to the video end.
inline std::vector<Proposal> sliding_windows(std::size_t n_units, const WindowConfig& cfg,
                                             const std::string& video_id = {}) {
  cfg.validate();
  if (n_units == 0) throw Error(ErrorKind::InvalidArgument, "sliding_windows needs n_units >= 1");
  std::vector<Proposal> out;
  std::set<Interval> seen;
  auto emit = [&](std::size_t start, std::size_t end) {
    Interval iv(static_cast<UnitIndex>(start), static_cast<UnitIndex>(end));
    if (seen.insert(iv).second) {
      out.push_back({video_id, iv, 0.0, ProposalSource::SlidingWindow, std::nullopt, false});
    }
  };
  for (std::size_t length : cfg.lengths) {
    if (length >= n_units) {
      emit(0, n_units);
      continue;
    }
    const std::size_t stride = cfg.stride(length);
    std::size_t start = 0;
    std::size_t last_end = 0;
    for (; start + length <= n_units; start += stride) {
      emit(start, start + length);
      last_end = start + length;
    }
    if (last_end < n_units) emit(n_units - length, n_units);
  }
  return out;
}

}  // namespace ctap
