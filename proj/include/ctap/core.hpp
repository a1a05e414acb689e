#pragma once

// Interval geometry shared by every stage: temporal IoU, greedy NMS and
// proposal/ground-truth matching. All geometry is in unit indices.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ctap/error.hpp"

namespace ctap {

using UnitIndex = std::int64_t;

/// Half-open span [start, end) of unit indices, never empty.
class Interval {
 public:
  Interval(UnitIndex start, UnitIndex end) : start_(start), end_(end) {
    if (start < 0 || end <= start) {
      throw Error(ErrorKind::InvalidArgument,
                  "invalid interval [" + std::to_string(start) + ", " +
                      std::to_string(end) + ")");
    }
  }

  UnitIndex start() const noexcept { return start_; }
  UnitIndex end() const noexcept { return end_; }
  UnitIndex length() const noexcept { return end_ - start_; }

  bool contains(UnitIndex unit) const noexcept {
    return unit >= start_ && unit < end_;
  }

  friend bool operator==(const Interval&, const Interval&) = default;
  friend auto operator<=>(const Interval&, const Interval&) = default;

 private:
  UnitIndex start_;
  UnitIndex end_;
};

enum class ProposalSource { Actionness, SlidingWindow };

inline const char* to_string(ProposalSource source) {
  return source == ProposalSource::Actionness ? "actionness" : "sliding_window";
}

struct Proposal {
  std::string video_id;
  Interval interval;
  double score = 0.0;
  ProposalSource source = ProposalSource::Actionness;
  std::optional<double> pate_score;
  bool adjusted = false;

  friend bool operator==(const Proposal&, const Proposal&) = default;
};

struct GroundTruthSegment {
  std::string video_id;
  Interval interval;
  std::optional<int> label;

  friend bool operator==(const GroundTruthSegment&,
                         const GroundTruthSegment&) = default;
};

inline double tiou(const Interval& a, const Interval& b) noexcept {
  const UnitIndex inter =
      std::min(a.end(), b.end()) - std::max(a.start(), b.start());
  if (inter <= 0) return 0.0;
  const UnitIndex uni = a.length() + b.length() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

namespace detail {

/// Score-descending order with the deterministic tie-break used by NMS:
/// earlier start, then longer length, then input position.
inline std::vector<std::size_t> nms_order(std::span<const Proposal> proposals) {
  std::vector<std::size_t> order(proposals.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t lhs, std::size_t rhs) {
                     const Proposal& a = proposals[lhs];
                     const Proposal& b = proposals[rhs];
                     if (a.score != b.score) return a.score > b.score;
                     if (a.interval.start() != b.interval.start())
                       return a.interval.start() < b.interval.start();
                     return a.interval.length() > b.interval.length();
                   });
  return order;
}

template <typename Range>
void require_single_video(const Range& items, const char* what) {
  if (items.empty()) return;
  const std::string& first = items.front().video_id;
  for (const auto& item : items) {
    if (item.video_id != first) throw Error(ErrorKind::InvalidArgument, what);
  }
}

}  // namespace detail

/// Greedy NMS: keep the best remaining proposal, drop everything with
/// tIoU >= threshold against it, repeat. Output is score-descending.
inline std::vector<Proposal> nms(std::span<const Proposal> proposals,
                                 double threshold) {
  detail::require_single_video(proposals, "nms requires single video");
  const auto order = detail::nms_order(proposals);
  std::vector<bool> suppressed(order.size(), false);
  std::vector<Proposal> kept;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (suppressed[i]) continue;
    const Proposal& best = proposals[order[i]];
    kept.push_back(best);
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      if (!suppressed[j] &&
          tiou(best.interval, proposals[order[j]].interval) >= threshold) {
        suppressed[j] = true;
      }
    }
  }
  return kept;
}

struct MatchTable {
  std::vector<double> gt_best_tiou;
  std::vector<double> proposal_best_tiou;
  /// Argmax ground-truth index per proposal; nullopt when there are no gts.
  std::vector<std::optional<std::size_t>> proposal_best_gt;
};

inline MatchTable best_matches(std::span<const Proposal> proposals,
                               std::span<const GroundTruthSegment> gts) {
  detail::require_single_video(proposals, "best_matches requires single video");
  detail::require_single_video(gts, "best_matches requires single video");
  if (!proposals.empty() && !gts.empty() &&
      proposals.front().video_id != gts.front().video_id) {
    throw Error(ErrorKind::InvalidArgument, "best_matches requires single video");
  }
  MatchTable table;
  table.gt_best_tiou.assign(gts.size(), 0.0);
  table.proposal_best_tiou.assign(proposals.size(), 0.0);
  table.proposal_best_gt.assign(proposals.size(), std::nullopt);
  for (std::size_t p = 0; p < proposals.size(); ++p) {
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double overlap = tiou(proposals[p].interval, gts[g].interval);
      table.gt_best_tiou[g] = std::max(table.gt_best_tiou[g], overlap);
      if (!table.proposal_best_gt[p] || overlap > table.proposal_best_tiou[p]) {
        table.proposal_best_tiou[p] = overlap;
        table.proposal_best_gt[p] = g;
      }
    }
  }
  return table;
}

}  // namespace ctap
