#pragma once

// Proposal recall metrics: recall@(tIoU, AN), average recall over a tIoU
// grid, AR-AN curves with their AUC, and recall-vs-tIoU at a fixed AN.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ctap/core.hpp"
#include "ctap/data_io.hpp"
#include "ctap/error.hpp"

namespace ctap {

/// How the AN budget is spent: top-AN per video, or the top AN * n_videos
/// proposals pooled across the dataset (n_videos = videos with gts).
enum class BudgetMode { PerVideo, Global };

/// Inclusive grid lo, lo+step, ..., <= hi; values snapped to 1e-9 so
/// 0.5:0.05:0.95 prints as written.
inline std::vector<double> tiou_grid(double lo, double hi, double step) {
  if (!(step > 0.0) || hi < lo) throw Error(ErrorKind::InvalidArgument, "bad tIoU grid");
  std::vector<double> out;
  for (std::size_t i = 0;; ++i) {
    const double v = std::round((lo + static_cast<double>(i) * step) * 1e9) / 1e9;
    if (v > hi + 1e-9) break;
    out.push_back(v);
  }
  return out;
}

/// For every gt, the best tIoU reached by the proposals retrieved under each
/// budget an = 0..an_max. Built once; every recall query is then a count.
class RecallTable {
 public:
  RecallTable(std::span<const Proposal> proposals, std::span<const GroundTruthSegment> gts, std::size_t an_max,
              BudgetMode mode = BudgetMode::PerVideo)
      : an_max_(an_max) {
    if (gts.empty()) throw Error(ErrorKind::InvalidArgument, "recall undefined: no ground-truth segments");

    // Rank of each proposal: position within its video (per-video) or
    // within the pooled list (global). A proposal is retrieved at budget an
    // iff rank < an * scale.
    std::map<std::string, std::vector<std::pair<std::size_t, std::size_t>>> ranked;  // video -> (rank, index)
    std::size_t scale = 1;
    if (mode == BudgetMode::PerVideo) {
      const auto sorted = detail::nms_order(proposals);
      std::map<std::string, std::size_t> seen;
      for (auto i : sorted) {
        const auto& vid = proposals[i].video_id;
        ranked[vid].emplace_back(seen[vid]++, i);
      }
    } else {
      std::vector<std::string> videos;
      for (const auto& gt : gts) videos.push_back(gt.video_id);
      std::sort(videos.begin(), videos.end());
      scale = static_cast<std::size_t>(std::unique(videos.begin(), videos.end()) - videos.begin());
      const auto sorted = global_order(proposals);
      for (std::size_t r = 0; r < sorted.size(); ++r) {
        ranked[proposals[sorted[r]].video_id].emplace_back(r, sorted[r]);
      }
    }

    best_.reserve(gts.size());
    for (const auto& gt : gts) {
      std::vector<double> best(an_max + 1, 0.0);
      const auto it = ranked.find(gt.video_id);
      if (it != ranked.end()) {
        const auto& list = it->second;
        std::size_t cursor = 0;
        double running = 0.0;
        for (std::size_t an = 1; an <= an_max; ++an) {
          const std::size_t budget = an * scale;
          while (cursor < list.size() && list[cursor].first < budget) {
            running = std::max(running, tiou(proposals[list[cursor].second].interval, gt.interval));
            ++cursor;
          }
          best[an] = running;
        }
      }
      best_.push_back(std::move(best));
    }
  }

  /// Fraction of gts matched at tIoU >= threshold within budget `an`.
  double recall(double threshold, std::size_t an) const {
    if (an > an_max_) throw Error(ErrorKind::InvalidArgument, "an exceeds the table's an_max");
    if (an == 0) return 0.0;
    std::size_t hit = 0;
    for (const auto& best : best_) hit += best[an] >= threshold ? 1 : 0;
    return static_cast<double>(hit) / static_cast<double>(best_.size());
  }

  std::size_t an_max() const noexcept { return an_max_; }

 private:
  static std::vector<std::size_t> global_order(std::span<const Proposal> pooled) {
    std::vector<std::size_t> order(pooled.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const auto& pa = pooled[a];
      const auto& pb = pooled[b];
      if (pa.score != pb.score) return pa.score > pb.score;
      if (pa.video_id != pb.video_id) return pa.video_id < pb.video_id;
      if (pa.interval.start() != pb.interval.start()) return pa.interval.start() < pb.interval.start();
      return pa.interval.length() > pb.interval.length();
    });
    return order;
  }

  std::size_t an_max_;
  std::vector<std::vector<double>> best_;
};

/// Recall of the top-an proposals per video at one tIoU threshold. A gt is
/// recalled when any retrieved proposal of its video reaches the threshold;
/// matching is not one-to-one.
inline double recall_at(std::span<const Proposal> proposals, std::span<const GroundTruthSegment> gts,
                        double tiou_threshold, std::size_t an, BudgetMode mode = BudgetMode::PerVideo) {
  return RecallTable(proposals, gts, an, mode).recall(tiou_threshold, an);
}

struct ArAnCurve {
  std::vector<std::size_t> an_values;
  std::vector<double> tiou_grid;
  /// recall[t][a] for tiou_grid[t] and an_values[a].
  std::vector<std::vector<double>> recall;
  std::vector<double> ar;
  /// Mean AR over an_values, in percent.
  double auc = 0.0;

  double ar_at(std::size_t an) const {
    for (std::size_t a = 0; a < an_values.size(); ++a) {
      if (an_values[a] == an) return ar[a];
    }
    throw Error(ErrorKind::InvalidArgument, "AN " + std::to_string(an) + " not on the curve");
  }
};

inline ArAnCurve ar_an_curve(std::span<const Proposal> proposals, std::span<const GroundTruthSegment> gts,
                             std::span<const double> grid, std::size_t an_max = 100,
                             BudgetMode mode = BudgetMode::PerVideo) {
  if (grid.empty()) throw Error(ErrorKind::InvalidArgument, "empty tIoU grid");
  if (an_max == 0) throw Error(ErrorKind::InvalidArgument, "an_max must be >= 1");
  const RecallTable table(proposals, gts, an_max, mode);
  ArAnCurve curve;
  curve.tiou_grid.assign(grid.begin(), grid.end());
  for (std::size_t an = 1; an <= an_max; ++an) curve.an_values.push_back(an);
  curve.recall.assign(grid.size(), std::vector<double>(an_max, 0.0));
  curve.ar.assign(an_max, 0.0);
  for (std::size_t t = 0; t < grid.size(); ++t) {
    for (std::size_t a = 0; a < an_max; ++a) {
      curve.recall[t][a] = table.recall(grid[t], curve.an_values[a]);
    }
  }
  double area = 0.0;
  for (std::size_t a = 0; a < an_max; ++a) {
    double sum = 0.0;
    for (std::size_t t = 0; t < grid.size(); ++t) sum += curve.recall[t][a];
    curve.ar[a] = sum / static_cast<double>(grid.size());
    area += curve.ar[a];
  }
  curve.auc = area / static_cast<double>(an_max) * 100.0;
  return curve;
}

/// Average recall at a single budget.
inline double average_recall(std::span<const Proposal> proposals, std::span<const GroundTruthSegment> gts,
                             std::span<const double> grid, std::size_t an, BudgetMode mode = BudgetMode::PerVideo) {
  const RecallTable table(proposals, gts, an, mode);
  double sum = 0.0;
  for (double t : grid) sum += table.recall(t, an);
  return sum / static_cast<double>(grid.size());
}

inline std::vector<double> recall_vs_tiou(std::span<const Proposal> proposals,
                                          std::span<const GroundTruthSegment> gts, std::span<const double> grid,
                                          std::size_t an = 100, BudgetMode mode = BudgetMode::PerVideo) {
  const RecallTable table(proposals, gts, an, mode);
  std::vector<double> out;
  for (double t : grid) out.push_back(table.recall(t, an));
  return out;
}

/// Writes curve.csv (tiou,an,recall), summary.csv (an,ar) and auc.csv.
inline void write_curve_csv(const ArAnCurve& curve, const std::filesystem::path& dir) {
  std::string long_form = "tiou,an,recall\n";
  for (std::size_t t = 0; t < curve.tiou_grid.size(); ++t) {
    for (std::size_t a = 0; a < curve.an_values.size(); ++a) {
      long_form += detail::format_real(curve.tiou_grid[t]) + ',' + std::to_string(curve.an_values[a]) + ',' +
                   detail::format_real(curve.recall[t][a]) + '\n';
    }
  }
  std::string summary = "an,ar\n";
  for (std::size_t a = 0; a < curve.an_values.size(); ++a) {
    summary += std::to_string(curve.an_values[a]) + ',' + detail::format_real(curve.ar[a]) + '\n';
  }
  detail::write_file(dir / "curve.csv", long_form);
  detail::write_file(dir / "summary.csv", summary);
  detail::write_file(dir / "auc.csv", "auc," + detail::format_real(curve.auc) + "\n");
}

}  // namespace ctap
