#include <gtest/gtest.h>

#include <random>

#include "ctap/ctap.hpp"
#include "support/oracles.hpp"

using namespace ctap;

TEST(ThresholdRegions, HandTrace) {
  const std::vector<double> s = {0.1, 0.9, 0.9, 0.2, 0.9, 0.1};
  EXPECT_EQ(threshold_regions(s, 0.5), (std::vector<Interval>{Interval(1, 3), Interval(4, 5)}));
}

TEST(ThresholdRegions, NothingAboveThreshold) {
  const std::vector<double> s = {0.1, 0.5, 0.2};
  EXPECT_TRUE(threshold_regions(s, 0.5).empty());
}

TEST(ThresholdRegions, EverythingAboveThreshold) {
  const std::vector<double> s = {0.6, 0.9, 0.7, 0.8};
  EXPECT_EQ(threshold_regions(s, 0.5), (std::vector<Interval>{Interval(0, 4)}));
}

TEST(GroupRegions, SingleRegionIsUnchanged) {
  const std::vector<Interval> raw = {Interval(3, 9)};
  for (double eta : {0.025, 0.3, 1.0}) EXPECT_EQ(group_regions(raw, eta, 100), raw);
}

TEST(GroupRegions, MergesWhileSpanFits) {
  const std::vector<Interval> raw = {Interval(1, 3), Interval(4, 5)};
  EXPECT_EQ(group_regions(raw, 0.4, 10), (std::vector<Interval>{Interval(1, 5)}));
  EXPECT_EQ(group_regions(raw, 0.3, 10), raw);
}

TEST(Tag, AllZeroScoresGiveNothing) {
  const std::vector<double> s(30, 0.0);
  EXPECT_TRUE(tag_proposals(s, TagConfig{}, s.size()).empty());
}

TEST(Tag, StepScoresRecoverTheBlock) {
  std::vector<double> s(12, 0.0);
  for (int u = 2; u < 7; ++u) s[u] = 1.0;
  const auto out = tag_proposals(s, TagConfig{}, s.size(), "v");
  bool found = false;
  for (const auto& p : out) {
    if (p.interval == Interval(2, 7)) {
      found = true;
      EXPECT_EQ(p.score, 1.0);
    }
    EXPECT_EQ(p.source, ProposalSource::Actionness);
    EXPECT_EQ(p.video_id, "v");
  }
  EXPECT_TRUE(found);
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t j = i + 1; j < out.size(); ++j) EXPECT_LT(tiou(out[i].interval, out[j].interval), 0.95);
  }
  EXPECT_EQ(out, oracle::reference_tag(s, TagConfig{}, s.size(), "v"));
}

TEST(Tag, ScoreIsMeanActionness) {
  std::mt19937_64 gen(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> s(40);
  for (auto& v : s) v = u(gen);
  for (const auto& p : tag_proposals(s, TagConfig{}, s.size())) {
    double sum = 0.0;
    for (auto i = p.interval.start(); i < p.interval.end(); ++i) sum += s[static_cast<std::size_t>(i)];
    EXPECT_NEAR(p.score, sum / static_cast<double>(p.interval.length()), 1e-12);
  }
}

TEST(Tag, MatchesBruteForceGridOnRandomSequences) {
  std::mt19937_64 gen(21);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = oracle::pick(gen, 1, 64);
    std::vector<double> s(n);
    // mix of smooth bumps and noise so that grouping actually merges
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double phase = u(gen) * 6.0;
    for (std::size_t i = 0; i < n; ++i) s[i] = std::clamp(0.5 + 0.45 * std::sin(0.4 * i + phase) + 0.3 * (u(gen) - 0.5), 0.0, 1.0);
    const std::size_t video_len = n + oracle::pick(gen, 0, 16);
    ASSERT_EQ(tag_proposals(s, TagConfig{}, video_len), oracle::reference_tag(s, TagConfig{}, video_len))
        << "trial " << trial;
  }
}

TEST(Tag, GridMatchesDefinition) {
  const TagConfig cfg;
  const auto taus = cfg.taus();
  ASSERT_EQ(taus.size(), 11u);  // 0.085 .. 0.935
  EXPECT_NEAR(taus.back(), 0.935, 1e-12);
  const auto etas = cfg.etas();
  ASSERT_EQ(etas.size(), 40u);
  EXPECT_NEAR(etas.back(), 1.0, 1e-12);
}

TEST(Tag, ShortVideoLengthIsRejected) {
  const std::vector<double> s(10, 0.5);
  EXPECT_THROW(tag_proposals(s, TagConfig{}, 5), Error);
}

TEST(Windows, StrideForLength16IsTwo) {
  WindowConfig cfg;
  cfg.lengths = {16};
  EXPECT_EQ(cfg.stride(16), 2u);
  const auto w = sliding_windows(40, cfg);
  ASSERT_GE(w.size(), 2u);
  EXPECT_EQ(w[0].interval, Interval(0, 16));
  EXPECT_EQ(w[1].interval, Interval(2, 18));
  for (const auto& p : w) {
    EXPECT_EQ(p.source, ProposalSource::SlidingWindow);
    EXPECT_FALSE(p.pate_score.has_value());
  }
}

TEST(Windows, ConsecutiveWindowsOverlapAtLeastTheTarget) {
  WindowConfig cfg;
  cfg.lengths = {32};
  const auto w = sliding_windows(300, cfg);
  for (std::size_t i = 1; i < w.size(); ++i) EXPECT_GE(tiou(w[i - 1].interval, w[i].interval), 0.75);
}

TEST(Windows, LongWindowCollapsesToWholeVideo) {
  WindowConfig cfg;
  cfg.lengths = {16};
  const auto w = sliding_windows(8, cfg);
  ASSERT_EQ(w.size(), 1u);
  EXPECT_EQ(w[0].interval, Interval(0, 8));
}

TEST(Windows, LastWindowIsClampedToVideoEnd) {
  WindowConfig cfg;
  cfg.lengths = {16};
  const auto w = sliding_windows(41, cfg);
  EXPECT_EQ(w.back().interval, Interval(25, 41));
  for (const auto& p : w) EXPECT_LE(p.interval.end(), 41);
}

TEST(Windows, GtsOfCoveredLengthsHaveAHalfOverlapWindow) {
  SynthConfig synth;
  synth.n_videos = 30;
  synth.seed = 8;
  const auto data = generate_synthetic_dataset(synth).dataset;
  const WindowConfig cfg;
  for (const auto& v : data.videos) {
    const auto windows = sliding_windows(v.n_units, cfg, v.video_id);
    for (const auto& gt : data.gts_for(v.video_id)) {
      const auto len = static_cast<std::size_t>(gt.interval.length());
      if (len < cfg.lengths.front() / 2 || len > cfg.lengths.back() * 2) continue;
      double best = 0.0;
      for (const auto& w : windows) best = std::max(best, tiou(w.interval, gt.interval));
      EXPECT_GE(best, 0.5) << gt.video_id << " [" << gt.interval.start() << "," << gt.interval.end() << ")";
    }
  }
}

TEST(Windows, InvalidConfigIsRejected) {
  WindowConfig cfg;
  cfg.lengths = {32, 16};
  EXPECT_THROW(sliding_windows(100, cfg), Error);
  cfg.lengths = {16};
  cfg.overlap_tiou = 1.0;
  EXPECT_THROW(sliding_windows(100, cfg), Error);
}
