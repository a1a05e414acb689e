#include <gtest/gtest.h>

#include <random>

#include "ctap/ctap.hpp"
#include "support/oracles.hpp"

using namespace ctap;

namespace {

TarHyper small_hyper() {
  TarHyper h;
  h.d_m = 6;
  return h;
}

FeatureSequence ramp(std::size_t n, std::size_t d_f, const std::string& vid = "v") {
  FeatureSequence seq{vid, n, d_f, {}};
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t d = 0; d < d_f; ++d) seq.data.push_back(static_cast<float>(0.01 * static_cast<double>(u) - 0.1 * d));
  }
  return seq;
}

Proposal window(UnitIndex s, UnitIndex e, std::optional<double> trust) {
  return {"v", Interval(s, e), 0.3, ProposalSource::SlidingWindow, trust, false};
}

// every window that is some gt's argmax or overlaps a gt by more than half
std::vector<int> brute_force_labels(const std::vector<Interval>& windows, const std::vector<Interval>& gts) {
  std::vector<int> labels(windows.size(), 0);
  for (const auto& g : gts) {
    double best = 0.0;
    for (const auto& w : windows) best = std::max(best, tiou(w, g));
    if (best <= 0.0) continue;
    std::optional<std::size_t> first;
    for (std::size_t w = 0; w < windows.size(); ++w) {
      if (tiou(windows[w], g) == best && (!first || windows[w].start() < windows[*first].start())) first = w;
    }
    labels[*first] = 1;
  }
  for (std::size_t w = 0; w < windows.size(); ++w) {
    for (const auto& g : gts) labels[w] |= tiou(windows[w], g) > 0.5 ? 1 : 0;
  }
  return labels;
}

}  // namespace

TEST(SampleUnits, InteriorOfShortInterval) {
  const auto u = sample_units(100, Interval(0, 4), 4, 4);
  EXPECT_EQ(u.center, (std::vector<std::size_t>{0, 1, 2, 3}));
}

TEST(SampleUnits, InteriorOfLongInterval) {
  const auto u = sample_units(100, Interval(10, 20), 2, 4);
  EXPECT_EQ(u.center, (std::vector<std::size_t>{12, 17}));
}

TEST(SampleUnits, BoundaryContextIsClampedAtVideoStart) {
  const auto u = sample_units(100, Interval(0, 10), 4, 4);
  EXPECT_EQ(u.start, (std::vector<std::size_t>{0, 0, 0, 1}));
  EXPECT_EQ(u.end, (std::vector<std::size_t>{8, 9, 10, 11}));
}

TEST(SampleUnits, BoundaryContextIsClampedAtVideoEnd) {
  const auto u = sample_units(12, Interval(4, 12), 2, 4);
  EXPECT_EQ(u.end, (std::vector<std::size_t>{10, 11, 11, 11}));
}

TEST(Forward, ZeroModelIsNeutral) {
  const auto model = TarModel::zeros(3, small_hyper());
  const auto out = tar_forward(model, gather_tar_inputs(ramp(30, 3), Interval(5, 15), model.hyper));
  EXPECT_EQ(out.start_offset, 0.0);
  EXPECT_EQ(out.probability, 0.5);
  EXPECT_EQ(out.end_offset, 0.0);
}

TEST(Forward, DoublingTheLastLayerDoublesTheOffset) {
  Rng rng(3);
  auto model = TarModel::init(3, small_hyper(), rng);
  const auto in = gather_tar_inputs(ramp(30, 3), Interval(5, 15), model.hyper);
  const auto before = tar_forward(model, in);
  for (auto& v : model.start.second.weight.values) v *= 2.0;
  for (auto& v : model.start.second.bias.values) v *= 2.0;
  const auto after = tar_forward(model, in);
  EXPECT_NEAR(after.start_offset, 2.0 * before.start_offset, 1e-12);
  EXPECT_EQ(after.probability, before.probability);
  EXPECT_EQ(after.end_offset, before.end_offset);
}

TEST(Forward, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto r = oracle::tar_grad_check(seed);
    for (const auto* g : {&r.start, &r.proposal, &r.end}) {
      EXPECT_LT(g->max_rel_error, 1e-4) << "seed " << seed << " worst " << g->worst;
      EXPECT_GT(g->checked, 0u);
    }
  }
}

TEST(Assign, ExactWindowIsPositiveWithZeroOffsets) {
  const std::vector<Interval> windows = {Interval(0, 16), Interval(16, 32)};
  const std::vector<Interval> gts = {Interval(16, 32)};
  const auto s = assign_training_samples(windows, gts);
  EXPECT_EQ(s[0].label, 0);
  EXPECT_EQ(s[1].label, 1);
  EXPECT_EQ(*s[1].start_offset, 0.0);
  EXPECT_EQ(*s[1].end_offset, 0.0);
}

TEST(Assign, LowOverlapArgmaxIsStillPositive) {
  const std::vector<Interval> windows = {Interval(0, 16), Interval(40, 56)};
  const std::vector<Interval> gts = {Interval(12, 20)};  // tIoU 4/20 with the first window
  const auto s = assign_training_samples(windows, gts);
  EXPECT_EQ(s[0].label, 1);
  EXPECT_EQ(*s[0].start_offset, 12.0);
  EXPECT_EQ(*s[0].end_offset, 4.0);
  EXPECT_EQ(s[1].label, 0);
}

TEST(Assign, MatchesBruteForceOnRandomLayouts) {
  std::mt19937_64 gen(11);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = oracle::pick(gen, 20, 300);
    std::vector<Interval> windows;
    for (const auto& w : sliding_windows(n, WindowConfig{.lengths = {8, 16, 32}}, "v")) windows.push_back(w.interval);
    std::vector<Interval> gts;
    const std::size_t n_gt = oracle::pick(gen, 0, 4);
    for (std::size_t g = 0; g < n_gt; ++g) {
      const auto s = static_cast<UnitIndex>(oracle::pick(gen, 0, n - 2));
      const auto e = static_cast<UnitIndex>(oracle::pick(gen, static_cast<std::size_t>(s) + 1, n));
      gts.push_back(Interval(s, e));
    }
    const auto samples = assign_training_samples(windows, gts);
    const auto expected = brute_force_labels(windows, gts);
    for (std::size_t w = 0; w < windows.size(); ++w) {
      ASSERT_EQ(samples[w].label, expected[w]) << "trial " << trial << " window " << w;
      if (samples[w].label == 0) continue;
      const auto& g = gts[*samples[w].gt_index];
      EXPECT_EQ(*samples[w].start_offset, static_cast<double>(g.start() - windows[w].start()));
      EXPECT_EQ(*samples[w].end_offset, static_cast<double>(g.end() - windows[w].end()));
    }
    for (const auto& g : gts) {
      bool covered = false;
      for (std::size_t w = 0; w < windows.size(); ++w) covered |= samples[w].label == 1 && tiou(windows[w], g) > 0.0;
      EXPECT_TRUE(covered);
    }
  }
}

TEST(Training, ZeroLambdaLeavesBoundaryNetsUntouched) {
  SynthConfig synth;
  synth.n_videos = 4;
  synth.d_f = 4;
  synth.seed = 2;
  const auto data = generate_synthetic_dataset(synth).dataset;
  auto hyper = small_hyper();
  hyper.lambda_reg = 0.0;
  TrainConfig train;
  train.epochs = 2;
  train.batch_size = 16;
  train.seed = 5;
  const auto r = train_tar(data, hyper, WindowConfig{}, train);
  Rng rng(derive_seed(train.seed, "tar/init"));
  const auto init = TarModel::init(data.videos[0].d_f, hyper, rng);
  EXPECT_EQ(r.model.start.first.weight.values, init.start.first.weight.values);
  EXPECT_EQ(r.model.end.second.bias.values, init.end.second.bias.values);
  EXPECT_NE(r.model.proposal.first.weight.values, init.proposal.first.weight.values);
}

TEST(Training, SameSeedGivesIdenticalCheckpoint) {
  SynthConfig synth;
  synth.n_videos = 4;
  synth.d_f = 4;
  synth.seed = 2;
  const auto data = generate_synthetic_dataset(synth).dataset;
  TrainConfig train;
  train.epochs = 2;
  train.batch_size = 16;
  const auto a = train_tar(data, small_hyper(), WindowConfig{}, train);
  const auto b = train_tar(data, small_hyper(), WindowConfig{}, train);
  EXPECT_EQ(nn::encode_checkpoint(a.model.to_checkpoint()), nn::encode_checkpoint(b.model.to_checkpoint()));
  const auto back = TarModel::from_checkpoint(nn::decode_checkpoint(nn::encode_checkpoint(a.model.to_checkpoint())));
  EXPECT_EQ(back.to_checkpoint(), a.model.to_checkpoint());
  EXPECT_GT(a.positives, 0u);
}

TEST(Apply, ZeroModelKeepsBoundariesAndHalvesTrust) {
  const auto model = TarModel::zeros(2, small_hyper());
  const auto seq = ramp(40, 2);
  const std::vector<Proposal> in = {window(4, 20, 0.08), window(10, 30, std::nullopt)};
  const auto out = apply_tar(model, in, seq);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].interval, Interval(10, 30));
  EXPECT_EQ(out[0].score, 0.5);
  EXPECT_EQ(out[1].interval, Interval(4, 20));
  EXPECT_NEAR(out[1].score, 0.04, 1e-15);
  for (const auto& p : out) EXPECT_TRUE(p.adjusted);
}

TEST(Apply, ActionnessProposalsIgnoreTrust) {
  const auto model = TarModel::zeros(2, small_hyper());
  Proposal p = window(4, 20, 0.08);
  p.source = ProposalSource::Actionness;
  const std::vector<Proposal> in = {p};
  EXPECT_EQ(apply_tar(model, in, ramp(40, 2))[0].score, 0.5);
}

TEST(Apply, InvertedBoundariesCollapseToOneUnit) {
  auto model = TarModel::zeros(2, small_hyper());
  model.start.second.bias.values = {5.0};
  model.end.second.bias.values = {-5.0};
  const std::vector<Proposal> in = {window(10, 12, std::nullopt)};
  const auto out = apply_tar(model, in, ramp(40, 2));
  EXPECT_EQ(out[0].interval, Interval(15, 16));
}

TEST(Apply, BoundariesStayInsideTheVideo) {
  auto model = TarModel::zeros(2, small_hyper());
  model.start.second.bias.values = {-50.0};
  model.end.second.bias.values = {50.0};
  const std::vector<Proposal> in = {window(5, 10, std::nullopt), window(30, 39, std::nullopt)};
  for (const auto& p : apply_tar(model, in, ramp(40, 2))) EXPECT_EQ(p.interval, Interval(0, 40));
}

TEST(Apply, RankingOnlyKeepsIntervalsAndCount) {
  Rng rng(8);
  const auto model = TarModel::init(2, small_hyper(), rng);
  std::vector<Proposal> in;
  for (UnitIndex s = 0; s < 30; s += 3) in.push_back(window(s, s + 8, std::nullopt));
  ApplyTarOptions ranking_only;
  ranking_only.adjust_boundaries = false;
  const auto out = apply_tar(model, in, ramp(40, 2), ranking_only);
  ASSERT_EQ(out.size(), in.size());
  for (std::size_t i = 1; i < out.size(); ++i) EXPECT_GE(out[i - 1].score, out[i].score);
  for (const auto& p : out) {
    EXPECT_FALSE(p.adjusted);
    EXPECT_EQ(p.interval.length(), 8);
  }
  const auto adjusted = apply_tar(model, in, ramp(40, 2));
  EXPECT_EQ(adjusted.size(), in.size());
}

TEST(Apply, DimensionMismatchThrows) {
  const auto model = TarModel::zeros(3, small_hyper());
  const std::vector<Proposal> in = {window(0, 4, std::nullopt)};
  EXPECT_THROW(apply_tar(model, in, ramp(10, 2)), Error);
}
