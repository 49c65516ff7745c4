#include "pes/spotting.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <set>
#include <tuple>

#include "pes/rng.hpp"

namespace {

using pes::EventPrediction;
using pes::FrameScoreTrack;
using pes::Tensor;
using pes::WindowScores;

WindowScores make_window(int start, int len, int k, float fill, int valid = -1) {
  WindowScores w;
  w.start = start;
  w.scores = Tensor<float>::full({len, k}, fill);
  w.valid_len = valid < 0 ? len : valid;
  return w;
}

TEST(Aggregate, SingleWindowIsBitExact) {
  pes::Rng rng(50);
  WindowScores w = make_window(0, 64, 3, 0.0f);
  for (std::size_t i = 0; i < w.scores.numel(); ++i)
    w.scores[i] = static_cast<float>(rng.uniform());
  auto track = pes::aggregate_windows("v", 64, 3, {w});
  EXPECT_EQ(track.scores.vec(), w.scores.vec());
  for (int f = 0; f < 64; ++f)
    EXPECT_EQ(track.coverage[static_cast<std::size_t>(f)], 1);
}

TEST(Aggregate, OverlapTakesArithmeticMean) {
  auto track = pes::aggregate_windows(
      "v", 192, 1,
      {make_window(0, 128, 1, 0.2f), make_window(64, 128, 1, 0.6f)});
  for (int f = 0; f < 64; ++f) EXPECT_FLOAT_EQ(track.scores.at2(f, 0), 0.2f);
  for (int f = 64; f < 128; ++f) EXPECT_FLOAT_EQ(track.scores.at2(f, 0), 0.4f);
  for (int f = 128; f < 192; ++f) EXPECT_FLOAT_EQ(track.scores.at2(f, 0), 0.6f);
}

TEST(Aggregate, MatchesScalarLoopOracle) {
  pes::Rng rng(51);
  const int n = 32, k = 2;
  std::vector<WindowScores> wins;
  for (int start : {0, 8, 16}) {
    WindowScores w = make_window(start, 16, k, 0.0f);
    for (std::size_t i = 0; i < w.scores.numel(); ++i)
      w.scores[i] = static_cast<float>(rng.uniform());
    wins.push_back(std::move(w));
  }
  auto track = pes::aggregate_windows("v", n, k, wins);

  for (int f = 0; f < n; ++f) {
    for (int c = 0; c < k; ++c) {
      float sum = 0.0f;
      int cov = 0;
      for (const auto& w : wins) {
        int r = f - w.start;
        if (r >= 0 && r < w.valid_len) {
          sum += w.scores.at2(r, c);
          ++cov;
        }
      }
      ASSERT_GE(cov, 1);
      EXPECT_EQ(track.scores.at2(f, c), sum / static_cast<float>(cov));
      EXPECT_EQ(track.coverage[static_cast<std::size_t>(f)], cov);
    }
  }
}

TEST(Aggregate, PaddedRowsAreExcluded) {
  WindowScores w = make_window(0, 16, 1, 0.5f, 12);
  EXPECT_THROW(pes::aggregate_windows("v", 16, 1, {w}), pes::RuntimeFailure);
  auto track = pes::aggregate_windows("v", 12, 1, {w});
  for (int f = 0; f < 12; ++f) EXPECT_FLOAT_EQ(track.scores.at2(f, 0), 0.5f);
}

FrameScoreTrack flat_track(int n, int k, float fill = 0.0f) {
  FrameScoreTrack t;
  t.video_id = "v";
  t.scores = Tensor<float>::full({n, k}, fill);
  t.coverage.assign(static_cast<std::size_t>(n), 1);
  return t;
}

TEST(SoftNms, SingleIsolatedPeak) {
  FrameScoreTrack track = flat_track(100, 1, 0.01f);
  track.scores.at2(50, 0) = 0.9f;
  auto preds = pes::soft_nms(track, 20, 0.5);
  ASSERT_EQ(preds.size(), 1u);
  EXPECT_EQ(preds[0].frame, 50);
  EXPECT_EQ(preds[0].class_id, 0);
  EXPECT_FLOAT_EQ(preds[0].score, 0.9f);
}

TEST(SoftNms, DistantEqualPeaksBothSurvive) {
  FrameScoreTrack track = flat_track(100, 1);
  track.scores.at2(20, 0) = 0.7f;
  track.scores.at2(50, 0) = 0.7f;
  auto preds = pes::soft_nms(track, 20, 0.5);
  ASSERT_EQ(preds.size(), 2u);
  std::set<int> frames{preds[0].frame, preds[1].frame};
  EXPECT_EQ(frames, (std::set<int>{20, 50}));
  EXPECT_FLOAT_EQ(preds[0].score, 0.7f);
  EXPECT_FLOAT_EQ(preds[1].score, 0.7f);
}

TEST(SoftNms, GoldenDecayTrace) {
  FrameScoreTrack track = flat_track(100, 1);
  track.scores.at2(50, 0) = 0.9f;
  track.scores.at2(55, 0) = 0.8f;

  // 0.8 decays to 0.8 * 5/10 = 0.4 < 0.5, so only the first peak survives
  auto high = pes::soft_nms(track, 20, 0.5);
  ASSERT_EQ(high.size(), 1u);
  EXPECT_EQ(high[0].frame, 50);
  EXPECT_FLOAT_EQ(high[0].score, 0.9f);

  // at threshold 0.3 the decayed 0.4 is still selected; it reports the
  // frame's original aggregated score
  auto low = pes::soft_nms(track, 20, 0.3);
  ASSERT_EQ(low.size(), 2u);
  EXPECT_EQ(low[0].frame, 50);
  EXPECT_FLOAT_EQ(low[0].score, 0.9f);
  EXPECT_EQ(low[1].frame, 55);
  EXPECT_FLOAT_EQ(low[1].score, 0.8f);
}

TEST(SoftNms, EqualPeaksInsideWindowPickEarlierFrame) {
  FrameScoreTrack track = flat_track(100, 1);
  track.scores.at2(10, 0) = 0.8f;
  track.scores.at2(13, 0) = 0.8f;
  auto preds = pes::soft_nms(track, 20, 0.5);
  ASSERT_EQ(preds.size(), 1u);
  EXPECT_EQ(preds[0].frame, 10);
}

TEST(SoftNms, ClassesAreIndependent) {
  pes::Rng rng(52);
  FrameScoreTrack track = flat_track(80, 2);
  for (int f = 0; f < 80; ++f) {
    track.scores.at2(f, 0) = static_cast<float>(rng.uniform(0.0, 0.8));
    track.scores.at2(f, 1) = static_cast<float>(rng.uniform(0.0, 0.8));
  }
  auto collect_class0 = [](const std::vector<EventPrediction>& preds) {
    std::set<std::pair<int, float>> s;
    for (const auto& p : preds)
      if (p.class_id == 0) s.insert({p.frame, p.score});
    return s;
  };
  auto before = collect_class0(pes::soft_nms(track, 20, 0.3));
  for (int f = 0; f < 80; ++f)
    track.scores.at2(f, 1) = static_cast<float>(rng.uniform(0.0, 0.8));
  auto after = collect_class0(pes::soft_nms(track, 20, 0.3));
  EXPECT_EQ(before, after);
}

TEST(SoftNms, RaisingThresholdNeverAddsPredictions) {
  pes::Rng rng(53);
  FrameScoreTrack track = flat_track(120, 2);
  for (std::size_t i = 0; i < track.scores.numel(); ++i)
    track.scores[i] = static_cast<float>(rng.uniform());
  auto as_set = [](const std::vector<EventPrediction>& preds) {
    std::set<std::pair<int, int>> s;
    for (const auto& p : preds) s.insert({p.class_id, p.frame});
    return s;
  };
  auto lo = as_set(pes::soft_nms(track, 20, 0.1));
  auto mid = as_set(pes::soft_nms(track, 20, 0.3));
  auto hi = as_set(pes::soft_nms(track, 20, 0.6));
  EXPECT_TRUE(std::includes(lo.begin(), lo.end(), mid.begin(), mid.end()));
  EXPECT_TRUE(std::includes(mid.begin(), mid.end(), hi.begin(), hi.end()));
}

TEST(SoftNms, IdempotentOnItsOwnSurvivors) {
  pes::Rng rng(54);
  for (int trial = 0; trial < 10; ++trial) {
    FrameScoreTrack track = flat_track(100, 2);
    for (std::size_t i = 0; i < track.scores.numel(); ++i)
      track.scores[i] = static_cast<float>(rng.uniform());
    auto first = pes::soft_nms(track, 20, 0.2);

    FrameScoreTrack rebuilt = flat_track(100, 2);
    for (const auto& p : first) rebuilt.scores.at2(p.frame, p.class_id) = p.score;
    auto second = pes::soft_nms(rebuilt, 20, 0.2);

    auto key = [](const std::vector<EventPrediction>& preds) {
      std::set<std::tuple<int, int, float>> s;
      for (const auto& p : preds) s.insert({p.class_id, p.frame, p.score});
      return s;
    };
    EXPECT_EQ(key(first), key(second)) << "trial " << trial;
  }
}

TEST(SoftNms, OutputSortedByScoreDescending) {
  pes::Rng rng(55);
  FrameScoreTrack track = flat_track(200, 3);
  for (std::size_t i = 0; i < track.scores.numel(); ++i)
    track.scores[i] = static_cast<float>(rng.uniform());
  auto preds = pes::soft_nms(track, 20, 0.2);
  for (std::size_t i = 1; i < preds.size(); ++i)
    EXPECT_GE(preds[i - 1].score, preds[i].score);
}

TEST(PredictionFile, RoundTripsAndOrdersRecords) {
  namespace fs = std::filesystem;
  std::vector<std::string> names{"class_0", "class_1"};
  std::vector<EventPrediction> preds{
      {"vb", 10, 1, 0.5f}, {"va", 90, 0, 0.25f}, {"va", 12, 0, 0.75f},
      {"va", 30, 1, 0.9f}, {"vb", 11, 1, 0.5f},
  };
  fs::path path = fs::temp_directory_path() / "pes_pred_test.tsv";
  pes::write_predictions(path, preds, names);
  auto loaded = pes::read_predictions(path, names);
  fs::remove(path);

  ASSERT_EQ(loaded.size(), preds.size());
  // (video, class, score desc, frame)
  EXPECT_EQ(loaded[0].video_id, "va");
  EXPECT_EQ(loaded[0].frame, 12);
  EXPECT_EQ(loaded[1].frame, 90);
  EXPECT_EQ(loaded[2].video_id, "va");
  EXPECT_EQ(loaded[2].class_id, 1);
  EXPECT_EQ(loaded[3].video_id, "vb");
  EXPECT_EQ(loaded[3].frame, 10);  // equal scores: earlier frame first
  EXPECT_EQ(loaded[4].frame, 11);
  for (const auto& p : loaded) {
    EXPECT_GE(p.score, 0.0f);
    EXPECT_LE(p.score, 1.0f);
  }
  EXPECT_FLOAT_EQ(loaded[0].score, 0.75f);
}

}  // namespace
