#include "pes/losses.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <memory>
#include <utility>
#include <vector>

#include "pes/nn_ops.hpp"
#include "pes/rng.hpp"
#include "support/grad_check.hpp"

namespace {

using pes::ContrastiveSample;
using pes::MemoryBank;
using pes::Tape;
using pes::Tensor;
using pes::VideoClip;

std::vector<double> random_unit(pes::Rng& rng, int dim) {
  std::vector<double> v(static_cast<std::size_t>(dim));
  double n = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    n += x * x;
  }
  n = std::sqrt(n);
  for (auto& x : v) x /= n;
  return v;
}

VideoClip make_clip(float fill, float label_fill) {
  VideoClip c;
  c.video_id = "clip";
  c.valid_len = 4;
  c.frames = Tensor<float>({3, 4, 2, 2});
  c.labels = Tensor<float>({4, 3});
  for (std::size_t i = 0; i < c.frames.numel(); ++i)
    c.frames[i] = fill + 0.01f * static_cast<float>(i % 7);
  for (std::size_t i = 0; i < c.labels.numel(); ++i)
    c.labels[i] = label_fill;
  return c;
}

TEST(Mixup, LambdaOneReturnsFirstClipBitExact) {
  VideoClip a = make_clip(0.3f, 0.0f);
  a.labels.at2(1, 2) = 1.0f;
  VideoClip b = make_clip(0.6f, 0.0f);
  b.labels.at2(2, 0) = 1.0f;
  VideoClip m = pes::mixup(a, b, 1.0f);
  EXPECT_EQ(m.frames.vec(), a.frames.vec());
  EXPECT_EQ(m.labels.vec(), a.labels.vec());
}

TEST(Mixup, HalfLambdaBlendsOneHotLabels) {
  VideoClip a = make_clip(0.2f, 0.0f);
  a.labels.at2(0, 0) = 1.0f;
  VideoClip b = make_clip(0.8f, 0.0f);
  b.labels.at2(0, 1) = 1.0f;
  VideoClip m = pes::mixup(a, b, 0.5f);
  EXPECT_FLOAT_EQ(m.labels.at2(0, 0), 0.5f);
  EXPECT_FLOAT_EQ(m.labels.at2(0, 1), 0.5f);
  EXPECT_FLOAT_EQ(m.labels.at2(0, 2), 0.0f);
  for (std::size_t i = 0; i < m.frames.numel(); ++i)
    EXPECT_NEAR(m.frames[i], 0.5f * (a.frames[i] + b.frames[i]), 1e-7f);
}

TEST(Mixup, ShapeMismatchThrows) {
  VideoClip a = make_clip(0.2f, 0.0f);
  VideoClip b = a;
  b.frames = Tensor<float>({3, 8, 2, 2});
  b.labels = Tensor<float>({8, 3});
  EXPECT_THROW(pes::mixup(a, b, 0.5f), pes::RuntimeFailure);
}

TEST(Mixup, BetaDrawsAreBimodalWithMeanHalf) {
  pes::Rng rng(17);
  const int n = 100000;
  double mean = 0.0;
  int extreme = 0;
  for (int i = 0; i < n; ++i) {
    double l = pes::draw_mixup_lambda(rng, 0.1);
    ASSERT_GE(l, 0.0);
    ASSERT_LE(l, 1.0);
    mean += l;
    if (l < 0.1 || l > 0.9) ++extreme;
  }
  mean /= n;
  EXPECT_NEAR(mean, 0.5, 0.01);
  EXPECT_GT(static_cast<double>(extreme) / n, 0.6);
}

// Straight-line cross-entropy on probabilities, kept independent of the
// logit-space implementation under test.
double bce_oracle(const Tensor<double>& logits, const Tensor<double>& targets,
                  const std::vector<char>* mask) {
  double total = 0.0;
  int cells = 0;
  for (int r = 0; r < logits.dim(0); ++r) {
    if (mask && !(*mask)[static_cast<std::size_t>(r)]) continue;
    for (int c = 0; c < logits.dim(1); ++c) {
      double s = 1.0 / (1.0 + std::exp(-logits.at2(r, c)));
      double y = targets.at2(r, c);
      total += -(y * std::log(s) + (1.0 - y) * std::log(1.0 - s));
      ++cells;
    }
  }
  return cells == 0 ? 0.0 : total / cells;
}

TEST(Bce, MatchesProbabilitySpaceOracle) {
  pes::Rng rng(5);
  Tape<double> t;
  Tensor<double> lv({4, 3});
  auto targets = std::make_shared<Tensor<double>>(Tensor<double>({4, 3}));
  for (std::size_t i = 0; i < lv.numel(); ++i) lv[i] = rng.uniform(-3.0, 3.0);
  for (std::size_t i = 0; i < targets->numel(); ++i)
    (*targets)[i] = rng.uniform();
  auto mask = std::make_shared<std::vector<char>>(
      std::vector<char>{1, 1, 0, 1});

  int logits = t.constant(lv);
  std::shared_ptr<const Tensor<double>> tgt = targets;
  std::shared_ptr<const std::vector<char>> msk = mask;
  int loss = pes::tp::bce_with_logits(t, logits, tgt, msk);
  EXPECT_NEAR(t.val(loss)[0], bce_oracle(lv, *targets, mask.get()), 1e-12);
}

TEST(Bce, HalfTargetAtZeroLogitIsLogTwo) {
  Tape<double> t;
  Tensor<double> lv({1, 1});
  auto targets = std::make_shared<Tensor<double>>(Tensor<double>({1, 1}));
  (*targets)[0] = 0.5;
  std::shared_ptr<const Tensor<double>> tgt = targets;
  int loss = pes::tp::bce_with_logits(t, t.constant(lv), tgt,
                                      std::shared_ptr<const std::vector<char>>{});
  EXPECT_NEAR(t.val(loss)[0], std::log(2.0), 1e-15);
}

TEST(Bce, SaturatedCorrectPredictionsVanish) {
  Tape<double> t;
  Tensor<double> lv({2, 2});
  lv.at2(0, 0) = 40.0;
  lv.at2(0, 1) = -40.0;
  lv.at2(1, 0) = -40.0;
  lv.at2(1, 1) = 40.0;
  auto targets = std::make_shared<Tensor<double>>(Tensor<double>({2, 2}));
  targets->at2(0, 0) = 1.0;
  targets->at2(1, 1) = 1.0;
  std::shared_ptr<const Tensor<double>> tgt = targets;
  int loss = pes::tp::bce_with_logits(t, t.constant(lv), tgt,
                                      std::shared_ptr<const std::vector<char>>{});
  EXPECT_LT(t.val(loss)[0], 1e-12);
}

TEST(IcLoss, SinglePositiveSingleNegativeHandValue) {
  pes::Rng rng(9);
  auto z = random_unit(rng, 6);
  auto p = random_unit(rng, 6);
  auto n = random_unit(rng, 6);
  MemoryBank<double> bank(2, 8);
  bank.push(p, 0, 1.0);
  bank.push(n, 1, 1.0);
  double zp = 0.0, zn = 0.0;
  for (int d = 0; d < 6; ++d) {
    zp += z[static_cast<std::size_t>(d)] * p[static_cast<std::size_t>(d)];
    zn += z[static_cast<std::size_t>(d)] * n[static_cast<std::size_t>(d)];
  }
  double loss = pes::ic_loss<double>({{z, 0}}, bank, 1.0);
  EXPECT_NEAR(loss, -(zp - zn), 1e-12);
}

TEST(IcLoss, DuplicatedNegativeShiftsByLogTwo) {
  pes::Rng rng(10);
  auto z = random_unit(rng, 6);
  auto p = random_unit(rng, 6);
  auto n = random_unit(rng, 6);
  MemoryBank<double> one(2, 8), two(2, 8);
  one.push(p, 0, 1.0);
  one.push(n, 1, 1.0);
  two.push(p, 0, 1.0);
  two.push(n, 1, 1.0);
  two.push(n, 1, 1.0);
  double l1 = pes::ic_loss<double>({{z, 0}}, one, 1.0);
  double l2 = pes::ic_loss<double>({{z, 0}}, two, 1.0);
  EXPECT_NEAR(l2 - l1, std::log(2.0), 1e-12);
}

TEST(IcLoss, HugeTemperatureGivesLogNegativeCount) {
  pes::Rng rng(11);
  auto z = random_unit(rng, 6);
  MemoryBank<double> bank(2, 8);
  bank.push(random_unit(rng, 6), 0, 1.0);
  for (int i = 0; i < 3; ++i) bank.push(random_unit(rng, 6), 1, 1.0);
  double loss = pes::ic_loss<double>({{z, 0}}, bank, 1e9);
  EXPECT_NEAR(loss, std::log(3.0), 1e-6);
}

struct ToyProblem {
  MemoryBank<double> bank{3, 6};
  Tensor<double> emb;
  std::vector<ContrastiveSample> samples;
  // flat copies for the oracle
  std::vector<std::vector<std::pair<std::vector<double>, double>>> entries;
};

ToyProblem toy_problem(pes::Rng& rng, int dim, bool unit_weights) {
  ToyProblem pb;
  pb.entries.resize(3);
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < 2; ++i) {
      auto z = random_unit(rng, dim);
      double w = unit_weights ? 1.0 : rng.uniform(0.2, 1.0);
      pb.bank.push(z, c, w);
      pb.entries[static_cast<std::size_t>(c)].push_back({z, w});
    }
  }
  pb.emb = Tensor<double>({4, dim});
  for (int r = 0; r < 4; ++r) {
    auto z = random_unit(rng, dim);
    for (int d = 0; d < dim; ++d) pb.emb.at2(r, d) = z[static_cast<std::size_t>(d)];
  }
  pb.samples = {{0, 0, 1.0f}, {1, 1, unit_weights ? 1.0f : 0.6f},
                {2, 2, unit_weights ? 1.0f : 0.3f}, {3, 0, unit_weights ? 1.0f : 0.9f}};
  return pb;
}

// Direct transcription of the weighted objective: per sample, the mean over
// positives of log(exp(z_i . w_j z_j / tau) / sum_negatives exp(...)) scaled
// by -1/omega, averaged over samples.  No shared code with the tape op.
double soft_ic_oracle(const ToyProblem& pb, double tau) {
  double total = 0.0;
  int count = 0;
  const int dim = pb.emb.dim(1);
  for (const ContrastiveSample& s : pb.samples) {
    const auto& pos = pb.entries[static_cast<std::size_t>(s.class_id)];
    double denom = 0.0;
    bool have_neg = false;
    for (int k = 0; k < 3; ++k) {
      if (k == s.class_id) continue;
      for (const auto& [z, w] : pb.entries[static_cast<std::size_t>(k)]) {
        double dot = 0.0;
        for (int d = 0; d < dim; ++d)
          dot += pb.emb.at2(s.row, d) * w * z[static_cast<std::size_t>(d)];
        denom += std::exp(dot / tau);
        have_neg = true;
      }
    }
    if (pos.empty() || !have_neg) continue;
    double sum = 0.0;
    for (const auto& [z, w] : pos) {
      double dot = 0.0;
      for (int d = 0; d < dim; ++d)
        dot += pb.emb.at2(s.row, d) * w * z[static_cast<std::size_t>(d)];
      sum += std::log(std::exp(dot / tau) / denom);
    }
    total += -sum / (static_cast<double>(s.weight) * static_cast<double>(pos.size()));
    ++count;
  }
  return count == 0 ? 0.0 : total / count;
}

TEST(SoftIc, MatchesScalarLoopOracle) {
  pes::Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    ToyProblem pb = toy_problem(rng, 8, false);
    Tape<double> t;
    int emb = t.constant(pb.emb);
    int loss = pes::soft_ic(t, emb, pb.samples, pb.bank, 1.0);
    EXPECT_NEAR(t.val(loss)[0], soft_ic_oracle(pb, 1.0), 1e-10);
  }
}

TEST(SoftIc, UnitWeightsReduceToIcLoss) {
  pes::Rng rng(22);
  for (int trial = 0; trial < 100; ++trial) {
    ToyProblem pb = toy_problem(rng, 8, true);
    std::vector<std::pair<std::vector<double>, int>> batch;
    for (const ContrastiveSample& s : pb.samples) {
      std::vector<double> z(8);
      for (int d = 0; d < 8; ++d) z[static_cast<std::size_t>(d)] = pb.emb.at2(s.row, d);
      batch.push_back({z, s.class_id});
    }
    Tape<double> t;
    int loss = pes::soft_ic(t, t.constant(pb.emb), pb.samples, pb.bank, 0.07);
    double ic = pes::ic_loss<double>(batch, pb.bank, 0.07);
    EXPECT_NEAR(t.val(loss)[0], ic, 1e-12);
  }
}

TEST(SoftIc, HalvingSampleWeightDoublesItsContribution) {
  pes::Rng rng(23);
  ToyProblem pb = toy_problem(rng, 8, true);
  pb.samples = {{0, 0, 0.8f}};
  Tape<double> t1;
  int l1 = pes::soft_ic(t1, t1.constant(pb.emb), pb.samples, pb.bank, 1.0);
  pb.samples = {{0, 0, 0.4f}};
  Tape<double> t2;
  int l2 = pes::soft_ic(t2, t2.constant(pb.emb), pb.samples, pb.bank, 1.0);
  EXPECT_NEAR(t2.val(l2)[0], 2.0 * t1.val(l1)[0], 1e-12);
  EXPECT_NE(t1.val(l1)[0], 0.0);
}

TEST(SoftIc, SamplesWithoutPositivesOrNegativesAreSkipped) {
  pes::Rng rng(24);
  MemoryBank<double> lonely(3, 6);
  lonely.push(random_unit(rng, 8), 0, 1.0);
  Tensor<double> emb({2, 8});
  for (int r = 0; r < 2; ++r) {
    auto z = random_unit(rng, 8);
    for (int d = 0; d < 8; ++d) emb.at2(r, d) = z[static_cast<std::size_t>(d)];
  }
  // class 0 has no negatives, class 1 has no positives
  Tape<double> t;
  int loss = pes::soft_ic(t, t.constant(emb),
                          {{0, 0, 1.0f}, {1, 1, 1.0f}}, lonely, 1.0);
  EXPECT_EQ(t.val(loss)[0], 0.0);

  // one skipped + one contributing == contributing alone
  MemoryBank<double> full(3, 6);
  full.push(random_unit(rng, 8), 0, 1.0);
  full.push(random_unit(rng, 8), 1, 1.0);
  Tape<double> ta;
  int la = pes::soft_ic(ta, ta.constant(emb),
                        {{0, 0, 1.0f}, {1, 2, 1.0f}}, full, 1.0);
  Tape<double> tb;
  int lb = pes::soft_ic(tb, tb.constant(emb), {{0, 0, 1.0f}}, full, 1.0);
  EXPECT_EQ(ta.val(la)[0], tb.val(lb)[0]);
}

TEST(SoftIc, GradientsMatchFiniteDifferences) {
  pes::Rng rng(25);
  ToyProblem pb = toy_problem(rng, 8, false);
  pb.samples.push_back({0, 1, 0.5f});  // mixed frame: two classes on one row
  for (std::size_t i = 0; i < pb.emb.numel(); ++i)
    pb.emb[i] = rng.normal(0.0, 0.5);

  Tensor<double> grad;
  auto eval = [&]() {
    Tape<double> t;
    int raw = t.constant(pb.emb);
    int unit = pes::tp::l2_normalize_rows(t, raw);
    int loss = pes::soft_ic(t, unit, pb.samples, pb.bank, 0.5);
    return t.val(loss)[0];
  };
  {
    Tape<double> t;
    int raw = t.constant(pb.emb);
    int unit = pes::tp::l2_normalize_rows(t, raw);
    int loss = pes::soft_ic(t, unit, pb.samples, pb.bank, 0.5);
    t.backward(loss);
    grad = t.grad(raw);
  }
  auto res = pes_test::check_gradients({&pb.emb}, eval, {&grad});
  EXPECT_LT(res.max_rel_err, 1e-3);
  EXPECT_EQ(res.checked, pb.emb.numel());
}

TEST(MemoryBankOps, FifoEvictsOldestOnly) {
  pes::Rng rng(26);
  MemoryBank<double> bank(3, 12);  // 4 per class
  EXPECT_EQ(bank.per_class_capacity(), 4);
  std::vector<std::vector<double>> zs;
  for (int i = 0; i < 5; ++i) zs.push_back(random_unit(rng, 4));
  for (int i = 0; i < 5; ++i)
    bank.push(zs[static_cast<std::size_t>(i)], 0, 1.0);
  EXPECT_EQ(bank.size(0), 4);
  EXPECT_EQ(bank.entries(0).front().z, zs[1]);
  EXPECT_EQ(bank.entries(0).back().z, zs[4]);
}

TEST(MemoryBankOps, ClassQueuesAreIsolated) {
  pes::Rng rng(27);
  MemoryBank<double> bank(3, 12);
  auto keep = random_unit(rng, 4);
  bank.push(keep, 1, 0.5);
  for (int i = 0; i < 9; ++i) bank.push(random_unit(rng, 4), 0, 1.0);
  EXPECT_EQ(bank.size(0), 4);
  ASSERT_EQ(bank.size(1), 1);
  EXPECT_EQ(bank.entries(1).front().z, keep);
  EXPECT_EQ(bank.size(2), 0);
}

TEST(MemoryBankOps, HoldsExactlyWhatWasPushedBelowCapacity) {
  pes::Rng rng(28);
  MemoryBank<double> bank(2, 16);  // 8 per class
  for (int k = 1; k <= 8; ++k) {
    bank.push(random_unit(rng, 4), 0, 1.0);
    EXPECT_EQ(bank.size(0), k);
  }
}

TEST(MemoryBankOps, RejectsBadWeightsAndNonUnitVectors) {
  MemoryBank<double> bank(2, 8);
  std::vector<double> unit{1.0, 0.0, 0.0};
  EXPECT_THROW(bank.push(unit, 0, 0.0), pes::RuntimeFailure);
  EXPECT_THROW(bank.push(unit, 0, 1.5), pes::RuntimeFailure);
  EXPECT_THROW(bank.push({0.5, 0.5, 0.5}, 0, 1.0), pes::RuntimeFailure);
  bank.push(unit, 0, 1.0);
  EXPECT_EQ(bank.size(0), 1);
}

TEST(MemoryBankOps, WithinClassOrderDoesNotChangeLoss) {
  pes::Rng rng(29);
  const int dim = 8;
  std::vector<std::vector<double>> zs;
  std::vector<double> ws;
  for (int i = 0; i < 4; ++i) {
    zs.push_back(random_unit(rng, dim));
    ws.push_back(rng.uniform(0.3, 1.0));
  }
  MemoryBank<double> fwd(2, 8), rev(2, 8);
  for (int i = 0; i < 4; ++i)
    fwd.push(zs[static_cast<std::size_t>(i)], i / 2,
             ws[static_cast<std::size_t>(i)]);
  for (int i : {1, 0, 3, 2})
    rev.push(zs[static_cast<std::size_t>(i)], i / 2,
             ws[static_cast<std::size_t>(i)]);

  Tensor<double> emb({1, dim});
  auto q = random_unit(rng, dim);
  for (int d = 0; d < dim; ++d) emb.at2(0, d) = q[static_cast<std::size_t>(d)];
  std::vector<ContrastiveSample> samples{{0, 0, 0.7f}};
  Tape<double> ta, tb;
  int la = pes::soft_ic(ta, ta.constant(emb), samples, fwd, 0.07);
  int lb = pes::soft_ic(tb, tb.constant(emb), samples, rev, 0.07);
  EXPECT_NEAR(ta.val(la)[0], tb.val(lb)[0], 1e-12);
}

TEST(ContrastiveSamples, OnlyLabeledRowsInsideValidLengthContribute) {
  Tensor<float> labels({6, 3});
  labels.at2(1, 2) = 1.0f;
  labels.at2(3, 0) = 0.4f;
  labels.at2(3, 1) = 0.6f;
  labels.at2(5, 0) = 1.0f;  // beyond valid_len, must be ignored
  auto samples = pes::collect_contrastive_samples(labels, 5);
  ASSERT_EQ(samples.size(), 3u);
  EXPECT_EQ(samples[0].row, 1);
  EXPECT_EQ(samples[0].class_id, 2);
  EXPECT_EQ(samples[1].row, 3);
  EXPECT_EQ(samples[1].class_id, 0);
  EXPECT_FLOAT_EQ(samples[1].weight, 0.4f);
  EXPECT_EQ(samples[2].row, 3);
  EXPECT_EQ(samples[2].class_id, 1);

  Tensor<float> empty({6, 3});
  EXPECT_TRUE(pes::collect_contrastive_samples(empty, 6).empty());
}

TEST(CombinedLoss, ZeroWeightIsExactlyBce) {
  pes::Rng rng(30);
  ToyProblem pb = toy_problem(rng, 8, false);
  Tensor<double> lv({4, 3});
  for (std::size_t i = 0; i < lv.numel(); ++i) lv[i] = rng.uniform(-2.0, 2.0);
  auto targets = std::make_shared<Tensor<double>>(Tensor<double>({4, 3}));
  (*targets).at2(0, 0) = 1.0;
  (*targets).at2(2, 1) = 1.0;
  std::shared_ptr<const Tensor<double>> tgt = targets;
  std::shared_ptr<const std::vector<char>> msk{};

  pes::LossConfig cfg;
  cfg.lambda_sic = 0.0;
  Tape<double> t;
  int logits = t.constant(lv);
  int emb = t.constant(pb.emb);
  int combined = pes::combined_loss(t, logits, tgt, msk, emb, pb.samples,
                                    pb.bank, cfg);
  Tape<double> tb;
  int bce = pes::tp::bce_with_logits(tb, tb.constant(lv), tgt, msk);
  EXPECT_EQ(t.val(combined)[0], tb.val(bce)[0]);
}

TEST(CombinedLoss, AddsScaledContrastiveTerm) {
  pes::Rng rng(31);
  ToyProblem pb = toy_problem(rng, 8, false);
  Tensor<double> lv({4, 3});
  for (std::size_t i = 0; i < lv.numel(); ++i) lv[i] = rng.uniform(-2.0, 2.0);
  auto targets = std::make_shared<Tensor<double>>(Tensor<double>({4, 3}));
  std::shared_ptr<const Tensor<double>> tgt = targets;
  std::shared_ptr<const std::vector<char>> msk{};

  pes::LossConfig cfg;
  cfg.tau = 0.07;
  cfg.lambda_sic = 0.001;
  Tape<double> t;
  int combined = pes::combined_loss(t, t.constant(lv), tgt, msk,
                                    t.constant(pb.emb), pb.samples, pb.bank, cfg);
  Tape<double> ts;
  int sic = pes::soft_ic(ts, ts.constant(pb.emb), pb.samples, pb.bank, cfg.tau);
  Tape<double> tb;
  int bce = pes::tp::bce_with_logits(tb, tb.constant(lv), tgt, msk);
  double expect = tb.val(bce)[0] + 0.001 * ts.val(sic)[0];
  EXPECT_NEAR(t.val(combined)[0], expect, 1e-12);
  if (ts.val(sic)[0] > 0.0) {
    EXPECT_GT(t.val(combined)[0], tb.val(bce)[0]);
  }
}

}  // namespace
