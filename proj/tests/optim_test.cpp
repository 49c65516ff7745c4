#include "pes/optim.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "pes/rng.hpp"

namespace {

using pes::AdamW;
using pes::OptimConfig;
using pes::Parameter;
using pes::SamOptimizer;
using pes::Tensor;

OptimConfig plain_cfg() {
  OptimConfig cfg;
  cfg.base_lr = 1e-3;
  cfg.warmup_lr = 1e-5;
  cfg.warmup_epochs = 3;
  cfg.total_epochs = 30;
  return cfg;
}

TEST(LrSchedule, WarmupAndCosineEndpoints) {
  OptimConfig cfg = plain_cfg();
  const double fw = 0.1;
  EXPECT_DOUBLE_EQ(pes::lr_at(0.0, cfg), 1e-5);
  EXPECT_DOUBLE_EQ(pes::lr_at(fw, cfg), cfg.base_lr);
  EXPECT_NEAR(pes::lr_at(fw / 2, cfg), 0.5 * (1e-5 + cfg.base_lr), 1e-12);
  EXPECT_NEAR(pes::lr_at(fw + (1.0 - fw) / 2, cfg), 0.5 * cfg.base_lr, 1e-12);
  EXPECT_LE(pes::lr_at(1.0, cfg), 1e-3 * cfg.base_lr);
}

TEST(LrSchedule, RampsUpThenDecays) {
  OptimConfig cfg = plain_cfg();
  double prev = -1.0;
  for (double f = 0.0; f <= 0.1 + 1e-9; f += 0.01) {
    double lr = pes::lr_at(f, cfg);
    EXPECT_GT(lr, prev) << "f=" << f;
    prev = lr;
  }
  for (double f = 0.1; f <= 1.0 + 1e-9; f += 0.05) {
    double lr = pes::lr_at(f, cfg);
    EXPECT_LE(lr, prev + 1e-15) << "f=" << f;
    prev = lr;
  }
}

TEST(LrSchedule, NoWarmupStartsAtBase) {
  OptimConfig cfg = plain_cfg();
  cfg.warmup_epochs = 0;
  EXPECT_DOUBLE_EQ(pes::lr_at(0.0, cfg), cfg.base_lr);
}

TEST(AdamWOpt, FirstStepMatchesHandComputation) {
  OptimConfig cfg = plain_cfg();
  Parameter<double> p("w", Tensor<double>::scalar(1.0));
  AdamW<double> opt(cfg, {&p});
  p.grad[0] = 2.0;
  opt.step(1e-3);
  // m-hat = g, v-hat = g^2 on the first step
  const double expect =
      1.0 - 1e-3 * (2.0 / (2.0 + 1e-8) + 1e-4 * 1.0);
  EXPECT_NEAR(p.value[0], expect, 1e-15);
  EXPECT_EQ(opt.step_count(), 1);
}

TEST(AdamWOpt, DescendsQuadraticBowl) {
  OptimConfig cfg = plain_cfg();
  cfg.weight_decay = 0.0;
  Parameter<double> p("w", Tensor<double>({3}, {0.0, 1.0, -2.0}));
  AdamW<double> opt(cfg, {&p});
  const double target[3] = {3.0, -1.0, 0.5};
  for (int it = 0; it < 400; ++it) {
    for (int i = 0; i < 3; ++i)
      p.grad[static_cast<std::size_t>(i)] =
          2.0 * (p.value[static_cast<std::size_t>(i)] - target[i]);
    opt.step(0.05);
    p.zero_grad();
  }
  for (int i = 0; i < 3; ++i)
    EXPECT_NEAR(p.value[static_cast<std::size_t>(i)], target[i], 0.1);
}

// Quadratic loss with analytic gradients written straight into the
// parameter; no tape involved.
double quadratic_eval(Parameter<double>& p, const std::vector<double>& target) {
  double loss = 0.0;
  for (std::size_t i = 0; i < p.value.numel(); ++i) {
    const double d = p.value[i] - target[i];
    loss += d * d;
    p.grad[i] += 2.0 * d;
  }
  return loss;
}

TEST(Sam, SecondEvaluationHappensAtPerturbedPoint) {
  OptimConfig cfg = plain_cfg();
  cfg.sam_enabled = true;
  cfg.adaptive = false;
  cfg.rho = 0.5;
  Parameter<double> p("w", Tensor<double>::scalar(1.0));
  SamOptimizer<double> opt(cfg, {&p});

  std::vector<double> seen;
  auto res = opt.step(
      [&](bool) {
        seen.push_back(p.value[0]);
        p.grad[0] += 2.0 * p.value[0];
        return p.value[0] * p.value[0];
      },
      1e-3);
  EXPECT_FALSE(res.skipped);
  EXPECT_DOUBLE_EQ(res.loss, 1.0);
  ASSERT_EQ(seen.size(), 2u);
  EXPECT_DOUBLE_EQ(seen[0], 1.0);
  // grad 2 at w=1, unit direction, radius 0.5
  EXPECT_NEAR(seen[1], 1.5, 1e-12);
  EXPECT_EQ(opt.base().step_count(), 1);
}

TEST(Sam, ParametersRestoredBitExactly) {
  OptimConfig cfg = plain_cfg();
  cfg.rho = 2.0;
  cfg.adaptive = true;
  pes::Rng rng(41);
  Parameter<float> p("w", Tensor<float>({16}));
  for (std::size_t i = 0; i < 16; ++i)
    p.value[i] = static_cast<float>(rng.normal());
  std::vector<float> before = p.value.vec();

  SamOptimizer<float> opt(cfg, {&p});
  opt.step(
      [&](bool) {
        double l = 0.0;
        for (std::size_t i = 0; i < 16; ++i) {
          l += 0.5 * p.value[i] * p.value[i];
          p.grad[i] += p.value[i];
        }
        return l;
      },
      0.0);  // lr 0: the base update is a no-op, exposing the restore
  EXPECT_EQ(0, std::memcmp(before.data(), p.value.data(),
                           before.size() * sizeof(float)));
}

TEST(Sam, RhoZeroMatchesBareBaseOptimizer) {
  OptimConfig cfg = plain_cfg();
  cfg.rho = 0.0;
  const std::vector<double> target{0.3, -0.7, 1.9, 0.0};
  const std::vector<double> init{2.0, 1.0, -1.0, 0.5};

  Parameter<double> pa("w", Tensor<double>({4}, std::vector<double>(init)));
  SamOptimizer<double> sam(cfg, {&pa});
  for (int it = 0; it < 10; ++it)
    sam.step([&](bool) { return quadratic_eval(pa, target); }, 1e-2);

  Parameter<double> pb("w", Tensor<double>({4}, std::vector<double>(init)));
  AdamW<double> bare(cfg, {&pb});
  for (int it = 0; it < 10; ++it) {
    pb.zero_grad();
    quadratic_eval(pb, target);
    bare.step(1e-2);
  }
  for (std::size_t i = 0; i < 4; ++i)
    EXPECT_NEAR(pa.value[i], pb.value[i], 1e-12);
}

TEST(Sam, AdaptivePerturbationFollowsWeightScale) {
  Parameter<double> p("w", Tensor<double>({2}, {1.0, 100.0}));
  p.grad[0] = 1.0;
  p.grad[1] = 1.0;
  auto eps = pes::sam_perturbations<double>({&p}, true, 2.0, 0.01);
  ASSERT_EQ(eps.size(), 1u);
  const double rel0 = eps[0][0] / 1.0;
  const double rel1 = eps[0][1] / 100.0;
  EXPECT_NEAR(rel1 / rel0, 100.0, 5.0);
  // absolute components scale with (|w|+eta)^2
  const double t0 = 1.01, t1 = 100.01;
  EXPECT_NEAR(eps[0][1] / eps[0][0], (t1 * t1) / (t0 * t0), 1e-9);

  auto plain = pes::sam_perturbations<double>({&p}, false, 2.0, 0.01);
  EXPECT_DOUBLE_EQ(plain[0][0], plain[0][1]);
}

TEST(Sam, ScalingWeightsScalesAdaptivePerturbationLinearly) {
  pes::Rng rng(42);
  Parameter<double> p("w", Tensor<double>({5}, {5.0, -3.0, 2.0, -7.0, 4.0}));
  for (std::size_t i = 0; i < 5; ++i) p.grad[i] = rng.normal();
  auto base = pes::sam_perturbations<double>({&p}, true, 2.0, 0.01);
  const double s = 10.0;
  p.value.scale_(s);
  auto scaled = pes::sam_perturbations<double>({&p}, true, 2.0, 0.01);
  for (std::size_t i = 0; i < 5; ++i)
    EXPECT_NEAR(scaled[0][i] / base[0][i], s, 0.05 * s);
}

TEST(Sam, NonFiniteGradientsSkipTheStep) {
  OptimConfig cfg = plain_cfg();
  cfg.rho = 1.0;
  Parameter<double> p("w", Tensor<double>::scalar(2.0));
  SamOptimizer<double> opt(cfg, {&p});

  auto r1 = opt.step(
      [&](bool) {
        p.grad[0] += std::numeric_limits<double>::quiet_NaN();
        return 1.0;
      },
      1e-3);
  EXPECT_TRUE(r1.skipped);
  EXPECT_EQ(opt.skipped_steps(), 1);
  EXPECT_DOUBLE_EQ(p.value[0], 2.0);
  EXPECT_EQ(opt.base().step_count(), 0);

  auto r2 = opt.step(
      [&](bool first) {
        p.grad[0] += first ? 1.0 : std::numeric_limits<double>::infinity();
        return 1.0;
      },
      1e-3);
  EXPECT_TRUE(r2.skipped);
  EXPECT_EQ(opt.skipped_steps(), 2);
  EXPECT_DOUBLE_EQ(p.value[0], 2.0);
  EXPECT_EQ(opt.base().step_count(), 0);
}

TEST(Sam, EvaluationCountContract) {
  OptimConfig cfg = plain_cfg();
  const std::vector<double> target{1.0};
  for (double rho : {0.0, 2.0}) {
    cfg.sam_enabled = true;
    cfg.rho = rho;
    Parameter<double> p("w", Tensor<double>::scalar(0.0));
    SamOptimizer<double> opt(cfg, {&p});
    int calls = 0;
    opt.step(
        [&](bool) {
          ++calls;
          return quadratic_eval(p, target);
        },
        1e-3);
    EXPECT_EQ(calls, 2) << "rho=" << rho;
  }
  cfg.sam_enabled = false;
  Parameter<double> p("w", Tensor<double>::scalar(0.0));
  SamOptimizer<double> opt(cfg, {&p});
  int calls = 0;
  opt.step(
      [&](bool) {
        ++calls;
        return quadratic_eval(p, target);
      },
      1e-3);
  EXPECT_EQ(calls, 1);
}

TEST(Sam, TrajectoriesAreDeterministic) {
  OptimConfig cfg = plain_cfg();
  cfg.rho = 2.0;
  const std::vector<double> target{0.1, 0.9, -0.4};
  std::vector<std::vector<double>> runs;
  for (int run = 0; run < 2; ++run) {
    Parameter<double> p("w", Tensor<double>({3}, {1.0, -1.0, 0.5}));
    SamOptimizer<double> opt(cfg, {&p});
    for (int it = 0; it < 5; ++it)
      opt.step([&](bool) { return quadratic_eval(p, target); }, 1e-2);
    runs.push_back(p.value.vec());
  }
  EXPECT_EQ(runs[0], runs[1]);
}

TEST(OptimConfigChecks, RejectsBadValues) {
  OptimConfig cfg = plain_cfg();
  cfg.rho = -1.0;
  EXPECT_THROW(cfg.validate(), pes::ConfigError);
  cfg = plain_cfg();
  cfg.warmup_epochs = 31;
  EXPECT_THROW(cfg.validate(), pes::ConfigError);
  cfg = plain_cfg();
  cfg.base_lr = 0.0;
  EXPECT_THROW(cfg.validate(), pes::ConfigError);
  plain_cfg().validate();
}

}  // namespace
