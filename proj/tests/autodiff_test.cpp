#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <memory>
#include <vector>

#include "pes/nn_ops.hpp"
#include "pes/rng.hpp"
#include "pes/tape.hpp"
#include "support/grad_check.hpp"

namespace {

using pes::Rng;
using pes::Tape;
using pes::Tensor;
namespace tp = pes::tp;

Tensor<double> randu(Rng& rng, std::vector<int> shape, double lo = -1.0,
                     double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Values pushed away from zero, for ops with a kink there.
Tensor<double> randu_nonzero(Rng& rng, std::vector<int> shape) {
  Tensor<double> t = randu(rng, std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i)
    t[i] += t[i] >= 0.0 ? 0.15 : -0.15;
  return t;
}

using GraphFn = std::function<int(Tape<double>&, const std::vector<int>&)>;

double run_graph(const std::vector<Tensor<double>*>& ins,
                 const Tensor<double>& wts, const GraphFn& build,
                 std::vector<Tensor<double>>* grads) {
  Tape<double> t;
  std::vector<int> ids;
  ids.reserve(ins.size());
  for (auto* in : ins) ids.push_back(t.constant(*in));
  int out = build(t, ids);
  int prod = tp::mul(t, out, t.constant(wts));
  int loss = tp::sum_all(t, prod);
  if (grads) {
    t.backward(loss);
    grads->clear();
    for (int id : ids) grads->push_back(t.grad(id));
  }
  return t.val(loss)[0];
}

// Builds loss = sum(out .* random_weights) and compares reverse-mode input
// gradients against central differences.
void expect_grads_match(std::vector<Tensor<double>*> ins,
                        const std::vector<int>& out_shape, const GraphFn& build,
                        double tol = 2e-5) {
  Rng wr(991);
  Tensor<double> wts = randu(wr, out_shape);
  std::vector<Tensor<double>> grads;
  run_graph(ins, wts, build, &grads);
  std::vector<const Tensor<double>*> gptrs;
  for (auto& g : grads) gptrs.push_back(&g);
  auto eval = [&] { return run_graph(ins, wts, build, nullptr); };
  auto res = pes_test::check_gradients(ins, eval, gptrs);
  EXPECT_GT(res.checked, 0u);
  EXPECT_LT(res.max_rel_err, tol);
}

TEST(Autodiff, Elementwise) {
  Rng rng(1);
  Tensor<double> a = randu(rng, {3, 4});
  Tensor<double> b = randu(rng, {3, 4});
  expect_grads_match({&a, &b}, {3, 4}, [](Tape<double>& t, const std::vector<int>& v) {
    return tp::add(t, v[0], v[1]);
  });
  expect_grads_match({&a, &b}, {3, 4}, [](Tape<double>& t, const std::vector<int>& v) {
    return tp::mul(t, v[0], v[1]);
  });
  expect_grads_match({&a}, {3, 4}, [](Tape<double>& t, const std::vector<int>& v) {
    return tp::scale_add(t, v[0], -2.5, 0.75);
  });
  expect_grads_match({&a}, {3, 4}, [](Tape<double>& t, const std::vector<int>& v) {
    return tp::sigmoid(t, v[0]);
  });
  expect_grads_match({&a}, {3, 4}, [](Tape<double>& t, const std::vector<int>& v) {
    return tp::tanh_op(t, v[0]);
  });
  Tensor<double> c = randu_nonzero(rng, {3, 4});
  expect_grads_match({&c}, {3, 4}, [](Tape<double>& t, const std::vector<int>& v) {
    return tp::relu(t, v[0]);
  });
}

TEST(Autodiff, MatmulLinearTranspose) {
  Rng rng(2);
  Tensor<double> a = randu(rng, {3, 5});
  Tensor<double> b = randu(rng, {5, 4});
  expect_grads_match({&a, &b}, {3, 4}, [](Tape<double>& t, const std::vector<int>& v) {
    return tp::matmul(t, v[0], v[1]);
  });
  Tensor<double> x = randu(rng, {4, 6});
  Tensor<double> w = randu(rng, {3, 6});
  Tensor<double> bias = randu(rng, {3});
  expect_grads_match({&x, &w, &bias}, {4, 3},
                     [](Tape<double>& t, const std::vector<int>& v) {
                       return tp::linear(t, v[0], v[1], v[2]);
                     });
  expect_grads_match({&a}, {5, 3}, [](Tape<double>& t, const std::vector<int>& v) {
    return tp::transpose2(t, v[0]);
  });
}

TEST(Autodiff, LinearForwardValue) {
  Tensor<double> x({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor<double> w({2, 3}, {1, 0, -1, 0.5, 0.5, 0.5});
  Tensor<double> b({2}, {10, -10});
  Tape<double> t;
  int y = tp::linear(t, t.constant(x), t.constant(w), t.constant(b));
  EXPECT_DOUBLE_EQ(t.val(y).at2(0, 0), 1 - 3 + 10);
  EXPECT_DOUBLE_EQ(t.val(y).at2(0, 1), 3.0 - 10);
  EXPECT_DOUBLE_EQ(t.val(y).at2(1, 0), 4 - 6 + 10);
  EXPECT_DOUBLE_EQ(t.val(y).at2(1, 1), 7.5 - 10);
}

TEST(Autodiff, SliceConcat) {
  Rng rng(3);
  Tensor<double> a = randu(rng, {5, 6});
  Tensor<double> b = randu(rng, {5, 2});
  expect_grads_match({&a}, {2, 6}, [](Tape<double>& t, const std::vector<int>& v) {
    return tp::slice_rows(t, v[0], 1, 3);
  });
  expect_grads_match({&a}, {5, 3}, [](Tape<double>& t, const std::vector<int>& v) {
    return tp::slice_cols(t, v[0], 2, 5);
  });
  expect_grads_match({&a, &b}, {5, 8}, [](Tape<double>& t, const std::vector<int>& v) {
    return tp::concat_cols(t, v[0], v[1]);
  });
  Tensor<double> c = randu(rng, {2, 6});
  expect_grads_match({&a, &c}, {7, 6}, [](Tape<double>& t, const std::vector<int>& v) {
    return tp::concat_rows(t, {v[0], v[1]});
  });
}

// Straight-line convolution oracle, no reuse of library code.
Tensor<double> conv2d_oracle(const Tensor<double>& x, const Tensor<double>& w,
                             const Tensor<double>& b, int stride, int pad) {
  int Ci = x.dim(0), T = x.dim(1), H = x.dim(2), W = x.dim(3);
  int Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  int Ho = (H + 2 * pad - kh) / stride + 1;
  int Wo = (W + 2 * pad - kw) / stride + 1;
  Tensor<double> y({Co, T, Ho, Wo});
  for (int co = 0; co < Co; ++co)
    for (int f = 0; f < T; ++f)
      for (int ho = 0; ho < Ho; ++ho)
        for (int wo = 0; wo < Wo; ++wo) {
          double acc = b[co];
          for (int ci = 0; ci < Ci; ++ci)
            for (int u = 0; u < kh; ++u)
              for (int v = 0; v < kw; ++v) {
                int h = ho * stride - pad + u, ww = wo * stride - pad + v;
                if (h < 0 || h >= H || ww < 0 || ww >= W) continue;
                acc += x.at4(ci, f, h, ww) *
                       w[((static_cast<std::size_t>(co) * Ci + ci) * kh + u) * kw + v];
              }
          y.at4(co, f, ho, wo) = acc;
        }
  return y;
}

TEST(Autodiff, Conv2dFramesMatchesOracleAndFD) {
  Rng rng(4);
  for (auto [stride, pad] : std::vector<std::pair<int, int>>{{1, 1}, {2, 1}, {1, 3}}) {
    int kh = pad == 3 ? 7 : 3;
    Tensor<double> x = randu(rng, {3, 2, 6, 5});
    Tensor<double> w = randu(rng, {4, 3, kh, kh});
    Tensor<double> b = randu(rng, {4});
    Tensor<double> expect = conv2d_oracle(x, w, b, stride, pad);
    Tape<double> t;
    int y = tp::conv2d_frames(t, t.constant(x), t.constant(w), t.constant(b),
                              stride, pad);
    ASSERT_EQ(t.val(y).shape(), expect.shape());
    for (std::size_t i = 0; i < expect.numel(); ++i)
      ASSERT_NEAR(t.val(y)[i], expect[i], 1e-12);
    expect_grads_match({&x, &w, &b}, expect.shape(),
                       [stride, pad](Tape<double>& t, const std::vector<int>& v) {
                         return tp::conv2d_frames(t, v[0], v[1], v[2], stride, pad);
                       });
  }
}

Tensor<double> conv_temporal_oracle(const Tensor<double>& x,
                                    const Tensor<double>& w,
                                    const Tensor<double>& b) {
  int Ci = x.dim(0), T = x.dim(1), H = x.dim(2), W = x.dim(3);
  int Co = w.dim(0), kt = w.dim(2), pad = kt / 2;
  Tensor<double> y({Co, T, H, W});
  for (int co = 0; co < Co; ++co)
    for (int f = 0; f < T; ++f)
      for (int h = 0; h < H; ++h)
        for (int ww = 0; ww < W; ++ww) {
          double acc = b[co];
          for (int ci = 0; ci < Ci; ++ci)
            for (int j = 0; j < kt; ++j) {
              int src = f + j - pad;
              if (src < 0 || src >= T) continue;
              acc += x.at4(ci, src, h, ww) *
                     w[(static_cast<std::size_t>(co) * Ci + ci) * kt + j];
            }
          y.at4(co, f, h, ww) = acc;
        }
  return y;
}

TEST(Autodiff, ConvTemporalMatchesOracleAndFD) {
  Rng rng(5);
  for (int kt : {1, 3}) {
    Tensor<double> x = randu(rng, {3, 5, 2, 2});
    Tensor<double> w = randu(rng, {2, 3, kt});
    Tensor<double> b = randu(rng, {2});
    Tensor<double> expect = conv_temporal_oracle(x, w, b);
    Tape<double> t;
    int y = tp::conv_temporal(t, t.constant(x), t.constant(w), t.constant(b));
    ASSERT_EQ(t.val(y).shape(), expect.shape());
    for (std::size_t i = 0; i < expect.numel(); ++i)
      ASSERT_NEAR(t.val(y)[i], expect[i], 1e-12);
    expect_grads_match({&x, &w, &b}, expect.shape(),
                       [](Tape<double>& t, const std::vector<int>& v) {
                         return tp::conv_temporal(t, v[0], v[1], v[2]);
                       });
  }
}

TEST(Autodiff, ChannelPoolAvgMax) {
  Rng rng(6);
  Tensor<double> x = randu(rng, {4, 3, 2, 2});
  Tape<double> t;
  int y = tp::channel_pool_avgmax(t, t.constant(x));
  ASSERT_EQ(t.val(y).shape(), (std::vector<int>{2, 3, 2, 2}));
  double avg = 0.0, mx = -1e30;
  for (int c = 0; c < 4; ++c) {
    avg += x.at4(c, 1, 0, 1);
    mx = std::max(mx, x.at4(c, 1, 0, 1));
  }
  EXPECT_NEAR(t.val(y).at4(0, 1, 0, 1), avg / 4.0, 1e-12);
  EXPECT_NEAR(t.val(y).at4(1, 1, 0, 1), mx, 1e-12);
  expect_grads_match({&x}, {2, 3, 2, 2}, [](Tape<double>& t, const std::vector<int>& v) {
    return tp::channel_pool_avgmax(t, v[0]);
  });
}

TEST(Autodiff, BatchnormTrainAndEval) {
  Rng rng(7);
  Tensor<double> x = randu(rng, {3, 4, 2, 2});
  Tensor<double> gamma = randu(rng, {3}, 0.5, 1.5);
  Tensor<double> beta = randu(rng, {3});
  pes::BnBuffers<double> stats(3);
  for (int c = 0; c < 3; ++c) {
    stats.running_mean[c] = 0.1 * c;
    stats.running_var[c] = 0.5 + 0.2 * c;
  }
  for (bool training : {true, false}) {
    expect_grads_match({&x, &gamma, &beta}, {3, 4, 2, 2},
                       [&stats, training](Tape<double>& t, const std::vector<int>& v) {
                         return tp::batchnorm(t, v[0], v[1], v[2], stats, training,
                                              0.1, 1e-5, nullptr);
                       });
  }
  // Training-mode forward: per-channel output is standardized.
  Tape<double> t;
  int y = tp::batchnorm(t, t.constant(x), t.constant(gamma), t.constant(beta),
                        stats, true, 0.1, 1e-5, nullptr);
  for (int c = 0; c < 3; ++c) {
    double m = 0.0, v = 0.0;
    for (int i = 0; i < 16; ++i) m += t.val(y)[c * 16 + i];
    m /= 16.0;
    for (int i = 0; i < 16; ++i) {
      double d = t.val(y)[c * 16 + i] - m;
      v += d * d;
    }
    v /= 16.0;
    EXPECT_NEAR(m, beta[c], 1e-9);
    EXPECT_NEAR(std::sqrt(v), std::abs(gamma[c]), 1e-4);
  }
}

TEST(Autodiff, BatchnormRunningStatUpdate) {
  Tensor<double> x({1, 4, 1, 1}, {1.0, 2.0, 3.0, 6.0});
  Tensor<double> gamma({1}, {1.0});
  Tensor<double> beta({1}, {0.0});
  pes::BnBuffers<double> stats(1);
  pes::BnUpdateList<double> updates;
  Tape<double> t;
  tp::batchnorm(t, t.constant(x), t.constant(gamma), t.constant(beta), stats,
                true, 0.1, 1e-5, &updates);
  ASSERT_EQ(updates.size(), 1u);
  EXPECT_DOUBLE_EQ(stats.running_mean[0], 0.0);  // not yet applied
  pes::apply_bn_updates(updates);
  // batch mean 3, biased var 3.5, unbiased var 14/3
  EXPECT_NEAR(stats.running_mean[0], 0.9 * 0.0 + 0.1 * 3.0, 1e-12);
  EXPECT_NEAR(stats.running_var[0], 0.9 * 1.0 + 0.1 * (14.0 / 3.0), 1e-12);
}

TEST(Autodiff, GapSpatialAndDynDepthwise) {
  Rng rng(8);
  Tensor<double> x = randu(rng, {3, 4, 2, 3});
  expect_grads_match({&x}, {3, 4}, [](Tape<double>& t, const std::vector<int>& v) {
    return tp::gap_spatial(t, v[0]);
  });
  Tensor<double> k = randu(rng, {3, 3});
  expect_grads_match({&x, &k}, {3, 4, 2, 3},
                     [](Tape<double>& t, const std::vector<int>& v) {
                       return tp::dyn_temporal_depthwise(t, v[0], v[1]);
                     });
  // Boundary handling: kernel [0,0,1] shifts the sequence toward earlier t.
  Tensor<double> shift({1, 3}, {0.0, 0.0, 1.0});
  Tensor<double> seq({1, 3, 1, 1}, {10.0, 20.0, 30.0});
  Tape<double> t;
  int y = tp::dyn_temporal_depthwise(t, t.constant(seq), t.constant(shift));
  EXPECT_DOUBLE_EQ(t.val(y)[0], 20.0);
  EXPECT_DOUBLE_EQ(t.val(y)[1], 30.0);
  EXPECT_DOUBLE_EQ(t.val(y)[2], 0.0);
}

TEST(Autodiff, MulBroadcastChannel) {
  Rng rng(9);
  Tensor<double> x = randu(rng, {4, 3, 2, 2});
  Tensor<double> g = randu(rng, {1, 3, 2, 2});
  expect_grads_match({&x, &g}, {4, 3, 2, 2},
                     [](Tape<double>& t, const std::vector<int>& v) {
                       return tp::mul_broadcast_c(t, v[0], v[1]);
                     });
}

TEST(Autodiff, L2NormalizeRows) {
  Rng rng(10);
  Tensor<double> x = randu(rng, {5, 7});
  Tape<double> t;
  int y = tp::l2_normalize_rows(t, t.constant(x));
  for (int r = 0; r < 5; ++r) {
    double n = 0.0;
    for (int j = 0; j < 7; ++j) n += t.val(y).at2(r, j) * t.val(y).at2(r, j);
    EXPECT_NEAR(std::sqrt(n), 1.0, 1e-5);
  }
  expect_grads_match({&x}, {5, 7}, [](Tape<double>& t, const std::vector<int>& v) {
    return tp::l2_normalize_rows(t, v[0]);
  });
}

TEST(Autodiff, BceWithLogits) {
  Rng rng(11);
  Tensor<double> x = randu(rng, {4, 3}, -3.0, 3.0);
  Tensor<double> tg({4, 3});
  for (std::size_t i = 0; i < tg.numel(); ++i)
    tg[i] = rng.uniform() < 0.3 ? 1.0 : 0.0;
  std::shared_ptr<const Tensor<double>> targets =
      std::make_shared<Tensor<double>>(tg);
  std::shared_ptr<const std::vector<char>> mask =
      std::make_shared<std::vector<char>>(std::vector<char>{1, 0, 1, 1});

  // Scalar-loop oracle over unmasked rows.
  double expect = 0.0;
  for (int r = 0; r < 4; ++r) {
    if (!(*mask)[r]) continue;
    for (int j = 0; j < 3; ++j) {
      double v = x.at2(r, j), yy = targets->at2(r, j);
      double p = 1.0 / (1.0 + std::exp(-v));
      expect += -(yy * std::log(p) + (1.0 - yy) * std::log(1.0 - p));
    }
  }
  expect /= 9.0;

  Tape<double> t;
  int loss = tp::bce_with_logits(t, t.constant(x), targets, mask);
  EXPECT_NEAR(t.val(loss)[0], expect, 1e-10);

  // Gradient against FD (loss is already scalar; weight graph unnecessary).
  Tape<double> t2;
  int xid = t2.constant(x);
  int l2 = tp::bce_with_logits(t2, xid, targets, mask);
  t2.backward(l2);
  Tensor<double> g = t2.grad(xid);
  auto eval = [&] {
    Tape<double> tt;
    int l = tp::bce_with_logits(tt, tt.constant(x), targets, mask);
    return tt.val(l)[0];
  };
  auto res = pes_test::check_gradients({&x}, eval, {&g});
  EXPECT_LT(res.max_rel_err, 1e-6);
}

TEST(Autodiff, ExtremeLogitsStayFinite) {
  Tensor<double> x({1, 2}, {80.0, -80.0});
  std::shared_ptr<const Tensor<double>> targets =
      std::make_shared<Tensor<double>>(Tensor<double>({1, 2}, {0.0, 1.0}));
  Tape<double> t;
  int loss = tp::bce_with_logits(t, t.constant(x), targets,
                                 std::shared_ptr<const std::vector<char>>{});
  EXPECT_TRUE(std::isfinite(t.val(loss)[0]));
  EXPECT_NEAR(t.val(loss)[0], 80.0, 1e-9);
}

TEST(Autodiff, ParamGradAccumulatesAcrossTapes) {
  pes::Parameter<double> p("p", Tensor<double>({2}, {0.5, -0.25}));
  for (int it = 0; it < 2; ++it) {
    Tape<double> t;
    int loss = tp::sum_all(t, tp::mul(t, t.param(p), t.param(p)));
    t.backward(loss);
    t.accumulate_param_grads();
  }
  EXPECT_DOUBLE_EQ(p.grad[0], 2.0 * 2.0 * 0.5);
  EXPECT_DOUBLE_EQ(p.grad[1], 2.0 * 2.0 * -0.25);
}

}  // namespace
