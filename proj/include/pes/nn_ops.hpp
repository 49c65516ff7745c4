#pragma once
#include <type_traits>

#include <Eigen/Dense>
#include <cassert>
#include <cmath>
#include <memory>
#include <vector>

#include "pes/tape.hpp"

namespace pes {

// Running statistics of one batchnorm layer.  Mutated only between forward
// passes, via BnUpdate records, so the forward itself stays pure.
template <typename S>
struct BnBuffers {
  Tensor<S> running_mean;
  Tensor<S> running_var;

  BnBuffers() = default;
  explicit BnBuffers(int channels)
      : running_mean({channels}), running_var(Tensor<S>::full({channels}, S(1))) {}
};

template <typename S>
struct BnUpdate {
  BnBuffers<S>* buffers;
  Tensor<S> batch_mean;
  Tensor<S> batch_var;  // unbiased
  S momentum;
};

template <typename S>
using BnUpdateList = std::vector<BnUpdate<S>>;

template <typename S>
inline void apply_bn_updates(BnUpdateList<S>& updates) {
  for (auto& u : updates) {
    u.buffers->running_mean.scale_(S(1) - u.momentum);
    u.buffers->running_mean.add_scaled_(u.batch_mean, u.momentum);
    u.buffers->running_var.scale_(S(1) - u.momentum);
    u.buffers->running_var.add_scaled_(u.batch_var, u.momentum);
  }
  updates.clear();
}

namespace tp {

template <typename S>
using StrideMap = Eigen::Map<RowMat<S>, 0, Eigen::OuterStride<>>;
template <typename S>
using CStrideMap = Eigen::Map<const RowMat<S>, 0, Eigen::OuterStride<>>;

namespace detail {

// col[(ci*kh + u)*kw + v, ho*Wo + wo] = x(ci, t, ho*stride - pad + u, ...)
template <typename S>
inline void im2col_frame(const Tensor<S>& x, int t, int kh, int kw, int stride,
                         int pad, int Ho, int Wo, S* col) {
  int Ci = x.dim(0), H = x.dim(2), W = x.dim(3);
  std::size_t cols = static_cast<std::size_t>(Ho) * Wo;
  for (int ci = 0; ci < Ci; ++ci) {
    const S* plane = x.data() + x.idx4(ci, t, 0, 0);
    for (int u = 0; u < kh; ++u) {
      for (int v = 0; v < kw; ++v) {
        S* row = col + (static_cast<std::size_t>(ci) * kh * kw + u * kw + v) * cols;
        for (int ho = 0; ho < Ho; ++ho) {
          int h = ho * stride - pad + u;
          if (h < 0 || h >= H) {
            std::fill(row + static_cast<std::size_t>(ho) * Wo,
                      row + static_cast<std::size_t>(ho + 1) * Wo, S(0));
            continue;
          }
          for (int wo = 0; wo < Wo; ++wo) {
            int w = wo * stride - pad + v;
            row[static_cast<std::size_t>(ho) * Wo + wo] =
                (w < 0 || w >= W) ? S(0) : plane[static_cast<std::size_t>(h) * W + w];
          }
        }
      }
    }
  }
}

template <typename S>
inline void col2im_frame_add(Tensor<S>& dx, int t, int kh, int kw, int stride,
                             int pad, int Ho, int Wo, const S* col) {
  int Ci = dx.dim(0), H = dx.dim(2), W = dx.dim(3);
  std::size_t cols = static_cast<std::size_t>(Ho) * Wo;
  for (int ci = 0; ci < Ci; ++ci) {
    S* plane = dx.data() + dx.idx4(ci, t, 0, 0);
    for (int u = 0; u < kh; ++u) {
      for (int v = 0; v < kw; ++v) {
        const S* row =
            col + (static_cast<std::size_t>(ci) * kh * kw + u * kw + v) * cols;
        for (int ho = 0; ho < Ho; ++ho) {
          int h = ho * stride - pad + u;
          if (h < 0 || h >= H) continue;
          for (int wo = 0; wo < Wo; ++wo) {
            int w = wo * stride - pad + v;
            if (w < 0 || w >= W) continue;
            plane[static_cast<std::size_t>(h) * W + w] +=
                row[static_cast<std::size_t>(ho) * Wo + wo];
          }
        }
      }
    }
  }
}

}  // namespace detail

// Per-frame 2-D convolution over a [Ci,T,H,W] map; the T axis rides along
// as a batch dimension.  x * w[Co,Ci,kh,kw] + b -> [Co,T,Ho,Wo].
template <typename S>
inline int conv2d_frames(Tape<S>& t, int x, int w, int b, int stride, int pad) {
  const Tensor<S>& xv = t.val(x);
  const Tensor<S>& wv = t.val(w);
  int Ci = xv.dim(0), T = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  int Co = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
  assert(wv.dim(1) == Ci);
  int Ho = (H + 2 * pad - kh) / stride + 1;
  int Wo = (W + 2 * pad - kw) / stride + 1;
  assert(Ho >= 1 && Wo >= 1);
  int K = Ci * kh * kw, P = Ho * Wo;

  Tensor<S> y({Co, T, Ho, Wo});
  {
    Tensor<S> col({K, P});
    CMap<S> Wm(wv.data(), Co, K);
    Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>> bias(t.val(b).data(), Co);
    for (int f = 0; f < T; ++f) {
      detail::im2col_frame(xv, f, kh, kw, stride, pad, Ho, Wo, col.data());
      StrideMap<S> Y(y.data() + static_cast<std::size_t>(f) * P, Co, P,
                     Eigen::OuterStride<>(static_cast<std::ptrdiff_t>(T) * P));
      Y.noalias() = Wm * CMap<S>(col.data(), K, P);
      Y.colwise() += bias;
    }
  }
  return t.make(std::move(y), {x, w, b},
                [x, w, b, stride, pad, Ci, T, H, W, Co, kh, kw, Ho, Wo, K,
                 P](Tape<S>& t, int self) {
    (void)Ci; (void)H; (void)W;
    const Tensor<S>& xv = t.val(x);
    Tensor<S>& dx = t.grad(x);
    Tensor<S> col({K, P}), dcol({K, P});
    CMap<S> Wm(t.val(w).data(), Co, K);
    Map<S> dW(t.grad(w).data(), Co, K);
    Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>> db(t.grad(b).data(), Co);
    for (int f = 0; f < T; ++f) {
      CStrideMap<S> dY(t.grad(self).data() + static_cast<std::size_t>(f) * P, Co,
                       P, Eigen::OuterStride<>(static_cast<std::ptrdiff_t>(T) * P));
      detail::im2col_frame(xv, f, kh, kw, stride, pad, Ho, Wo, col.data());
      dW.noalias() += dY * CMap<S>(col.data(), K, P).transpose();
      db += dY.rowwise().sum();
      Map<S>(dcol.data(), K, P).noalias() = Wm.transpose() * dY;
      detail::col2im_frame_add(dx, f, kh, kw, stride, pad, Ho, Wo, dcol.data());
    }
  });
}

// 1-D convolution along T applied at every spatial position, mixing
// channels: x[Ci,T,H,W] * w[Co,Ci,kt] + b -> [Co,T,H,W].  Zero padded so T
// is preserved; kt must be odd.
template <typename S>
inline int conv_temporal(Tape<S>& t, int x, int w, int b) {
  const Tensor<S>& xv = t.val(x);
  const Tensor<S>& wv = t.val(w);
  int Ci = xv.dim(0), T = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  int Co = wv.dim(0), kt = wv.dim(2);
  assert(wv.dim(1) == Ci && kt % 2 == 1);
  int pad = kt / 2, HW = H * W;

  Tensor<S> y({Co, T, H, W});
  if (kt == 1) {
    std::size_t N = static_cast<std::size_t>(T) * HW;
    Map<S> Y(y.data(), Co, static_cast<int>(N));
    Y.noalias() = CMap<S>(wv.data(), Co, Ci) *
                  CMap<S>(xv.data(), Ci, static_cast<int>(N));
    Y.colwise() += Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>(
        t.val(b).data(), Co);
    return t.make(std::move(y), {x, w, b}, [x, w, b, Ci, Co, N](Tape<S>& t, int self) {
      CMap<S> dY(t.grad(self).data(), Co, static_cast<int>(N));
      CMap<S> X(t.val(x).data(), Ci, static_cast<int>(N));
      CMap<S> W(t.val(w).data(), Co, Ci);
      Map<S>(t.grad(x).data(), Ci, static_cast<int>(N)).noalias() +=
          W.transpose() * dY;
      Map<S>(t.grad(w).data(), Co, Ci).noalias() += dY * X.transpose();
      Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>>(t.grad(b).data(), Co) +=
          dY.rowwise().sum();
    });
  }

  {
    Tensor<S> gather({Ci * kt, HW});
    CMap<S> Wm(wv.data(), Co, Ci * kt);
    Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>> bias(t.val(b).data(), Co);
    for (int f = 0; f < T; ++f) {
      for (int ci = 0; ci < Ci; ++ci) {
        for (int j = 0; j < kt; ++j) {
          S* row = gather.data() + (static_cast<std::size_t>(ci) * kt + j) * HW;
          int src = f + j - pad;
          if (src < 0 || src >= T)
            std::fill(row, row + HW, S(0));
          else
            std::copy(xv.data() + xv.idx4(ci, src, 0, 0),
                      xv.data() + xv.idx4(ci, src, 0, 0) + HW, row);
        }
      }
      StrideMap<S> Y(y.data() + static_cast<std::size_t>(f) * HW, Co, HW,
                     Eigen::OuterStride<>(static_cast<std::ptrdiff_t>(T) * HW));
      Y.noalias() = Wm * CMap<S>(gather.data(), Ci * kt, HW);
      Y.colwise() += bias;
    }
  }
  return t.make(std::move(y), {x, w, b},
                [x, w, b, Ci, T, Co, kt, pad, HW](Tape<S>& t, int self) {
    const Tensor<S>& xv = t.val(x);
    Tensor<S>& dx = t.grad(x);
    Tensor<S> gather({Ci * kt, HW}), dgather({Ci * kt, HW});
    CMap<S> Wm(t.val(w).data(), Co, Ci * kt);
    Map<S> dW(t.grad(w).data(), Co, Ci * kt);
    Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>> db(t.grad(b).data(), Co);
    for (int f = 0; f < T; ++f) {
      for (int ci = 0; ci < Ci; ++ci) {
        for (int j = 0; j < kt; ++j) {
          S* row = gather.data() + (static_cast<std::size_t>(ci) * kt + j) * HW;
          int src = f + j - pad;
          if (src < 0 || src >= T)
            std::fill(row, row + HW, S(0));
          else
            std::copy(xv.data() + xv.idx4(ci, src, 0, 0),
                      xv.data() + xv.idx4(ci, src, 0, 0) + HW, row);
        }
      }
      CStrideMap<S> dY(t.grad(self).data() + static_cast<std::size_t>(f) * HW, Co,
                       HW, Eigen::OuterStride<>(static_cast<std::ptrdiff_t>(T) * HW));
      dW.noalias() += dY * CMap<S>(gather.data(), Ci * kt, HW).transpose();
      db += dY.rowwise().sum();
      Map<S>(dgather.data(), Ci * kt, HW).noalias() = Wm.transpose() * dY;
      for (int ci = 0; ci < Ci; ++ci) {
        for (int j = 0; j < kt; ++j) {
          int src = f + j - pad;
          if (src < 0 || src >= T) continue;
          const S* row = dgather.data() + (static_cast<std::size_t>(ci) * kt + j) * HW;
          S* dst = dx.data() + dx.idx4(ci, src, 0, 0);
          for (int p = 0; p < HW; ++p) dst[p] += row[p];
        }
      }
    }
  });
}

// Average and max over the channel axis: [C,T,H,W] -> [2,T,H,W], slot 0
// average, slot 1 max.  Max ties break toward the lowest channel index so
// the subgradient is deterministic.
template <typename S>
inline int channel_pool_avgmax(Tape<S>& t, int x) {
  const Tensor<S>& xv = t.val(x);
  int C = xv.dim(0), T = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  std::size_t plane = static_cast<std::size_t>(T) * H * W;
  Tensor<S> y({2, T, H, W});
  auto argmax = std::make_shared<std::vector<int>>(plane, 0);
  for (std::size_t p = 0; p < plane; ++p) {
    S sum(0), best = xv[p];
    int bi = 0;
    for (int c = 0; c < C; ++c) {
      S v = xv[static_cast<std::size_t>(c) * plane + p];
      sum += v;
      if (v > best) {
        best = v;
        bi = c;
      }
    }
    y[p] = sum / static_cast<S>(C);
    y[plane + p] = best;
    (*argmax)[p] = bi;
  }
  return t.make(std::move(y), {x}, [x, C, plane, argmax](Tape<S>& t, int self) {
    const Tensor<S>& dy = t.grad(self);
    Tensor<S>& dx = t.grad(x);
    S inv = S(1) / static_cast<S>(C);
    for (std::size_t p = 0; p < plane; ++p) {
      S davg = dy[p] * inv;
      for (int c = 0; c < C; ++c) dx[static_cast<std::size_t>(c) * plane + p] += davg;
      dx[static_cast<std::size_t>((*argmax)[p]) * plane + p] += dy[plane + p];
    }
  });
}

// Batch normalization over the channel axis of a [C,...] tensor.  Training
// mode normalizes with batch statistics and records a running-stat update
// into `updates` (applied later by the caller); eval mode normalizes with
// the stored running statistics.
template <typename S>
inline int batchnorm(Tape<S>& t, int x, int gamma, int beta,
                     const BnBuffers<S>& buffers, bool training,
                     std::type_identity_t<S> momentum, std::type_identity_t<S> eps,
                     std::type_identity_t<BnUpdateList<S>*> updates) {
  const Tensor<S>& xv = t.val(x);
  int C = xv.dim(0);
  std::size_t m = xv.numel() / static_cast<std::size_t>(C);
  auto mean = std::make_shared<std::vector<S>>(C);
  auto invstd = std::make_shared<std::vector<S>>(C);

  if (training) {
    Tensor<S> bmean({C}), bvar({C});
    for (int c = 0; c < C; ++c) {
      const S* p = xv.data() + static_cast<std::size_t>(c) * m;
      S mu(0);
      for (std::size_t i = 0; i < m; ++i) mu += p[i];
      mu /= static_cast<S>(m);
      S var(0);
      for (std::size_t i = 0; i < m; ++i) var += (p[i] - mu) * (p[i] - mu);
      var /= static_cast<S>(m);
      (*mean)[c] = mu;
      (*invstd)[c] = S(1) / std::sqrt(var + eps);
      bmean[c] = mu;
      // Running variance keeps the unbiased estimate, matching the usual
      // train/eval convention.
      bvar[c] = m > 1 ? var * static_cast<S>(m) / static_cast<S>(m - 1) : var;
    }
    if (updates) updates->push_back({const_cast<BnBuffers<S>*>(&buffers),
                                     std::move(bmean), std::move(bvar), momentum});
  } else {
    for (int c = 0; c < C; ++c) {
      (*mean)[c] = buffers.running_mean[c];
      (*invstd)[c] = S(1) / std::sqrt(buffers.running_var[c] + eps);
    }
  }

  const Tensor<S>& gv = t.val(gamma);
  const Tensor<S>& bv = t.val(beta);
  Tensor<S> y(xv.shape());
  for (int c = 0; c < C; ++c) {
    const S* p = xv.data() + static_cast<std::size_t>(c) * m;
    S* q = y.data() + static_cast<std::size_t>(c) * m;
    S mu = (*mean)[c], is = (*invstd)[c], g = gv[c], b = bv[c];
    for (std::size_t i = 0; i < m; ++i) q[i] = g * (p[i] - mu) * is + b;
  }

  return t.make(std::move(y), {x, gamma, beta},
                [x, gamma, beta, C, m, mean, invstd, training](Tape<S>& t, int self) {
    const Tensor<S>& dy = t.grad(self);
    const Tensor<S>& xv = t.val(x);
    const Tensor<S>& gv = t.val(gamma);
    Tensor<S>& dx = t.grad(x);
    Tensor<S>& dg = t.grad(gamma);
    Tensor<S>& db = t.grad(beta);
    S invm = S(1) / static_cast<S>(m);
    for (int c = 0; c < C; ++c) {
      const S* xp = xv.data() + static_cast<std::size_t>(c) * m;
      const S* dp = dy.data() + static_cast<std::size_t>(c) * m;
      S* dxp = dx.data() + static_cast<std::size_t>(c) * m;
      S mu = (*mean)[c], is = (*invstd)[c], g = gv[c];
      S sum_dy(0), sum_dy_xhat(0);
      for (std::size_t i = 0; i < m; ++i) {
        sum_dy += dp[i];
        sum_dy_xhat += dp[i] * (xp[i] - mu) * is;
      }
      dg[c] += sum_dy_xhat;
      db[c] += sum_dy;
      if (training) {
        S mdy = sum_dy * invm, mdyx = sum_dy_xhat * invm;
        for (std::size_t i = 0; i < m; ++i) {
          S xhat = (xp[i] - mu) * is;
          dxp[i] += g * is * (dp[i] - mdy - xhat * mdyx);
        }
      } else {
        for (std::size_t i = 0; i < m; ++i) dxp[i] += dp[i] * g * is;
      }
    }
  });
}

// Mean over H and W: [C,T,H,W] -> [C,T].
template <typename S>
inline int gap_spatial(Tape<S>& t, int x) {
  const Tensor<S>& xv = t.val(x);
  int C = xv.dim(0), T = xv.dim(1);
  std::size_t hw = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
  Tensor<S> y({C, T});
  for (std::size_t ct = 0; ct < static_cast<std::size_t>(C) * T; ++ct) {
    const S* p = xv.data() + ct * hw;
    S s(0);
    for (std::size_t i = 0; i < hw; ++i) s += p[i];
    y[ct] = s / static_cast<S>(hw);
  }
  return t.make(std::move(y), {x}, [x, hw](Tape<S>& t, int self) {
    const Tensor<S>& dy = t.grad(self);
    Tensor<S>& dx = t.grad(x);
    S inv = S(1) / static_cast<S>(hw);
    for (std::size_t ct = 0; ct < dy.numel(); ++ct) {
      S d = dy[ct] * inv;
      S* p = dx.data() + ct * hw;
      for (std::size_t i = 0; i < hw; ++i) p[i] += d;
    }
  });
}

// Per-channel temporal convolution with a per-channel kernel computed at
// runtime: x[C,T,H,W] conv k[C,Kt] -> [C,T,H,W], zero padded by Kt/2.
// Gradients flow into both the map and the kernels.
template <typename S>
inline int dyn_temporal_depthwise(Tape<S>& t, int x, int k) {
  const Tensor<S>& xv = t.val(x);
  const Tensor<S>& kv = t.val(k);
  int C = xv.dim(0), T = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  int Kt = kv.dim(1);
  assert(kv.dim(0) == C && Kt % 2 == 1);
  int pad = Kt / 2, HW = H * W;

  Tensor<S> y({C, T, H, W});
  for (int c = 0; c < C; ++c) {
    for (int f = 0; f < T; ++f) {
      S* dst = y.data() + y.idx4(c, f, 0, 0);
      for (int j = 0; j < Kt; ++j) {
        int src = f + j - pad;
        if (src < 0 || src >= T) continue;
        S kj = kv.at2(c, j);
        const S* sp = xv.data() + xv.idx4(c, src, 0, 0);
        for (int p = 0; p < HW; ++p) dst[p] += kj * sp[p];
      }
    }
  }
  return t.make(std::move(y), {x, k}, [x, k, C, T, Kt, pad, HW](Tape<S>& t, int self) {
    const Tensor<S>& dy = t.grad(self);
    const Tensor<S>& xv = t.val(x);
    const Tensor<S>& kv = t.val(k);
    Tensor<S>& dx = t.grad(x);
    Tensor<S>& dk = t.grad(k);
    for (int c = 0; c < C; ++c) {
      for (int f = 0; f < T; ++f) {
        const S* dp = dy.data() + dy.idx4(c, f, 0, 0);
        for (int j = 0; j < Kt; ++j) {
          int src = f + j - pad;
          if (src < 0 || src >= T) continue;
          S kj = kv.at2(c, j);
          const S* sp = xv.data() + xv.idx4(c, src, 0, 0);
          S* dsp = dx.data() + dx.idx4(c, src, 0, 0);
          S acc(0);
          for (int p = 0; p < HW; ++p) {
            dsp[p] += kj * dp[p];
            acc += dp[p] * sp[p];
          }
          dk.at2(c, j) += acc;
        }
      }
    }
  });
}

// x[C,T,H,W] * g[1,T,H,W], the gate broadcast across channels.
template <typename S>
inline int mul_broadcast_c(Tape<S>& t, int x, int g) {
  const Tensor<S>& xv = t.val(x);
  const Tensor<S>& gv = t.val(g);
  int C = xv.dim(0);
  std::size_t plane = xv.numel() / static_cast<std::size_t>(C);
  assert(gv.dim(0) == 1 && gv.numel() == plane);
  Tensor<S> y(xv.shape());
  for (int c = 0; c < C; ++c) {
    const S* p = xv.data() + static_cast<std::size_t>(c) * plane;
    S* q = y.data() + static_cast<std::size_t>(c) * plane;
    for (std::size_t i = 0; i < plane; ++i) q[i] = p[i] * gv[i];
  }
  return t.make(std::move(y), {x, g}, [x, g, C, plane](Tape<S>& t, int self) {
    const Tensor<S>& dy = t.grad(self);
    const Tensor<S>& xv = t.val(x);
    const Tensor<S>& gv = t.val(g);
    Tensor<S>& dx = t.grad(x);
    Tensor<S>& dg = t.grad(g);
    for (int c = 0; c < C; ++c) {
      std::size_t off = static_cast<std::size_t>(c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        dx[off + i] += dy[off + i] * gv[i];
        dg[i] += dy[off + i] * xv[off + i];
      }
    }
  });
}

// Rows of x[T,D] scaled to unit Euclidean norm; the tiny epsilon inside the
// square root keeps the op differentiable at zero rows.
template <typename S>
inline int l2_normalize_rows(Tape<S>& t, int x) {
  const Tensor<S>& xv = t.val(x);
  int T = xv.dim(0), D = xv.dim(1);
  auto norms = std::make_shared<std::vector<S>>(T);
  Tensor<S> y({T, D});
  for (int r = 0; r < T; ++r) {
    const S* p = xv.data() + static_cast<std::size_t>(r) * D;
    S s(0);
    for (int j = 0; j < D; ++j) s += p[j] * p[j];
    S n = std::sqrt(s + S(1e-12));
    (*norms)[r] = n;
    S* q = y.data() + static_cast<std::size_t>(r) * D;
    for (int j = 0; j < D; ++j) q[j] = p[j] / n;
  }
  return t.make(std::move(y), {x}, [x, T, D, norms](Tape<S>& t, int self) {
    const Tensor<S>& dy = t.grad(self);
    const Tensor<S>& y = t.val(self);
    Tensor<S>& dx = t.grad(x);
    for (int r = 0; r < T; ++r) {
      const S* dp = dy.data() + static_cast<std::size_t>(r) * D;
      const S* yp = y.data() + static_cast<std::size_t>(r) * D;
      S* dxp = dx.data() + static_cast<std::size_t>(r) * D;
      S dot(0);
      for (int j = 0; j < D; ++j) dot += dp[j] * yp[j];
      S inv = S(1) / (*norms)[r];
      for (int j = 0; j < D; ++j) dxp[j] += (dp[j] - yp[j] * dot) * inv;
    }
  });
}

// Mean binary cross-entropy from logits[T,K] against fixed targets, skipping
// masked-out rows.  Uses the max(x,0) - x*y + log1p(exp(-|x|)) form, which is
// finite for any logit.
template <typename S>
inline int bce_with_logits(Tape<S>& t, int logits,
                           std::shared_ptr<const Tensor<S>> targets,
                           std::shared_ptr<const std::vector<char>> row_mask) {
  const Tensor<S>& xv = t.val(logits);
  int T = xv.dim(0), K = xv.dim(1);
  assert(targets->dim(0) == T && targets->dim(1) == K);
  assert(!row_mask || static_cast<int>(row_mask->size()) == T);
  std::size_t m = 0;
  double loss = 0.0;
  for (int r = 0; r < T; ++r) {
    if (row_mask && !(*row_mask)[r]) continue;
    m += static_cast<std::size_t>(K);
    for (int j = 0; j < K; ++j) {
      double v = static_cast<double>(xv.at2(r, j));
      double y = static_cast<double>((*targets).at2(r, j));
      loss += std::max(v, 0.0) - v * y + std::log1p(std::exp(-std::abs(v)));
    }
  }
  S out = m == 0 ? S(0) : static_cast<S>(loss / static_cast<double>(m));
  return t.make(Tensor<S>::scalar(out), {logits},
                [logits, targets, row_mask, T, K, m](Tape<S>& t, int self) {
    if (m == 0) return;
    S d = t.grad(self)[0] / static_cast<S>(m);
    const Tensor<S>& xv = t.val(logits);
    Tensor<S>& dx = t.grad(logits);
    for (int r = 0; r < T; ++r) {
      if (row_mask && !(*row_mask)[r]) continue;
      for (int j = 0; j < K; ++j) {
        double v = static_cast<double>(xv.at2(r, j));
        double sig = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                              : std::exp(v) / (1.0 + std::exp(v));
        dx.at2(r, j) += d * static_cast<S>(sig - static_cast<double>((*targets).at2(r, j)));
      }
    }
  });
}

}  // namespace tp
}  // namespace pes
