#pragma once

#include <Eigen/Dense>
#include <cassert>
#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "pes/tensor.hpp"

namespace pes {

// Trainable tensor.  Gradients accumulate across tapes (one tape per clip)
// until the optimizer consumes and clears them.
template <typename S>
struct Parameter {
  std::string name;
  Tensor<S> value;
  Tensor<S> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<S> v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad.zero(); }
};

// Reverse-mode tape.  Each op records its output value, parent ids and a
// closure that scatters the output gradient back onto the parents.  One
// forward graph per tape, one backward() call per graph.
template <typename S>
class Tape {
 public:
  using BackFn = std::function<void(Tape<S>&, int)>;

  struct Node {
    Tensor<S> value;
    Tensor<S> grad;
    std::vector<int> parents;
    BackFn back;
    Parameter<S>* param = nullptr;
  };

  int make(Tensor<S> value, std::vector<int> parents, BackFn back) {
    nodes_.push_back(Node{std::move(value), Tensor<S>(), std::move(parents),
                          std::move(back), nullptr});
    return static_cast<int>(nodes_.size()) - 1;
  }

  int constant(Tensor<S> value) { return make(std::move(value), {}, nullptr); }

  int param(Parameter<S>& p) {
    int id = constant(p.value);
    nodes_[static_cast<std::size_t>(id)].param = &p;
    return id;
  }

  const Tensor<S>& val(int id) const {
    return nodes_[static_cast<std::size_t>(id)].value;
  }
  Tensor<S>& grad(int id) { return nodes_[static_cast<std::size_t>(id)].grad; }
  const Tensor<S>& grad(int id) const {
    return nodes_[static_cast<std::size_t>(id)].grad;
  }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(root) = seed and sweeps the graph in reverse creation order.
  // Only nodes that can reach root get grad storage or a backward call.
  void backward(int root, S seed = S(1)) {
    assert(root >= 0 && root < static_cast<int>(nodes_.size()));
    assert(nodes_[static_cast<std::size_t>(root)].value.numel() == 1);
    reached_.assign(nodes_.size(), 0);
    std::vector<int> stack{root};
    reached_[static_cast<std::size_t>(root)] = 1;
    while (!stack.empty()) {
      int id = stack.back();
      stack.pop_back();
      for (int p : nodes_[static_cast<std::size_t>(id)].parents) {
        if (!reached_[static_cast<std::size_t>(p)]) {
          reached_[static_cast<std::size_t>(p)] = 1;
          stack.push_back(p);
        }
      }
    }
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (reached_[i]) nodes_[i].grad = Tensor<S>(nodes_[i].value.shape());
    nodes_[static_cast<std::size_t>(root)].grad.fill(seed);
    for (int id = root; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (reached_[static_cast<std::size_t>(id)] && n.back) n.back(*this, id);
    }
  }

  // Adds every reached parameter-leaf gradient into its Parameter, scaled.
  // Callers that run tapes in worker threads collect into private buffers
  // via for_each_param_grad instead.
  void accumulate_param_grads(S scale = S(1)) {
    for_each_param_grad([scale](Parameter<S>* p, const Tensor<S>& g) {
      p->grad.add_scaled_(g, scale);
    });
  }

  void for_each_param_grad(
      const std::function<void(Parameter<S>*, const Tensor<S>&)>& fn) const {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].param && i < reached_.size() && reached_[i])
        fn(nodes_[i].param, nodes_[i].grad);
    }
  }

 private:
  std::vector<Node> nodes_;
  std::vector<char> reached_;
};

namespace tp {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using Map = Eigen::Map<RowMat<S>>;
template <typename S>
using CMap = Eigen::Map<const RowMat<S>>;

template <typename S>
inline int add(Tape<S>& t, int a, int b) {
  Tensor<S> y = t.val(a);
  y.add_(t.val(b));
  return t.make(std::move(y), {a, b}, [a, b](Tape<S>& t, int self) {
    t.grad(a).add_(t.grad(self));
    t.grad(b).add_(t.grad(self));
  });
}

template <typename S>
inline int mul(Tape<S>& t, int a, int b) {
  const Tensor<S>& xa = t.val(a);
  const Tensor<S>& xb = t.val(b);
  assert(xa.numel() == xb.numel());
  Tensor<S> y(xa.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = xa[i] * xb[i];
  return t.make(std::move(y), {a, b}, [a, b](Tape<S>& t, int self) {
    const Tensor<S>& dy = t.grad(self);
    const Tensor<S>& xa = t.val(a);
    const Tensor<S>& xb = t.val(b);
    Tensor<S>& da = t.grad(a);
    Tensor<S>& db = t.grad(b);
    for (std::size_t i = 0; i < dy.numel(); ++i) {
      da[i] += dy[i] * xb[i];
      db[i] += dy[i] * xa[i];
    }
  });
}

// y = k*x + c, elementwise with scalar k, c.
template <typename S>
inline int scale_add(Tape<S>& t, int x, S k, S c) {
  Tensor<S> y = t.val(x);
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = k * y[i] + c;
  return t.make(std::move(y), {x}, [x, k](Tape<S>& t, int self) {
    t.grad(x).add_scaled_(t.grad(self), k);
  });
}

template <typename S>
inline int one_plus(Tape<S>& t, int x) {
  return scale_add(t, x, S(1), S(1));
}

template <typename S>
inline int sigmoid(Tape<S>& t, int x) {
  Tensor<S> y = t.val(x);
  for (std::size_t i = 0; i < y.numel(); ++i) {
    double v = static_cast<double>(y[i]);
    y[i] = static_cast<S>(v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                                   : std::exp(v) / (1.0 + std::exp(v)));
  }
  return t.make(std::move(y), {x}, [x](Tape<S>& t, int self) {
    const Tensor<S>& dy = t.grad(self);
    const Tensor<S>& y = t.val(self);
    Tensor<S>& dx = t.grad(x);
    for (std::size_t i = 0; i < dy.numel(); ++i)
      dx[i] += dy[i] * y[i] * (S(1) - y[i]);
  });
}

template <typename S>
inline int relu(Tape<S>& t, int x) {
  Tensor<S> y = t.val(x);
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = y[i] > S(0) ? y[i] : S(0);
  return t.make(std::move(y), {x}, [x](Tape<S>& t, int self) {
    const Tensor<S>& dy = t.grad(self);
    const Tensor<S>& xv = t.val(x);
    Tensor<S>& dx = t.grad(x);
    for (std::size_t i = 0; i < dy.numel(); ++i)
      if (xv[i] > S(0)) dx[i] += dy[i];
  });
}

template <typename S>
inline int tanh_op(Tape<S>& t, int x) {
  Tensor<S> y = t.val(x);
  for (std::size_t i = 0; i < y.numel(); ++i)
    y[i] = static_cast<S>(std::tanh(static_cast<double>(y[i])));
  return t.make(std::move(y), {x}, [x](Tape<S>& t, int self) {
    const Tensor<S>& dy = t.grad(self);
    const Tensor<S>& y = t.val(self);
    Tensor<S>& dx = t.grad(x);
    for (std::size_t i = 0; i < dy.numel(); ++i)
      dx[i] += dy[i] * (S(1) - y[i] * y[i]);
  });
}

// y[m,n] = a[m,k] * b[k,n]
template <typename S>
inline int matmul(Tape<S>& t, int a, int b) {
  const Tensor<S>& xa = t.val(a);
  const Tensor<S>& xb = t.val(b);
  int m = xa.dim(0), k = xa.dim(1), n = xb.dim(1);
  assert(xb.dim(0) == k);
  Tensor<S> y({m, n});
  Map<S>(y.data(), m, n).noalias() =
      CMap<S>(xa.data(), m, k) * CMap<S>(xb.data(), k, n);
  return t.make(std::move(y), {a, b}, [a, b, m, k, n](Tape<S>& t, int self) {
    CMap<S> dy(t.grad(self).data(), m, n);
    CMap<S> A(t.val(a).data(), m, k);
    CMap<S> B(t.val(b).data(), k, n);
    Map<S>(t.grad(a).data(), m, k).noalias() += dy * B.transpose();
    Map<S>(t.grad(b).data(), k, n).noalias() += A.transpose() * dy;
  });
}

// y[m,n] = x[m,k] * w[n,k]^T + bias[n]
template <typename S>
inline int linear(Tape<S>& t, int x, int w, int b) {
  const Tensor<S>& xv = t.val(x);
  const Tensor<S>& wv = t.val(w);
  int m = xv.dim(0), k = xv.dim(1), n = wv.dim(0);
  assert(wv.dim(1) == k && static_cast<int>(t.val(b).numel()) == n);
  Tensor<S> y({m, n});
  Map<S> Y(y.data(), m, n);
  Y.noalias() = CMap<S>(xv.data(), m, k) * CMap<S>(wv.data(), n, k).transpose();
  Y.rowwise() += Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(
      t.val(b).data(), n);
  return t.make(std::move(y), {x, w, b}, [x, w, b, m, k, n](Tape<S>& t, int self) {
    CMap<S> dy(t.grad(self).data(), m, n);
    CMap<S> X(t.val(x).data(), m, k);
    CMap<S> W(t.val(w).data(), n, k);
    Map<S>(t.grad(x).data(), m, k).noalias() += dy * W;
    Map<S>(t.grad(w).data(), n, k).noalias() += dy.transpose() * X;
    Eigen::Map<Eigen::Matrix<S, 1, Eigen::Dynamic>>(t.grad(b).data(), n) +=
        dy.colwise().sum();
  });
}

template <typename S>
inline int slice_rows(Tape<S>& t, int x, int r0, int r1) {
  const Tensor<S>& xv = t.val(x);
  int cols = xv.dim(1);
  Tensor<S> y({r1 - r0, cols});
  std::copy(xv.data() + static_cast<std::size_t>(r0) * cols,
            xv.data() + static_cast<std::size_t>(r1) * cols, y.data());
  return t.make(std::move(y), {x}, [x, r0, cols](Tape<S>& t, int self) {
    const Tensor<S>& dy = t.grad(self);
    S* dst = t.grad(x).data() + static_cast<std::size_t>(r0) * cols;
    for (std::size_t i = 0; i < dy.numel(); ++i) dst[i] += dy[i];
  });
}

template <typename S>
inline int slice_cols(Tape<S>& t, int x, int c0, int c1) {
  const Tensor<S>& xv = t.val(x);
  int m = xv.dim(0), k = xv.dim(1), w = c1 - c0;
  Tensor<S> y({m, w});
  for (int i = 0; i < m; ++i)
    std::copy(xv.data() + static_cast<std::size_t>(i) * k + c0,
              xv.data() + static_cast<std::size_t>(i) * k + c1,
              y.data() + static_cast<std::size_t>(i) * w);
  return t.make(std::move(y), {x}, [x, c0, m, k, w](Tape<S>& t, int self) {
    const Tensor<S>& dy = t.grad(self);
    Tensor<S>& dx = t.grad(x);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < w; ++j)
        dx[static_cast<std::size_t>(i) * k + c0 + j] +=
            dy[static_cast<std::size_t>(i) * w + j];
  });
}

template <typename S>
inline int concat_cols(Tape<S>& t, int a, int b) {
  const Tensor<S>& xa = t.val(a);
  const Tensor<S>& xb = t.val(b);
  int m = xa.dim(0), p = xa.dim(1), q = xb.dim(1);
  assert(xb.dim(0) == m);
  Tensor<S> y({m, p + q});
  for (int i = 0; i < m; ++i) {
    std::copy(xa.data() + static_cast<std::size_t>(i) * p,
              xa.data() + static_cast<std::size_t>(i + 1) * p,
              y.data() + static_cast<std::size_t>(i) * (p + q));
    std::copy(xb.data() + static_cast<std::size_t>(i) * q,
              xb.data() + static_cast<std::size_t>(i + 1) * q,
              y.data() + static_cast<std::size_t>(i) * (p + q) + p);
  }
  return t.make(std::move(y), {a, b}, [a, b, m, p, q](Tape<S>& t, int self) {
    const Tensor<S>& dy = t.grad(self);
    Tensor<S>& da = t.grad(a);
    Tensor<S>& db = t.grad(b);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < p; ++j)
        da[static_cast<std::size_t>(i) * p + j] +=
            dy[static_cast<std::size_t>(i) * (p + q) + j];
      for (int j = 0; j < q; ++j)
        db[static_cast<std::size_t>(i) * q + j] +=
            dy[static_cast<std::size_t>(i) * (p + q) + p + j];
    }
  });
}

template <typename S>
inline int concat_rows(Tape<S>& t, const std::vector<int>& parts) {
  assert(!parts.empty());
  int cols = t.val(parts[0]).dim(1);
  int rows = 0;
  for (int p : parts) rows += t.val(p).dim(0);
  Tensor<S> y({rows, cols});
  std::size_t off = 0;
  for (int p : parts) {
    const Tensor<S>& xp = t.val(p);
    std::copy(xp.data(), xp.data() + xp.numel(), y.data() + off);
    off += xp.numel();
  }
  return t.make(std::move(y), parts, [parts](Tape<S>& t, int self) {
    const Tensor<S>& dy = t.grad(self);
    std::size_t off = 0;
    for (int p : parts) {
      Tensor<S>& dp = t.grad(p);
      for (std::size_t i = 0; i < dp.numel(); ++i) dp[i] += dy[off + i];
      off += dp.numel();
    }
  });
}

template <typename S>
inline int sum_all(Tape<S>& t, int x) {
  const Tensor<S>& xv = t.val(x);
  S s(0);
  for (std::size_t i = 0; i < xv.numel(); ++i) s += xv[i];
  return t.make(Tensor<S>::scalar(s), {x}, [x](Tape<S>& t, int self) {
    S d = t.grad(self)[0];
    Tensor<S>& dx = t.grad(x);
    for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] += d;
  });
}

template <typename S>
inline int mean_all(Tape<S>& t, int x) {
  S inv = S(1) / static_cast<S>(t.val(x).numel());
  return scale_add(t, sum_all(t, x), inv, S(0));
}

// y[b,a] = x[a,b]^T
template <typename S>
inline int transpose2(Tape<S>& t, int x) {
  const Tensor<S>& xv = t.val(x);
  int m = xv.dim(0), n = xv.dim(1);
  Tensor<S> y({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) y.at2(j, i) = xv.at2(i, j);
  return t.make(std::move(y), {x}, [x, m, n](Tape<S>& t, int self) {
    const Tensor<S>& dy = t.grad(self);
    Tensor<S>& dx = t.grad(x);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) dx.at2(i, j) += dy.at2(j, i);
  });
}

}  // namespace tp
}  // namespace pes
