#pragma once

#include <cmath>
#include <deque>
#include <memory>
#include <utility>
#include <vector>

#include "pes/common.hpp"
#include "pes/dataset.hpp"
#include "pes/nn_ops.hpp"
#include "pes/rng.hpp"
#include "pes/tape.hpp"

namespace pes {

struct LossConfig {
  double tau = 0.07;
  double lambda_sic = 0.001;
  double mixup_alpha = 0.1;
  bool mixup_enabled = true;

  void validate() const {
    check_config(tau > 0.0, "loss.tau must be > 0");
    check_config(lambda_sic >= 0.0, "loss.lambda_sic must be >= 0");
    check_config(mixup_alpha > 0.0, "loss.mixup_alpha must be > 0");
  }
};

inline double draw_mixup_lambda(Rng& rng, double alpha) {
  return rng.beta(alpha, alpha);
}

// Convex frame-and-label blend of two equally shaped clips.  The endpoints
// return the untouched input so lambda=1 is bit-exact.  The mixed clip keeps
// clip a's identity fields; its usable length is the shorter of the two.
inline VideoClip mixup(const VideoClip& a, const VideoClip& b, float lambda) {
  check_runtime(a.frames.shape() == b.frames.shape() &&
                    a.labels.shape() == b.labels.shape(),
                "mixup requires equally shaped clips, got " +
                    a.frames.shape_str() + " vs " + b.frames.shape_str());
  if (lambda == 1.0f) return a;
  if (lambda == 0.0f) return b;
  VideoClip out;
  out.video_id = a.video_id;
  out.start_frame = a.start_frame;
  out.valid_len = std::min(a.valid_len, b.valid_len);
  out.frames = Tensor<float>(a.frames.shape());
  out.labels = Tensor<float>(a.labels.shape());
  const float mu = 1.0f - lambda;
  for (std::size_t i = 0; i < out.frames.numel(); ++i)
    out.frames[i] = lambda * a.frames[i] + mu * b.frames[i];
  for (std::size_t i = 0; i < out.labels.numel(); ++i)
    out.labels[i] = lambda * a.labels[i] + mu * b.labels[i];
  return out;
}

// Per-class FIFO store of detached embeddings with the label weight each one
// carried when it was produced.  Total capacity is split evenly across
// classes; the leftover slots stay unused.
template <typename S>
class MemoryBank {
 public:
  struct Entry {
    std::vector<S> z;
    S w = S(1);
  };

  MemoryBank() = default;
  MemoryBank(int num_classes, int total_capacity) {
    check_config(num_classes >= 1, "memory bank needs >= 1 class");
    check_config(total_capacity >= num_classes,
                 "memory bank capacity must be >= the class count");
    per_class_ = total_capacity / num_classes;
    queues_.resize(static_cast<std::size_t>(num_classes));
  }

  int num_classes() const { return static_cast<int>(queues_.size()); }
  int per_class_capacity() const { return per_class_; }
  int size(int c) const {
    return static_cast<int>(queues_[static_cast<std::size_t>(c)].size());
  }
  const std::deque<Entry>& entries(int c) const {
    return queues_[static_cast<std::size_t>(c)];
  }

  bool has_negative_for(int c) const {
    for (int k = 0; k < num_classes(); ++k)
      if (k != c && size(k) > 0) return true;
    return false;
  }

  void push(std::vector<S> z, int c, S w) {
    check_runtime(c >= 0 && c < num_classes(), "memory bank class out of range");
    check_runtime(w > S(0) && w <= S(1),
                  "memory bank weights must lie in (0, 1]");
    double n = 0.0;
    for (S v : z) n += static_cast<double>(v) * static_cast<double>(v);
    check_runtime(std::abs(std::sqrt(n) - 1.0) <= 1e-3,
                  "memory bank embeddings must be unit-norm");
    auto& q = queues_[static_cast<std::size_t>(c)];
    if (static_cast<int>(q.size()) == per_class_) q.pop_front();
    q.push_back(Entry{std::move(z), w});
  }

  void clear() {
    for (auto& q : queues_) q.clear();
  }

 private:
  int per_class_ = 0;
  std::vector<std::deque<Entry>> queues_;
};

struct ContrastiveSample {
  int row = 0;
  int class_id = 0;
  float weight = 1.0f;
};

// One contrastive sample per (frame, class) cell with positive label weight;
// background rows contribute nothing.
inline std::vector<ContrastiveSample> collect_contrastive_samples(
    const Tensor<float>& labels, int valid_len) {
  std::vector<ContrastiveSample> out;
  const int k = labels.dim(1);
  for (int r = 0; r < valid_len; ++r)
    for (int c = 0; c < k; ++c)
      if (labels.at2(r, c) > 0.0f) out.push_back({r, c, labels.at2(r, c)});
  return out;
}

// Unweighted instance-contrastive loss over plain vectors.  Positives are the
// bank entries of the query's class, negatives all other entries; the
// log-ratio carries a leading minus so minimizing pulls same-class embeddings
// together.  Samples with no positives or no negatives are skipped; the
// result averages over contributing samples and is 0 when none contribute.
template <typename S>
double ic_loss(const std::vector<std::pair<std::vector<S>, int>>& batch,
               const MemoryBank<S>& bank, double tau) {
  check_config(tau > 0.0, "tau must be > 0");
  double total = 0.0;
  int contributing = 0;
  for (const auto& [z, c] : batch) {
    const auto& pos = bank.entries(c);
    if (pos.empty() || !bank.has_negative_for(c)) continue;

    std::vector<double> neg_logits;
    for (int k = 0; k < bank.num_classes(); ++k) {
      if (k == c) continue;
      for (const auto& e : bank.entries(k)) {
        double dot = 0.0;
        for (std::size_t d = 0; d < z.size(); ++d)
          dot += static_cast<double>(z[d]) * static_cast<double>(e.z[d]);
        neg_logits.push_back(dot / tau);
      }
    }
    double mx = neg_logits[0];
    for (double v : neg_logits) mx = std::max(mx, v);
    double se = 0.0;
    for (double v : neg_logits) se += std::exp(v - mx);
    double lse = mx + std::log(se);

    double sum_log_ratio = 0.0;
    for (const auto& e : pos) {
      double dot = 0.0;
      for (std::size_t d = 0; d < z.size(); ++d)
        dot += static_cast<double>(z[d]) * static_cast<double>(e.z[d]);
      sum_log_ratio += dot / tau - lse;
    }
    total += -sum_log_ratio / static_cast<double>(pos.size());
    ++contributing;
  }
  return contributing == 0 ? 0.0 : total / contributing;
}

// Weighted contrastive loss as a tape op.  Queries are rows of the embedding
// node; bank entries enter the dot products scaled by their stored weights,
// and each sample's positive-set mean is divided by the sample's own label
// weight.  Bank contents are captured by value, so the op stays valid if the
// bank mutates after recording.
template <typename S>
int soft_ic(Tape<S>& t, int emb, const std::vector<ContrastiveSample>& samples,
            const MemoryBank<S>& bank, double tau) {
  check_config(tau > 0.0, "tau must be > 0");
  const Tensor<S>& Z = t.val(emb);
  const int dim = Z.dim(1);

  struct RowGrad {
    int row;
    std::vector<double> g;
  };
  auto grads = std::make_shared<std::vector<RowGrad>>();
  double total = 0.0;
  int contributing = 0;

  for (const ContrastiveSample& s : samples) {
    check_runtime(s.weight != 0.0f, "contrastive sample weight must be nonzero");
    check_runtime(s.row >= 0 && s.row < Z.dim(0),
                  "contrastive sample row out of range");
    const auto& pos = bank.entries(s.class_id);
    if (pos.empty() || !bank.has_negative_for(s.class_id)) continue;

    const S* zi = Z.data() + static_cast<std::size_t>(s.row) * dim;
    const double m = static_cast<double>(pos.size());
    const double omega = static_cast<double>(s.weight);
    std::vector<double> g(static_cast<std::size_t>(dim), 0.0);

    double sum_pos = 0.0;
    for (const auto& e : pos) {
      double dot = 0.0;
      for (int d = 0; d < dim; ++d)
        dot += static_cast<double>(zi[d]) * static_cast<double>(e.w) *
               static_cast<double>(e.z[static_cast<std::size_t>(d)]);
      sum_pos += dot / tau;
      const double cp = -1.0 / (omega * m * tau) * static_cast<double>(e.w);
      for (int d = 0; d < dim; ++d)
        g[static_cast<std::size_t>(d)] +=
            cp * static_cast<double>(e.z[static_cast<std::size_t>(d)]);
    }

    std::vector<double> neg_logits;
    std::vector<const typename MemoryBank<S>::Entry*> negs;
    for (int k = 0; k < bank.num_classes(); ++k) {
      if (k == s.class_id) continue;
      for (const auto& e : bank.entries(k)) {
        double dot = 0.0;
        for (int d = 0; d < dim; ++d)
          dot += static_cast<double>(zi[d]) * static_cast<double>(e.w) *
                 static_cast<double>(e.z[static_cast<std::size_t>(d)]);
        neg_logits.push_back(dot / tau);
        negs.push_back(&e);
      }
    }
    double mx = neg_logits[0];
    for (double v : neg_logits) mx = std::max(mx, v);
    double se = 0.0;
    for (double v : neg_logits) se += std::exp(v - mx);
    double lse = mx + std::log(se);
    for (std::size_t k = 0; k < negs.size(); ++k) {
      const double p = std::exp(neg_logits[k] - lse);
      const double cn = p / (omega * tau) * static_cast<double>(negs[k]->w);
      for (int d = 0; d < dim; ++d)
        g[static_cast<std::size_t>(d)] +=
            cn * static_cast<double>(negs[k]->z[static_cast<std::size_t>(d)]);
    }

    total += -(sum_pos - m * lse) / (omega * m);
    grads->push_back({s.row, std::move(g)});
    ++contributing;
  }

  const double inv = contributing == 0 ? 0.0 : 1.0 / contributing;
  const S value = static_cast<S>(total * inv);
  return t.make(Tensor<S>::scalar(value), {emb},
                [emb, grads, inv, dim](Tape<S>& t, int self) {
                  const S d0 = t.grad(self)[0];
                  Tensor<S>& dz = t.grad(emb);
                  for (const auto& rg : *grads) {
                    S* dst = dz.data() + static_cast<std::size_t>(rg.row) * dim;
                    for (int d = 0; d < dim; ++d)
                      dst[d] += d0 * static_cast<S>(
                                         rg.g[static_cast<std::size_t>(d)] * inv);
                  }
                });
}

// Node ids of the two objective terms; -1 when the contrastive term did not
// contribute to the graph.
struct CombinedLossParts {
  int bce = -1;
  int sic = -1;
};

// Total objective: masked frame-wise BCE plus the weighted contrastive term.
// With lambda_sic == 0 the returned node IS the BCE node, so the two losses
// agree bit for bit in that configuration.
template <typename S>
int combined_loss(Tape<S>& t, int logits,
                  std::shared_ptr<const Tensor<S>> targets,
                  std::shared_ptr<const std::vector<char>> row_mask, int emb,
                  const std::vector<ContrastiveSample>& samples,
                  const MemoryBank<S>& bank, const LossConfig& cfg,
                  CombinedLossParts* parts = nullptr) {
  int bce = tp::bce_with_logits(t, logits, std::move(targets),
                                std::move(row_mask));
  if (parts) parts->bce = bce;
  if (cfg.lambda_sic <= 0.0 || samples.empty()) return bce;
  int sic = soft_ic(t, emb, samples, bank, cfg.tau);
  if (parts) parts->sic = sic;
  int scaled = tp::scale_add(t, sic, static_cast<S>(cfg.lambda_sic), S(0));
  return tp::add(t, bce, scaled);
}

}  // namespace pes
