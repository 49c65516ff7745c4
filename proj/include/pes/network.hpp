#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "pes/astrm.hpp"
#include "pes/recurrent.hpp"

namespace pes {

struct BackboneSpec {
  int in_channels = 3;
  std::vector<int> widths{16, 32, 64};
  std::vector<int> blocks{2, 2, 2};
  std::vector<int> strides{2, 2, 2};
  int bottleneck_ratio = 2;
  bool use_astrm = true;
  int astrm_kernel_t = 3;
  int astrm_ratio_t = 2;
  int astrm_ratio_g = 2;
};

struct ModelSpec {
  BackboneSpec backbone;
  TemporalKind temporal = TemporalKind::bigru;
  int temporal_hidden = 0;  // 0: per-direction hidden = last backbone width
  int num_classes = 0;
  int clip_len = 0;         // fixed T the attention modules are built for
  int embed_dim = 128;
};

// Convolution followed by batchnorm; the building block of the backbone.
template <typename S>
struct ConvBn {
  Parameter<S> w, b;
  Parameter<S> bn_gamma, bn_beta;
  BnBuffers<S> stats;
  std::string name;
  int stride = 1, pad = 0;

  ConvBn() = default;
  ConvBn(const std::string& n, int cin, int cout, int k, int stride_, int pad_,
         Rng& rng)
      : name(n), stride(stride_), pad(pad_) {
    w = Parameter<S>(n + ".w", Tensor<S>({cout, cin, k, k}));
    b = Parameter<S>(n + ".b", Tensor<S>({cout}));
    bn_gamma = Parameter<S>(n + ".bn.gamma", Tensor<S>::full({cout}, S(1)));
    bn_beta = Parameter<S>(n + ".bn.beta", Tensor<S>({cout}));
    stats = BnBuffers<S>(cout);
    init_he_normal(rng, w.value, cin * k * k);
    init_bias(rng, b.value, cin * k * k);
  }

  int forward(Tape<S>& t, int x, bool training, BnUpdateList<S>* updates) {
    int y = tp::conv2d_frames(t, x, t.param(w), t.param(b), stride, pad);
    return tp::batchnorm(t, y, t.param(bn_gamma), t.param(bn_beta), stats,
                         training, S(0.1), S(1e-5), updates);
  }

  std::vector<Parameter<S>*> parameters() {
    return {&w, &b, &bn_gamma, &bn_beta};
  }
};

// Pre-activation-free bottleneck: 1x1 reduce, 3x3 (optionally strided), 1x1
// expand, residual add.  The refinement module sits right after the first
// conv + BN + ReLU, on the reduced channel count.
template <typename S>
struct Bottleneck {
  int cin = 0, cout = 0, mid = 0, stride = 1;
  ConvBn<S> conv1, conv2, conv3;
  std::unique_ptr<ConvBn<S>> proj;
  std::unique_ptr<Astrm<S>> astrm;

  Bottleneck() = default;
  Bottleneck(const std::string& n, int cin_, int cout_, int stride_, int ratio,
             bool use_astrm, const AstrmConfig& acfg_base, Rng& rng)
      : cin(cin_), cout(cout_), stride(stride_) {
    mid = cout / ratio;
    if (mid < 1) mid = 1;
    conv1 = ConvBn<S>(n + ".conv1", cin, mid, 1, 1, 0, rng);
    conv2 = ConvBn<S>(n + ".conv2", mid, mid, 3, stride, 1, rng);
    conv3 = ConvBn<S>(n + ".conv3", mid, cout, 1, 1, 0, rng);
    if (stride != 1 || cin != cout)
      proj = std::make_unique<ConvBn<S>>(n + ".proj", cin, cout, 1, stride, 0, rng);
    if (use_astrm) {
      AstrmConfig acfg = acfg_base;
      acfg.channels = mid;
      astrm = std::make_unique<Astrm<S>>(acfg, rng, n + ".astrm");
    }
  }

  int forward(Tape<S>& t, int x, bool training, BnUpdateList<S>* updates) {
    int h = tp::relu(t, conv1.forward(t, x, training, updates));
    if (astrm) h = astrm->forward(t, h, training, updates);
    h = tp::relu(t, conv2.forward(t, h, training, updates));
    h = conv3.forward(t, h, training, updates);
    int skip = proj ? proj->forward(t, x, training, updates) : x;
    return tp::relu(t, tp::add(t, h, skip));
  }

  std::vector<Parameter<S>*> parameters() {
    std::vector<Parameter<S>*> out;
    for (auto* p : conv1.parameters()) out.push_back(p);
    if (astrm)
      for (auto* p : astrm->parameters()) out.push_back(p);
    for (auto* p : conv2.parameters()) out.push_back(p);
    for (auto* p : conv3.parameters()) out.push_back(p);
    if (proj)
      for (auto* p : proj->parameters()) out.push_back(p);
    return out;
  }
};

template <typename S>
struct ModelOutput {
  int features = -1;    // [T, D] encoder output
  int logits = -1;      // [T, K]
  int scores = -1;      // sigmoid(logits)
  int embeddings = -1;  // [T, embed_dim], unit rows
};

// Frame-level event spotter: spatio-temporal CNN backbone, bidirectional
// recurrent head, per-frame classifier plus a normalized projection used by
// the contrastive objective.
template <typename S>
struct Model {
  ModelSpec spec;
  ConvBn<S> stem;
  std::vector<std::vector<Bottleneck<S>>> stages;
  BiRecurrent<S> temporal;
  Parameter<S> cls_w, cls_b;
  Parameter<S> proj1_w, proj1_b, proj2_w, proj2_b;

  Model() = default;

  Model(const ModelSpec& sp, std::uint64_t seed) : spec(sp) {
    const BackboneSpec& bb = sp.backbone;
    Rng rng(seed, "model-init");
    stem = ConvBn<S>("stem", bb.in_channels, bb.widths.at(0), 3, 2, 1, rng);
    AstrmConfig acfg;
    acfg.t_len = sp.clip_len;
    acfg.kernel_t = bb.astrm_kernel_t;
    acfg.ratio_t = bb.astrm_ratio_t;
    acfg.ratio_g = bb.astrm_ratio_g;
    int cin = bb.widths[0];
    for (std::size_t s = 0; s < bb.widths.size(); ++s) {
      std::vector<Bottleneck<S>> stage;
      for (int b = 0; b < bb.blocks[s]; ++b) {
        std::string name = "stage" + std::to_string(s) + ".block" + std::to_string(b);
        int stride = b == 0 ? bb.strides[s] : 1;
        stage.emplace_back(name, cin, bb.widths[s], stride, bb.bottleneck_ratio,
                            bb.use_astrm, acfg, rng);
        cin = bb.widths[s];
      }
      stages.push_back(std::move(stage));
    }
    int feat = bb.widths.back();
    int hidden = sp.temporal_hidden > 0 ? sp.temporal_hidden : feat;
    temporal = BiRecurrent<S>(sp.temporal, feat, hidden, rng, "temporal");
    int d = temporal.output_dim();
    cls_w = Parameter<S>("classifier.w", Tensor<S>({sp.num_classes, d}));
    cls_b = Parameter<S>("classifier.b", Tensor<S>({sp.num_classes}));
    init_he_normal(rng, cls_w.value, d);
    // Events are sparse; bias the initial detector toward "no event".
    cls_b.value.fill(S(-2));
    proj1_w = Parameter<S>("proj1.w", Tensor<S>({d, d}));
    proj1_b = Parameter<S>("proj1.b", Tensor<S>({d}));
    proj2_w = Parameter<S>("proj2.w", Tensor<S>({sp.embed_dim, d}));
    proj2_b = Parameter<S>("proj2.b", Tensor<S>({sp.embed_dim}));
    init_he_normal(rng, proj1_w.value, d);
    init_bias(rng, proj1_b.value, d);
    init_he_normal(rng, proj2_w.value, d);
    init_bias(rng, proj2_b.value, d);
  }

  // clip: [in_channels, T, H, W]
  ModelOutput<S> forward(Tape<S>& t, const Tensor<S>& clip, bool training,
                         BnUpdateList<S>* updates) {
    check_runtime(clip.dim(1) == spec.clip_len,
                  "clip length " + std::to_string(clip.dim(1)) +
                      " does not match the model's clip_len " +
                      std::to_string(spec.clip_len));
    int x = t.constant(clip);
    x = tp::relu(t, stem.forward(t, x, training, updates));
    for (auto& stage : stages)
      for (auto& block : stage) x = block.forward(t, x, training, updates);
    int pooled = tp::transpose2(t, tp::gap_spatial(t, x));  // [T, C]
    ModelOutput<S> out;
    out.features = temporal.forward(t, pooled);
    out.logits = tp::linear(t, out.features, t.param(cls_w), t.param(cls_b));
    out.scores = tp::sigmoid(t, out.logits);
    int h = tp::relu(t, tp::linear(t, out.features, t.param(proj1_w), t.param(proj1_b)));
    int e = tp::linear(t, h, t.param(proj2_w), t.param(proj2_b));
    out.embeddings = tp::l2_normalize_rows(t, e);
    return out;
  }

  std::vector<Parameter<S>*> parameters() {
    std::vector<Parameter<S>*> out;
    for (auto* p : stem.parameters()) out.push_back(p);
    for (auto& stage : stages)
      for (auto& block : stage)
        for (auto* p : block.parameters()) out.push_back(p);
    for (auto* p : temporal.parameters()) out.push_back(p);
    out.push_back(&cls_w);
    out.push_back(&cls_b);
    out.push_back(&proj1_w);
    out.push_back(&proj1_b);
    out.push_back(&proj2_w);
    out.push_back(&proj2_b);
    return out;
  }

  std::vector<std::pair<std::string, BnBuffers<S>*>> bn_buffers() {
    std::vector<std::pair<std::string, BnBuffers<S>*>> out;
    out.emplace_back(stem.name + ".bn", &stem.stats);
    for (auto& stage : stages)
      for (auto& block : stage) {
        out.emplace_back(block.conv1.name + ".bn", &block.conv1.stats);
        if (block.astrm)
          for (auto& kv : block.astrm->bn_buffers()) out.push_back(kv);
        out.emplace_back(block.conv2.name + ".bn", &block.conv2.stats);
        out.emplace_back(block.conv3.name + ".bn", &block.conv3.stats);
        if (block.proj) out.emplace_back(block.proj->name + ".bn", &block.proj->stats);
      }
    return out;
  }

  std::int64_t count_parameters() {
    std::int64_t n = 0;
    for (auto* p : parameters()) n += static_cast<std::int64_t>(p->value.numel());
    return n;
  }
};

}  // namespace pes
