#pragma once

#include <string>
#include <vector>

#include "pes/init.hpp"
#include "pes/nn_ops.hpp"

namespace pes {

struct AstrmConfig {
  int channels = 0;
  int t_len = 0;      // temporal length the module is built for
  int kernel_t = 3;   // dynamic kernel size, odd
  int ratio_t = 2;    // channel reduction of the temporal-excitation branch
  int ratio_g = 2;    // hidden expansion of the kernel generator
};

// Adaptive spatio-temporal refinement: the input map is scaled by a spatial
// gate and a temporal excitation gate (both residual, 1 + sigmoid), then
// convolved along T with a per-channel kernel predicted from the input's
// global temporal profile.  Output shape equals input shape.
template <typename S>
struct Astrm {
  AstrmConfig cfg;
  std::string name;

  Parameter<S> spatial_w, spatial_b;  // 7x7 over [avg;max] channel pools
  Parameter<S> reduce_w, reduce_b;    // temporal conv, C -> C/ratio_t, k=3
  Parameter<S> bn_gamma, bn_beta;
  BnBuffers<S> bn_stats;
  Parameter<S> expand_w, expand_b;    // pointwise conv, C/ratio_t -> C
  Parameter<S> fc1_w, fc1_b;          // T -> T*ratio_g, shared across channels
  Parameter<S> fc2_w, fc2_b;          // T*ratio_g -> kernel_t
  S bn_momentum = S(0.1);
  S bn_eps = S(1e-5);

  Astrm() = default;

  Astrm(const AstrmConfig& c, Rng& rng, const std::string& prefix)
      : cfg(c), name(prefix) {
    int cr = reduced_channels();
    int th = c.t_len * c.ratio_g;
    spatial_w = Parameter<S>(prefix + ".spatial.w", Tensor<S>({1, 2, 7, 7}));
    spatial_b = Parameter<S>(prefix + ".spatial.b", Tensor<S>({1}));
    reduce_w = Parameter<S>(prefix + ".reduce.w", Tensor<S>({cr, c.channels, 3}));
    reduce_b = Parameter<S>(prefix + ".reduce.b", Tensor<S>({cr}));
    bn_gamma = Parameter<S>(prefix + ".bn.gamma", Tensor<S>::full({cr}, S(1)));
    bn_beta = Parameter<S>(prefix + ".bn.beta", Tensor<S>({cr}));
    bn_stats = BnBuffers<S>(cr);
    expand_w = Parameter<S>(prefix + ".expand.w", Tensor<S>({c.channels, cr, 1}));
    expand_b = Parameter<S>(prefix + ".expand.b", Tensor<S>({c.channels}));
    fc1_w = Parameter<S>(prefix + ".fc1.w", Tensor<S>({th, c.t_len}));
    fc1_b = Parameter<S>(prefix + ".fc1.b", Tensor<S>({th}));
    fc2_w = Parameter<S>(prefix + ".fc2.w", Tensor<S>({c.kernel_t, th}));
    fc2_b = Parameter<S>(prefix + ".fc2.b", Tensor<S>({c.kernel_t}));
    init_he_normal(rng, spatial_w.value, 2 * 7 * 7);
    init_bias(rng, spatial_b.value, 2 * 7 * 7);
    init_he_normal(rng, reduce_w.value, c.channels * 3);
    init_bias(rng, reduce_b.value, c.channels * 3);
    init_he_normal(rng, expand_w.value, cr);
    init_bias(rng, expand_b.value, cr);
    init_he_normal(rng, fc1_w.value, c.t_len);
    init_bias(rng, fc1_b.value, c.t_len);
    init_he_normal(rng, fc2_w.value, th);
    init_bias(rng, fc2_b.value, th);
  }

  int reduced_channels() const {
    int cr = cfg.channels / cfg.ratio_t;
    return cr < 1 ? 1 : cr;
  }

  // sigmoid(conv7x7([avgpool_c; maxpool_c])) -> [1,T,H,W]
  int spatial_gate(Tape<S>& t, int x) {
    int pooled = tp::channel_pool_avgmax(t, x);
    int conv = tp::conv2d_frames(t, pooled, t.param(spatial_w),
                                 t.param(spatial_b), 1, 3);
    return tp::sigmoid(t, conv);
  }

  // sigmoid(conv1x1x1(BN(ReLU(conv3x1x1(x))))) -> [C,T,H,W]
  int temporal_gate(Tape<S>& t, int x, bool training, BnUpdateList<S>* updates) {
    int h = tp::conv_temporal(t, x, t.param(reduce_w), t.param(reduce_b));
    h = tp::relu(t, h);
    h = tp::batchnorm(t, h, t.param(bn_gamma), t.param(bn_beta), bn_stats,
                      training, bn_momentum, bn_eps, updates);
    h = tp::conv_temporal(t, h, t.param(expand_w), t.param(expand_b));
    return tp::sigmoid(t, h);
  }

  // sigmoid(FC(ReLU(FC(GAP_hw(x))))) -> per-channel kernels [C,kernel_t]
  int dynamic_kernels(Tape<S>& t, int x) {
    int g = tp::gap_spatial(t, x);  // [C,T]
    int h = tp::linear(t, g, t.param(fc1_w), t.param(fc1_b));
    h = tp::relu(t, h);
    h = tp::linear(t, h, t.param(fc2_w), t.param(fc2_b));
    return tp::sigmoid(t, h);
  }

  // y = ((x * (1 + spatial)) * (1 + temporal)) conv dynamic_kernels(x)
  int forward(Tape<S>& t, int x, bool training, BnUpdateList<S>* updates) {
    assert(t.val(x).dim(0) == cfg.channels && t.val(x).dim(1) == cfg.t_len);
    int fs = spatial_gate(t, x);
    int x1 = tp::mul_broadcast_c(t, x, tp::one_plus(t, fs));
    int ft = temporal_gate(t, x, training, updates);
    int x2 = tp::mul(t, x1, tp::one_plus(t, ft));
    int k = dynamic_kernels(t, x);
    return tp::dyn_temporal_depthwise(t, x2, k);
  }

  std::vector<Parameter<S>*> parameters() {
    return {&spatial_w, &spatial_b, &reduce_w, &reduce_b, &bn_gamma, &bn_beta,
            &expand_w,  &expand_b,  &fc1_w,    &fc1_b,    &fc2_w,    &fc2_b};
  }

  std::vector<std::pair<std::string, BnBuffers<S>*>> bn_buffers() {
    return {{name + ".bn", &bn_stats}};
  }
};

}  // namespace pes
