#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "pes/init.hpp"
#include "pes/nn_ops.hpp"

namespace pes {

enum class TemporalKind { bigru, bilstm, identity };

inline const char* temporal_kind_name(TemporalKind k) {
  switch (k) {
    case TemporalKind::bigru: return "bigru";
    case TemporalKind::bilstm: return "bilstm";
    default: return "identity";
  }
}

// One direction's weights; gates is 3 for GRU, 4 for LSTM.
template <typename S>
struct RecurrentDirection {
  Parameter<S> w_ih, b_ih, w_hh, b_hh;

  RecurrentDirection() = default;
  RecurrentDirection(const std::string& prefix, int gates, int input_dim,
                     int hidden, Rng& rng) {
    w_ih = Parameter<S>(prefix + ".w_ih", Tensor<S>({gates * hidden, input_dim}));
    b_ih = Parameter<S>(prefix + ".b_ih", Tensor<S>({gates * hidden}));
    w_hh = Parameter<S>(prefix + ".w_hh", Tensor<S>({gates * hidden, hidden}));
    b_hh = Parameter<S>(prefix + ".b_hh", Tensor<S>({gates * hidden}));
    double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    init_uniform(rng, w_ih.value, bound);
    init_uniform(rng, b_ih.value, bound);
    init_uniform(rng, w_hh.value, bound);
    init_uniform(rng, b_hh.value, bound);
  }

  std::vector<Parameter<S>*> parameters() {
    return {&w_ih, &b_ih, &w_hh, &b_hh};
  }
};

// Bidirectional recurrent encoder over a [T,D] sequence.  Both directions
// run the same cell; the backward direction consumes the sequence reversed
// and its states are written back to their original positions, so the
// output row t is [forward_h_t ; backward_h_t].  `identity` passes the
// input through untouched.
template <typename S>
struct BiRecurrent {
  TemporalKind kind = TemporalKind::bigru;
  int input_dim = 0;
  int hidden = 0;
  RecurrentDirection<S> fwd, bwd;

  BiRecurrent() = default;
  BiRecurrent(TemporalKind k, int in_dim, int h, Rng& rng,
              const std::string& prefix)
      : kind(k), input_dim(in_dim), hidden(h) {
    if (kind == TemporalKind::identity) return;
    int gates = kind == TemporalKind::bigru ? 3 : 4;
    fwd = RecurrentDirection<S>(prefix + ".fwd", gates, in_dim, h, rng);
    bwd = RecurrentDirection<S>(prefix + ".bwd", gates, in_dim, h, rng);
  }

  int output_dim() const {
    return kind == TemporalKind::identity ? input_dim : 2 * hidden;
  }

  // x: [T, input_dim] -> [T, output_dim]
  int forward(Tape<S>& t, int x) {
    if (kind == TemporalKind::identity) return x;
    int T = t.val(x).dim(0);
    std::vector<int> hf = run_direction(t, x, fwd, false, T);
    std::vector<int> hb = run_direction(t, x, bwd, true, T);
    std::vector<int> rows(static_cast<std::size_t>(T));
    for (int i = 0; i < T; ++i)
      rows[static_cast<std::size_t>(i)] = tp::concat_cols(t, hf[i], hb[i]);
    return tp::concat_rows(t, rows);
  }

  std::vector<Parameter<S>*> parameters() {
    if (kind == TemporalKind::identity) return {};
    std::vector<Parameter<S>*> out = fwd.parameters();
    for (auto* p : bwd.parameters()) out.push_back(p);
    return out;
  }

 private:
  // Returns per-position hidden states (index = original position).
  std::vector<int> run_direction(Tape<S>& t, int x, RecurrentDirection<S>& dir,
                                 bool reverse, int T) {
    int H = hidden;
    int gi_all = tp::linear(t, x, t.param(dir.w_ih), t.param(dir.b_ih));
    int h = t.constant(Tensor<S>({1, H}));
    int c = kind == TemporalKind::bilstm ? t.constant(Tensor<S>({1, H})) : -1;
    std::vector<int> states(static_cast<std::size_t>(T));
    for (int step = 0; step < T; ++step) {
      int pos = reverse ? T - 1 - step : step;
      int gi = tp::slice_rows(t, gi_all, pos, pos + 1);
      int gh = tp::linear(t, h, t.param(dir.w_hh), t.param(dir.b_hh));
      if (kind == TemporalKind::bigru) {
        int r = tp::sigmoid(t, tp::add(t, tp::slice_cols(t, gi, 0, H),
                                       tp::slice_cols(t, gh, 0, H)));
        int z = tp::sigmoid(t, tp::add(t, tp::slice_cols(t, gi, H, 2 * H),
                                       tp::slice_cols(t, gh, H, 2 * H)));
        int n = tp::tanh_op(
            t, tp::add(t, tp::slice_cols(t, gi, 2 * H, 3 * H),
                       tp::mul(t, r, tp::slice_cols(t, gh, 2 * H, 3 * H))));
        int zn = tp::mul(t, tp::scale_add(t, z, S(-1), S(1)), n);
        h = tp::add(t, zn, tp::mul(t, z, h));
      } else {
        int pre = tp::add(t, gi, gh);
        int ig = tp::sigmoid(t, tp::slice_cols(t, pre, 0, H));
        int fg = tp::sigmoid(t, tp::slice_cols(t, pre, H, 2 * H));
        int gg = tp::tanh_op(t, tp::slice_cols(t, pre, 2 * H, 3 * H));
        int og = tp::sigmoid(t, tp::slice_cols(t, pre, 3 * H, 4 * H));
        c = tp::add(t, tp::mul(t, fg, c), tp::mul(t, ig, gg));
        h = tp::mul(t, og, tp::tanh_op(t, c));
      }
      states[static_cast<std::size_t>(pos)] = h;
    }
    return states;
  }
};

}  // namespace pes
