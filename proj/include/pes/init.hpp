#pragma once

#include <cmath>

#include "pes/rng.hpp"
#include "pes/tensor.hpp"

namespace pes {

// He-style normal init, std = sqrt(2 / fan_in).
template <typename S>
inline void init_he_normal(Rng& rng, Tensor<S>& w, int fan_in) {
  double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (std::size_t i = 0; i < w.numel(); ++i)
    w[i] = static_cast<S>(rng.normal() * std);
}

// Uniform in [-bound, bound]; the usual recurrent-layer init.
template <typename S>
inline void init_uniform(Rng& rng, Tensor<S>& w, double bound) {
  for (std::size_t i = 0; i < w.numel(); ++i)
    w[i] = static_cast<S>(rng.uniform(-bound, bound));
}

// Bias init, uniform +-1/sqrt(fan_in).  A nonzero bias also keeps ReLU
// pre-activations off the exact kink when a whole input window is zero.
template <typename S>
inline void init_bias(Rng& rng, Tensor<S>& b, int fan_in) {
  init_uniform(rng, b, 1.0 / std::sqrt(static_cast<double>(fan_in)));
}

}  // namespace pes
