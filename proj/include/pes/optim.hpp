#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "pes/common.hpp"
#include "pes/tape.hpp"
#include "pes/tensor.hpp"

namespace pes {

struct OptimConfig {
  double base_lr = 1e-3;
  double warmup_lr = 1e-5;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool sam_enabled = true;
  bool adaptive = true;  // scale the perturbation radius per element
  double rho = 2.0;
  double eta_asam = 0.01;
  int warmup_epochs = 3;
  int total_epochs = 30;

  void validate() const {
    check_config(base_lr > 0.0, "optim.base_lr must be > 0");
    check_config(warmup_lr >= 0.0, "optim.warmup_lr must be >= 0");
    check_config(weight_decay >= 0.0, "optim.weight_decay must be >= 0");
    check_config(beta1 >= 0.0 && beta1 < 1.0, "optim.beta1 must be in [0,1)");
    check_config(beta2 >= 0.0 && beta2 < 1.0, "optim.beta2 must be in [0,1)");
    check_config(eps > 0.0, "optim.eps must be > 0");
    check_config(rho >= 0.0, "optim.rho must be >= 0");
    check_config(eta_asam > 0.0, "optim.eta_asam must be > 0");
    check_config(total_epochs >= 1, "optim.total_epochs must be >= 1");
    check_config(warmup_epochs >= 0 && warmup_epochs <= total_epochs,
                 "optim.warmup_epochs must lie in [0, total_epochs]");
  }
};

// Linear ramp from warmup_lr to base_lr over the warmup span, then a cosine
// decay that reaches 0 at epoch_fraction == 1.
inline double lr_at(double epoch_fraction, const OptimConfig& cfg) {
  double f = std::min(std::max(epoch_fraction, 0.0), 1.0);
  double fw = static_cast<double>(cfg.warmup_epochs) /
              static_cast<double>(cfg.total_epochs);
  if (fw > 0.0 && f < fw)
    return cfg.warmup_lr + (cfg.base_lr - cfg.warmup_lr) * (f / fw);
  if (f >= 1.0) return 0.0;
  double u = fw < 1.0 ? (f - fw) / (1.0 - fw) : 1.0;
  return 0.5 * cfg.base_lr * (1.0 + std::cos(3.14159265358979323846 * u));
}

// Adaptive-moment optimizer with decoupled weight decay.  Moment buffers are
// created lazily on the first step and stay aligned with the parameter list,
// which must not change between steps.
template <typename S>
class AdamW {
 public:
  struct Slot {
    Tensor<S> m, v;
  };

  AdamW(OptimConfig cfg, std::vector<Parameter<S>*> params)
      : cfg_(std::move(cfg)), params_(std::move(params)) {
    slots_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      slots_[i].m = Tensor<S>(params_[i]->value.shape());
      slots_[i].v = Tensor<S>(params_[i]->value.shape());
    }
  }

  // Consumes the gradients currently held by the parameters.
  void step(double lr) {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, step_count_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, step_count_);
    for (std::size_t p = 0; p < params_.size(); ++p) {
      Parameter<S>& par = *params_[p];
      Slot& sl = slots_[p];
      for (std::size_t i = 0; i < par.value.numel(); ++i) {
        const double g = static_cast<double>(par.grad[i]);
        const double m = cfg_.beta1 * static_cast<double>(sl.m[i]) +
                         (1.0 - cfg_.beta1) * g;
        const double v = cfg_.beta2 * static_cast<double>(sl.v[i]) +
                         (1.0 - cfg_.beta2) * g * g;
        sl.m[i] = static_cast<S>(m);
        sl.v[i] = static_cast<S>(v);
        const double mh = m / bc1;
        const double vh = v / bc2;
        const double w = static_cast<double>(par.value[i]);
        par.value[i] = static_cast<S>(
            w - lr * (mh / (std::sqrt(vh) + cfg_.eps) + cfg_.weight_decay * w));
      }
    }
  }

  const std::vector<Parameter<S>*>& params() const { return params_; }
  std::vector<Slot>& slots() { return slots_; }
  const std::vector<Slot>& slots() const { return slots_; }
  long step_count() const { return step_count_; }
  void set_step_count(long n) { step_count_ = n; }

 private:
  OptimConfig cfg_;
  std::vector<Parameter<S>*> params_;
  std::vector<Slot> slots_;
  long step_count_ = 0;
};

// Ascent offsets for the current gradients.  Plain variant points along the
// gradient with radius rho; the adaptive variant stretches the neighborhood
// per element by |w| + eta so the radius follows each weight's own scale.
template <typename S>
std::vector<Tensor<S>> sam_perturbations(
    const std::vector<Parameter<S>*>& params, bool adaptive, double rho,
    double eta) {
  std::vector<Tensor<S>> eps(params.size());
  double norm_sq = 0.0;
  for (const Parameter<S>* p : params) {
    for (std::size_t i = 0; i < p->grad.numel(); ++i) {
      const double g = static_cast<double>(p->grad[i]);
      if (adaptive) {
        const double t = std::abs(static_cast<double>(p->value[i])) + eta;
        norm_sq += t * g * t * g;
      } else {
        norm_sq += g * g;
      }
    }
  }
  const double scale = rho / (std::sqrt(norm_sq) + 1e-12);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const Parameter<S>& p = *params[pi];
    eps[pi] = Tensor<S>(p.value.shape());
    for (std::size_t i = 0; i < p.grad.numel(); ++i) {
      const double g = static_cast<double>(p.grad[i]);
      if (adaptive) {
        const double t = std::abs(static_cast<double>(p.value[i])) + eta;
        eps[pi][i] = static_cast<S>(scale * t * t * g);
      } else {
        eps[pi][i] = static_cast<S>(scale * g);
      }
    }
  }
  return eps;
}

// Sharpness-aware wrapper.  Each step evaluates the loss twice: once at the
// current weights to find the ascent direction, once at the perturbed point
// for the gradient the base optimizer consumes.  The loss callback receives
// first_pass=true only for the first evaluation, so side effects
// (normalization statistics) update once per step.
template <typename S>
class SamOptimizer {
 public:
  struct StepResult {
    double loss = 0.0;
    bool skipped = false;
  };

  SamOptimizer(OptimConfig cfg, std::vector<Parameter<S>*> params)
      : cfg_(cfg), base_(cfg, std::move(params)) {}

  StepResult step(const std::function<double(bool)>& loss_fn, double lr) {
    const auto& params = base_.params();
    zero_grads();
    StepResult res;
    res.loss = loss_fn(true);

    if (!grads_finite()) return skip(res);
    if (!cfg_.sam_enabled) {
      base_.step(lr);
      zero_grads();
      return res;
    }

    std::vector<Tensor<S>> eps =
        sam_perturbations(params, cfg_.adaptive, cfg_.rho, cfg_.eta_asam);
    std::vector<Tensor<S>> saved(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      saved[i] = params[i]->value;
      params[i]->value.add_(eps[i]);
    }

    zero_grads();
    loss_fn(false);

    for (std::size_t i = 0; i < params.size(); ++i)
      params[i]->value = std::move(saved[i]);

    if (!grads_finite()) return skip(res);
    base_.step(lr);
    zero_grads();
    return res;
  }

  AdamW<S>& base() { return base_; }
  const AdamW<S>& base() const { return base_; }
  int skipped_steps() const { return skipped_; }
  void set_skipped_steps(int n) { skipped_ = n; }

 private:
  void zero_grads() {
    for (Parameter<S>* p : base_.params()) p->zero_grad();
  }

  bool grads_finite() const {
    for (const Parameter<S>* p : base_.params())
      if (!p->grad.all_finite()) return false;
    return true;
  }

  StepResult skip(StepResult res) {
    ++skipped_;
    zero_grads();
    res.skipped = true;
    return res;
  }

  OptimConfig cfg_;
  AdamW<S> base_;
  int skipped_ = 0;
};

}  // namespace pes
