#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "enclap/tensor.hpp"

namespace enclap::ad {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.01;
  double epsilon = 1e-8;
};

struct AdamWState {
  AdamWConfig config;
  std::uint64_t step_count = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

/// One decoupled-weight-decay Adam update of a single parameter buffer.
/// `step` is the 1-based step index used for bias correction.
void adamw_update(std::span<double> theta, std::span<const double> grad, std::span<double> m,
                  std::span<double> v, std::uint64_t step, const AdamWConfig& config, double lr);

/// Updates every tensor in `params` from its accumulated gradient (a tensor
/// without a gradient buffer counts as zero gradient). Moments are created
/// on the first call and must keep matching the parameter list afterwards.
void adamw_step(std::span<Tensor> params, AdamWState& state, double lr);

/// Explicit-gradient form: grads[i] pairs with params[i].
void adamw_step(std::span<Tensor> params, std::span<const std::vector<double>> grads, AdamWState& state,
                double lr);

void zero_grad(std::span<Tensor> params);

/// Rescales accumulated gradients so their global L2 norm is at most
/// max_norm. Returns the norm before clipping.
double clip_grad_norm(std::span<Tensor> params, double max_norm);

/// Inverse-square-root schedule with linear warm-up. warmup_steps = 0 is the
/// warm-up-free variant: lr(step) = peak / sqrt(step).
struct LRSchedule {
  double peak_lr = 6.5e-5;
  std::uint64_t warmup_steps = 2000;
};

double lr_at(std::uint64_t step, const LRSchedule& schedule);

}  // namespace enclap::ad
