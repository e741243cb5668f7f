#include "enclap/optim.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace enclap::ad {

void adamw_update(std::span<double> theta, std::span<const double> grad, std::span<double> m,
                  std::span<double> v, std::uint64_t step, const AdamWConfig& config, double lr) {
  if (grad.size() != theta.size() || m.size() != theta.size() || v.size() != theta.size()) {
    throw ShapeError("adamw_update: parameter, gradient and moment sizes differ");
  }
  if (!(lr > 0.0)) throw std::invalid_argument("adamw_update: learning rate must be positive");
  ensure_finite(grad, "adamw gradient");
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * grad[i];
    v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * grad[i] * grad[i];
    const double m_hat = m[i] / bc1;
    const double v_hat = v[i] / bc2;
    theta[i] -= lr * config.weight_decay * theta[i];
    const double denom = std::sqrt(v_hat) + config.epsilon;
    if (denom > 0.0) theta[i] -= lr * m_hat / denom;
  }
}

namespace {

void ensure_moments(std::span<Tensor> params, AdamWState& state) {
  if (state.first_moment.empty() && state.second_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.numel(), 0.0);
      state.second_moment.emplace_back(p.numel(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
    throw ShapeError("adamw_step: optimiser state tracks " + std::to_string(state.first_moment.size()) +
                     " tensors, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.first_moment[i].size() != params[i].numel() || state.second_moment[i].size() != params[i].numel()) {
      throw ShapeError("adamw_step: moment shape mismatch for parameter " + std::to_string(i));
    }
  }
}

}  // namespace

void adamw_step(std::span<Tensor> params, AdamWState& state, double lr) {
  ensure_moments(params, state);
  const auto step = state.step_count + 1;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    std::vector<double> zero;
    std::span<const double> g = p.grad();
    if (!p.has_grad()) {
      zero.assign(p.numel(), 0.0);
      g = zero;
    }
    adamw_update(p.mutable_values(), g, state.first_moment[i], state.second_moment[i], step, state.config, lr);
  }
  state.step_count = step;
}

void adamw_step(std::span<Tensor> params, std::span<const std::vector<double>> grads, AdamWState& state,
                double lr) {
  if (grads.size() != params.size()) throw ShapeError("adamw_step: gradient count differs from parameter count");
  ensure_moments(params, state);
  const auto step = state.step_count + 1;
  for (std::size_t i = 0; i < params.size(); ++i) {
    adamw_update(params[i].mutable_values(), grads[i], state.first_moment[i], state.second_moment[i], step,
                 state.config, lr);
  }
  state.step_count = step;
}

void zero_grad(std::span<Tensor> params) {
  for (auto& p : params) p.zero_grad();
}

double clip_grad_norm(std::span<Tensor> params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    for (double g : p.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double f = max_norm / norm;
    for (auto& p : params)
      if (p.has_grad())
        for (auto& g : p.mutable_grad()) g *= f;
  }
  return norm;
}

double lr_at(std::uint64_t step, const LRSchedule& schedule) {
  if (step == 0) throw std::invalid_argument("lr_at: steps are 1-based");
  if (!(schedule.peak_lr > 0.0)) throw std::invalid_argument("lr_at: peak learning rate must be positive");
  const double s = static_cast<double>(step);
  if (schedule.warmup_steps == 0) return schedule.peak_lr / std::sqrt(s);
  const double w = static_cast<double>(schedule.warmup_steps);
  if (step <= schedule.warmup_steps) return schedule.peak_lr * s / w;
  return schedule.peak_lr * std::sqrt(w / s);
}

}  // namespace enclap::ad
