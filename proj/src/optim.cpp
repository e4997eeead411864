#include "ssmt/optim.hpp"

#include <cmath>
#include <numbers>

#include "ssmt/errors.hpp"

namespace ssmt {

void adam_step(std::span<float> param, std::span<const float> grad, AdamState& state, const AdamHyper& hyper,
               const std::string& name) {
  if (!grad.empty() && grad.size() != param.size()) {
    throw DimensionError("adam_step: gradient size mismatch for " + name);
  }
  for (float g : grad) {
    if (!std::isfinite(g)) throw NumericFault("non-finite gradient in " + name);
  }
  if (state.m.size() != param.size()) {
    state.m.assign(param.size(), 0.0f);
    state.v.assign(param.size(), 0.0f);
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const float bc1 = static_cast<float>(1.0 - std::pow(static_cast<double>(hyper.beta1), t));
  const float bc2 = static_cast<float>(1.0 - std::pow(static_cast<double>(hyper.beta2), t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const float g = grad.empty() ? 0.0f : grad[i];
    state.m[i] = hyper.beta1 * state.m[i] + (1.0f - hyper.beta1) * g;
    state.v[i] = hyper.beta2 * state.v[i] + (1.0f - hyper.beta2) * g * g;
    const float m_hat = state.m[i] / bc1;
    const float v_hat = state.v[i] / bc2;
    param[i] -= hyper.lr * (m_hat / (std::sqrt(v_hat) + hyper.eps) + hyper.weight_decay * param[i]);
  }
}

Adam::Adam(std::vector<NamedTensor> params, AdamHyper hyper)
    : params_(std::move(params)), states_(params_.size()), hyper_(hyper) {}

void Adam::zero_grad() {
  for (NamedTensor& p : params_) p.tensor.zero_grad();
}

void Adam::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& t = params_[i].tensor;
    adam_step(t.mutable_data(), t.grad(), states_[i], hyper_, params_[i].name);
  }
}

float cosine_lr(std::int64_t step, std::int64_t total_steps, float lr0, float lr_min) {
  if (total_steps <= 0 || step >= total_steps) return lr_min;
  if (step <= 0) return lr0;
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  return static_cast<float>(lr_min + 0.5 * (static_cast<double>(lr0) - lr_min) * (1.0 + std::cos(std::numbers::pi * frac)));
}

}  // namespace ssmt
