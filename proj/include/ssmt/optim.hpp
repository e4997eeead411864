#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssmt/tensor.hpp"

namespace ssmt {

struct AdamHyper {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 0.01f;  // decoupled
};

struct AdamState {
  std::vector<float> m;
  std::vector<float> v;
  std::int64_t step = 0;
};

/// One bias-corrected Adam update with decoupled weight decay.
/// Throws NumericFault naming `name` when the gradient is not finite.
void adam_step(std::span<float> param, std::span<const float> grad, AdamState& state, const AdamHyper& hyper,
               const std::string& name = "parameter");

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Adam over a fixed, ordered parameter set.
class Adam {
 public:
  Adam(std::vector<NamedTensor> params, AdamHyper hyper);

  void zero_grad();
  // Parameters that never received a gradient are treated as having grad 0.
  void step();
  void set_lr(float lr) { hyper_.lr = lr; }
  const AdamHyper& hyper() const { return hyper_; }

  const std::vector<NamedTensor>& params() const { return params_; }
  std::vector<AdamState>& states() { return states_; }
  const std::vector<AdamState>& states() const { return states_; }

 private:
  std::vector<NamedTensor> params_;
  std::vector<AdamState> states_;
  AdamHyper hyper_;
};

/// Cosine annealing from lr0 at step 0 to lr_min at total_steps; clamps to
/// lr_min past the end.
float cosine_lr(std::int64_t step, std::int64_t total_steps, float lr0, float lr_min);

}  // namespace ssmt
