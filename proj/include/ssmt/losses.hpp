#pragma once

#include "ssmt/tensor.hpp"

namespace ssmt {

inline constexpr float kDiceSmooth = 1e-6f;
inline constexpr float kCharbonnierEps = 1e-6f;

/// 1 - (2 sum(p t) + s) / (sum p + sum t + s)
Tensor dice_loss(const Tensor& soft_pred, const Tensor& target, float smooth = kDiceSmooth);

/// mean(sqrt((rec - in)^2 + eps^2))
Tensor charbonnier(const Tensor& reconstruction, const Tensor& input, float eps = kCharbonnierEps);

/// (V_pred - V_true)^2 for a one-element prediction.
Tensor size_loss(const Tensor& predicted, float target);

struct LossWeights {
  float alpha = 0.8f;   // nodule segmentation
  float beta = 0.1f;    // gland segmentation
  float gamma = 0.05f;  // size
  float eta = 0.05f;    // reconstruction

  // Throws ConfigError unless all weights are >= 0, sum to 1 within 1e-6 and
  // alpha exceeds the other three combined.
  void validate() const;
};

/// Which auxiliary branches take part in supervised training.
struct AblationFlags {
  bool reconstruction = true;
  bool gland = true;
  bool size = true;

  // Variants 1..5: baseline, +rec, +rec+gland, +rec+size, all.
  static AblationFlags variant(int index);
};

/// Zeroes the weights of disabled branches and rescales the rest to sum to 1.
LossWeights renormalize(const LossWeights& w, const AblationFlags& flags);

/// alpha l_nodule + beta l_gland + gamma l_size + eta l_rec. Undefined
/// component tensors contribute nothing.
Tensor total_loss(const Tensor& l_nodule, const Tensor& l_gland, const Tensor& l_size, const Tensor& l_rec,
                  const LossWeights& w);

}  // namespace ssmt
