#pragma once

#include <cstdint>
#include <vector>

#include "ssmt/gradcheck.hpp"
#include "ssmt/model.hpp"

namespace ssmt {

/// Small configuration for end-to-end gradient checks: 16x16 input, every
/// width at most 8, the full architecture otherwise.
ModelConfig gradcheck_model_config();

struct ModelGradCheck {
  // Relative error of the whole parameter gradient, the pass criterion.
  GradCheckResult total;
  // Per-tensor errors, diagnostic only: tensors whose true gradient is near
  // zero (key biases, for instance) show finite-difference noise here.
  std::vector<GradCheckResult> tensors;
};

/// Central finite differences of the total training loss (all four terms,
/// soft class weighting) against backward(). Hard masks Z_t are taken from the
/// unperturbed forward pass and held fixed, so probes measure the derivative
/// of the piece that backward() differentiates.
ModelGradCheck model_gradient_checks(const ModelConfig& config, double tolerance = 1e-2,
                                     const GradCheckOptions& options = {});

}  // namespace ssmt
