#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ssmt/tensor.hpp"

namespace ssmt {

struct GradCheckResult {
  std::string name;
  double rel_err = 0.0;
  double tolerance = 0.0;
  int probes = 0;
  bool pass() const { return rel_err < tolerance; }
};

struct GradCheckOptions {
  float h = 1e-3f;
  // Elements probed per input tensor; <= 0 probes every element.
  int max_probes_per_tensor = 0;
  std::uint64_t seed = 7;
};

/// Squared norms accumulated over the probed elements of one tensor.
struct GradientComparison {
  double diff2 = 0.0;      // ||analytic - numeric||^2
  double analytic2 = 0.0;  // ||analytic||^2
  double numeric2 = 0.0;   // ||numeric||^2
  // ||a - n|| / max(||a||, ||n||), 0 when both vanish.
  double rel_err() const;
};

/// Pools several comparisons into one gradient vector and returns its relative error.
double pooled_rel_error(const std::vector<GradientComparison>& parts);

/// backward() gradients of `loss_fn` against central finite differences, one
/// comparison per tensor in `inputs`.
std::vector<GradientComparison> compare_gradients(const std::function<Tensor()>& loss_fn,
                                                  const std::vector<Tensor>& inputs,
                                                  const GradCheckOptions& options = {});

/// Compares backward() gradients of `loss_fn` against central finite
/// differences for every tensor in `inputs`.
///
/// The error is ||analytic - numeric|| / max(||analytic||, ||numeric||)
/// over the probed elements of each tensor; the worst tensor is reported.
double gradient_rel_error(const std::function<Tensor()>& loss_fn, const std::vector<Tensor>& inputs,
                          const GradCheckOptions& options = {}, std::vector<double>* per_tensor = nullptr);

/// Finite-difference checks for every differentiable primitive in ops.hpp.
std::vector<GradCheckResult> primitive_gradient_checks(double tolerance = 1e-3);

}  // namespace ssmt
