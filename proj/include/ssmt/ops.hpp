#pragma once

#include <vector>

#include "ssmt/tensor.hpp"

// Differentiable primitives. Every function here records its vector-Jacobian
// product on the active tape when an input requires a gradient.
namespace ssmt {

// Elementwise binary ops accept identical shapes, or one operand holding a
// single element (broadcast as a scalar).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

// a / b, same broadcasting as mul.
Tensor div(const Tensor& a, const Tensor& b);
Tensor reciprocal(const Tensor& x);
Tensor add_scalar(const Tensor& x, float s);
Tensor mul_scalar(const Tensor& x, float s);

// x[m x n] + b[n] on every row.
Tensor add_row_vector(const Tensor& x, const Tensor& b);
// x[C x H x W] + b[C] on every channel plane.
Tensor add_channel_bias(const Tensor& x, const Tensor& b);

Tensor sigmoid(const Tensor& x);
Tensor gelu(const Tensor& x);  // erf form
Tensor relu(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor square(const Tensor& x);
// Gradient passes only where lo < x < hi.
Tensor clamp(const Tensor& x, float lo, float hi);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Column means of x[m x n], shape [n].
Tensor mean_rows(const Tensor& x);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);

// Max-subtracted softmax. -inf entries receive exactly zero weight; a slice
// whose entries are all -inf raises DegenerateSoftmax.
Tensor softmax(const Tensor& x, int axis);

inline constexpr float kLayerNormEps = 1e-5f;
// Normalizes over the last axis.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = kLayerNormEps);

// Normalizes each channel of x[C x H x W] over its spatial positions (no
// affine part). Composite of layer_norm.
Tensor instance_norm(const Tensor& x, float eps = kLayerNormEps);

// Cross-correlation of x[C_in x H x W] with w[C_out x C_in x k x k], k odd.
Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int pad);

enum class ResampleMode { nearest, bilinear };
// Resizes the two trailing axes of a rank-2 or rank-3 tensor. Sample
// positions use the align-corners convention so bilinear is exact on
// affine fields.
Tensor resample2d(const Tensor& x, int out_h, int out_w, ResampleMode mode);

Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, int start, int length);
// y[i] = x[index[i]] with result shape `shape`; backward scatter-adds.
Tensor gather(const Tensor& x, const std::vector<int>& index, Shape shape);

}  // namespace ssmt
