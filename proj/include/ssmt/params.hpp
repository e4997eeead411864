#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "ssmt/optim.hpp"
#include "ssmt/tensor.hpp"

namespace ssmt {

struct Init {
  enum class Kind { zeros, constant, normal };
  Kind kind = Kind::zeros;
  float value = 0.0f;  // constant value or normal stddev

  static Init zeros() { return {}; }
  static Init constant(float v) { return {Kind::constant, v}; }
  static Init normal(float stddev) { return {Kind::normal, stddev}; }
  // stddev = gain / sqrt(fan_in)
  static Init fan_in(int fan_in, float gain = 1.0f);
};

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t hash = 0xcbf29ce484222325ULL);

/// Ordered collection of named trainable tensors.
///
/// Each tensor is initialized from its own random stream keyed by the model
/// seed and the parameter name, so adding or skipping one parameter never
/// shifts another's initial values.
class ParameterSet {
 public:
  explicit ParameterSet(std::uint64_t seed) : seed_(seed) {}

  Tensor add(const std::string& name, Shape shape, Init init);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  const std::vector<NamedTensor>& all() const { return params_; }
  // Parameters whose name starts with any of `prefixes`.
  std::vector<NamedTensor> select(const std::vector<std::string>& prefixes) const;
  std::int64_t count() const;
  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::vector<NamedTensor> params_;
};

/// Hex SHA-256 over the names, shapes and raw bytes of every listed tensor, in order.
std::string parameter_digest(const std::vector<NamedTensor>& params);

/// Linear layer y = x W + b for x[m x in].
struct Linear {
  Tensor w, b;
  Linear() = default;
  Linear(ParameterSet& ps, const std::string& name, int in, int out, float gain = 1.0f, bool bias = true);
  Tensor operator()(const Tensor& x) const;
};

/// k x k convolution with "same" padding and optional stride, plus an optional
/// channel bias (omitted before a normalization that would cancel it).
struct Conv {
  Tensor w, b;
  int stride = 1;
  Conv() = default;
  Conv(ParameterSet& ps, const std::string& name, int cin, int cout, int k, int stride = 1, float gain = 1.0f,
       bool bias = true);
  Tensor operator()(const Tensor& x) const;
};

struct LayerNormParams {
  Tensor gamma, beta;
  LayerNormParams() = default;
  LayerNormParams(ParameterSet& ps, const std::string& name, int dim);
  Tensor operator()(const Tensor& x) const;
};

}  // namespace ssmt
