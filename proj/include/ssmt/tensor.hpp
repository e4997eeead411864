#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ssmt {

using Shape = std::vector<int>;

std::string shape_str(const Shape& shape);
std::int64_t shape_numel(const Shape& shape);

struct TensorNode {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  bool is_leaf = true;
  bool grad_touched = false;
};

/// Dense row-major f32 tensor with shared storage.
///
/// Copies of a Tensor alias the same node. Operations in ops.hpp produce new
/// tensors and, when any input requires a gradient, record a backward step on
/// the calling thread's active Tape.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<float> values, bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  int dim(int axis) const;
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->data.size()); }

  std::span<const float> data() const { return node_->data; }
  // Direct writes are reserved for initialization, optimizer updates and
  // finite-difference probes.
  std::span<float> mutable_data() { return node_->data; }
  float item() const;
  float at(std::int64_t flat_index) const { return node_->data.at(static_cast<std::size_t>(flat_index)); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const float> grad() const { return node_->grad; }
  std::span<float> mutable_grad();
  void zero_grad();

  bool has_nonfinite() const;
  Tensor detach() const;
  Tensor clone() const;

  TensorNode* node() const { return node_.get(); }
  const std::shared_ptr<TensorNode>& shared_node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}
  friend Tensor make_tensor(Shape shape, std::vector<float> values);

  std::shared_ptr<TensorNode> node_;
};

Tensor make_tensor(Shape shape, std::vector<float> values);

/// Ordered record of executed differentiable operations.
///
/// backward() replays the record in exact reverse order. Gradients of
/// intermediate results are reset at the start of every pass, while leaf
/// gradients accumulate across passes until zero_grad().
class Tape {
 public:
  using Backward = std::function<void(const TensorNode& out)>;

  static Tape& active();

  void record(std::shared_ptr<TensorNode> out, Backward fn);
  void backward(const Tensor& loss);
  void clear();
  std::size_t size() const { return entries_.size(); }
  bool recording() const { return recording_ && enabled_depth_ == 0; }

 private:
  friend class NoGradGuard;
  struct Entry {
    std::shared_ptr<TensorNode> out;
    Backward fn;
  };
  std::vector<Entry> entries_;
  bool recording_ = true;
  int enabled_depth_ = 0;
};

/// Disables recording on the active tape for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

void backward(const Tensor& loss);

namespace detail {

// Grad buffer of `node`, allocated as zeros on first use.
std::span<float> grad_buffer(TensorNode& node);
bool any_requires_grad(std::initializer_list<const Tensor*> inputs);
// Marks `out` as a recorded result and registers `fn` on the active tape.
void record(Tensor& out, Tape::Backward fn);

}  // namespace detail

}  // namespace ssmt
