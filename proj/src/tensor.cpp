#include "ssmt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ssmt/errors.hpp"

namespace ssmt {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

static void validate_shape(const Shape& shape) {
  for (int d : shape) {
    if (d <= 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
  }
}

Tensor make_tensor(Shape shape, std::vector<float> values) {
  validate_shape(shape);
  if (static_cast<std::int64_t>(values.size()) != shape_numel(shape)) {
    throw DimensionError("data length " + std::to_string(values.size()) + " does not match shape " +
                         shape_str(shape));
  }
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0f, requires_grad); }

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  validate_shape(shape);
  const auto n = static_cast<std::size_t>(shape_numel(shape));
  Tensor t = make_tensor(std::move(shape), std::vector<float>(n, value));
  t.set_requires_grad(requires_grad);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<float> values, bool requires_grad) {
  Tensor t = make_tensor(std::move(shape), std::move(values));
  t.set_requires_grad(requires_grad);
  return t;
}

Tensor Tensor::scalar(float value, bool requires_grad) { return from({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
  if (!node_) throw ContractError("use of an undefined tensor");
  return node_->shape;
}

int Tensor::dim(int axis) const {
  const Shape& s = shape();
  if (axis < 0) axis += static_cast<int>(s.size());
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  }
  return s[static_cast<std::size_t>(axis)];
}

float Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

std::span<float> Tensor::mutable_grad() { return detail::grad_buffer(*node_); }

void Tensor::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0f);
  node_->grad_touched = false;
}

bool Tensor::has_nonfinite() const {
  return std::any_of(node_->data.begin(), node_->data.end(), [](float v) { return !std::isfinite(v); });
}

Tensor Tensor::detach() const { return make_tensor(shape(), node_->data); }

Tensor Tensor::clone() const {
  Tensor t = detach();
  t.set_requires_grad(requires_grad());
  return t;
}

Tape& Tape::active() {
  thread_local Tape tape;
  return tape;
}

void Tape::record(std::shared_ptr<TensorNode> out, Backward fn) {
  entries_.push_back(Entry{std::move(out), std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() requires a scalar loss, got " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  TensorNode& root = *loss.node();
  if (root.is_leaf) {
    if (root.requires_grad) detail::grad_buffer(root)[0] += 1.0f;
    return;
  }
  if (entries_.empty()) throw ContractError("backward() on an empty tape");
  for (Entry& e : entries_) {
    std::fill(e.out->grad.begin(), e.out->grad.end(), 0.0f);
    e.out->grad_touched = false;
  }
  detail::grad_buffer(root)[0] = 1.0f;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (!it->out->grad_touched) continue;
    it->fn(*it->out);
  }
}

void Tape::clear() { entries_.clear(); }

NoGradGuard::NoGradGuard() { ++Tape::active().enabled_depth_; }
NoGradGuard::~NoGradGuard() { --Tape::active().enabled_depth_; }

void backward(const Tensor& loss) { Tape::active().backward(loss); }

namespace detail {

std::span<float> grad_buffer(TensorNode& node) {
  if (node.grad.size() != node.data.size()) node.grad.assign(node.data.size(), 0.0f);
  node.grad_touched = true;
  return node.grad;
}

bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  if (!Tape::active().recording()) return false;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

void record(Tensor& out, Tape::Backward fn) {
  TensorNode& node = *out.node();
  node.requires_grad = true;
  node.is_leaf = false;
  Tape::active().record(out.shared_node(), std::move(fn));
}

}  // namespace detail

}  // namespace ssmt
