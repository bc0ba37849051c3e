#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dsen::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node;
using NodePtr = std::shared_ptr<Node>;
/// Reads self.grad and accumulates into the parents' grads.
using BackwardFn = std::function<void(Node& self)>;

/// One value in the computation graph. Leaves have no parents.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  BackwardFn backward;
  const char* op = "leaf";

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

/// Dense row-major double tensor with reverse-mode differentiation. Copies
/// share the underlying node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const double> values() const { return node_->value; }
  std::span<double> values_mut() { return node_->value; }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> grad_mut() { return node_->ensure_grad(); }
  bool has_grad() const { return !node_->grad.empty(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  double item() const;
  void zero_grad() { node_->grad.clear(); }

  /// Reverse sweep from this scalar. Leaf grads accumulate across calls.
  void backward() const;

  /// Same values, no history, no grad requirement.
  Tensor detach() const;

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

/// Nodes reachable from root that take part in differentiation, parents
/// before children. Each node appears once.
std::vector<Node*> topological_order(const Tensor& root);

/// Builds an op result. Non-finite output values raise NumericError naming
/// the op. When no parent needs gradients, or a NoGradGuard is active, the
/// result is a detached leaf.
Tensor make_result(const char* op, Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                   BackwardFn backward);

/// Disables graph construction on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

}  // namespace dsen::ad
