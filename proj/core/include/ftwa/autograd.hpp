#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ftwa/tensor.hpp"

namespace ftwa {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
  std::string name;

  bool has_grad() const { return !grad.empty(); }
  /// Gradient buffer, zero-allocated on first use.
  Tensor<T>& grad_buffer();
};

/// Reference-counted handle to a value in the dynamic computation graph.
/// Copies alias the same node, so a parameter shared by several call sites
/// accumulates gradient from all of them.
template <typename T>
class Var {
 public:
  Var() = default;

  static Var constant(Tensor<T> value);
  static Var leaf(Tensor<T> value, std::string name = {});

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->has_grad(); }
  const Tensor<T>& grad() const { return node_->grad; }
  void zero_grad() { node_->grad = Tensor<T>(); }
  const std::string& name() const { return node_->name; }

  /// Same value, cut from the graph.
  Var detach() const { return constant(node_->value); }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& shared() const { return node_; }

  /// Wrap an existing node (used by graph-building helpers).
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Build a graph node. The backward callback receives the result node and
/// must accumulate into the grad_buffer() of each input that requires grad.
/// When no input requires grad (or grad recording is disabled) the node is
/// created without inputs and the callback is dropped.
template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> inputs,
               std::function<void(Node<T>&)> backward);

/// Reverse-mode sweep from a scalar root, seeding d(root)/d(root) = 1.
template <typename T>
void backward(const Var<T>& root);

/// Disables graph recording on the current thread while alive.
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

}  // namespace ftwa
