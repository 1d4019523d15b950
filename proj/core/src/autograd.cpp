#include "ftwa/autograd.hpp"

#include <unordered_set>

#include "ftwa/errors.hpp"

namespace ftwa {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
Tensor<T>& Node<T>::grad_buffer() {
  if (grad.empty()) grad = Tensor<T>(value.shape());
  return grad;
}

template <typename T>
Var<T> Var<T>::constant(Tensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  return Var(std::move(node));
}

template <typename T>
Var<T> Var<T>::leaf(Tensor<T> value, std::string name) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->requires_grad = true;
  node->name = std::move(name);
  return Var(std::move(node));
}

template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> inputs,
               std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  if (!g_grad_enabled) return Var<T>(std::move(node));
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (!needs) return Var<T>(std::move(node));
  node->requires_grad = true;
  node->inputs.reserve(inputs.size());
  for (auto& in : inputs) node->inputs.push_back(in.shared());
  node->backward = std::move(backward_fn);
  return Var<T>(std::move(node));
}

template <typename T>
void backward(const Var<T>& root) {
  if (!root.defined()) throw ContractError("backward on undefined variable");
  if (root.value().size() != 1) {
    throw ShapeError("backward root must be a scalar, got " + root.shape().str());
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS; reversed it is a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer().fill(T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward && node->has_grad()) node->backward(*node);
  }
}

template struct Node<float>;
template struct Node<double>;
template class Var<float>;
template class Var<double>;
template Var<float> make_op(Tensor<float>, std::vector<Var<float>>,
                            std::function<void(Node<float>&)>);
template Var<double> make_op(Tensor<double>, std::vector<Var<double>>,
                             std::function<void(Node<double>&)>);
template void backward(const Var<float>&);
template void backward(const Var<double>&);

}  // namespace ftwa
