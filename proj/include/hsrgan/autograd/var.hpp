#pragma once
// Reverse-mode automatic differentiation over Tensor values.
//
// Every backward rule is written in terms of differentiable ops, so gradients
// computed with create_graph=true can be differentiated again. The path-length
// and R1 penalties rely on this.

#include <functional>
#include <memory>
#include <string_view>
#include <vector>

#include "hsrgan/core/tensor.hpp"

namespace hsrgan::ag {

template <typename T>
class Var;

// Receives the gradient of the node's output and a mask of which parents need
// a gradient; returns one entry per parent (undefined where not needed).
template <typename T>
using BackwardFn = std::function<std::vector<Var<T>>(const Var<T>&, const std::vector<bool>&)>;

template <typename T>
struct Node {
  Tensor<T> value;
  bool requires_grad = false;
  std::vector<Var<T>> parents;
  BackwardFn<T> backward;
  std::string_view op = "leaf";
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  static Var constant(Tensor<T> value) { return Var(std::move(value), false); }
  static Var parameter(Tensor<T> value) { return Var(std::move(value), true); }
  static Var scalar(T value) { return Var(Tensor<T>::scalar(value), false); }

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  // In-place access for optimizers; never use on interior graph nodes.
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  int64_t dim(int i) const { return node_->value.dim(i); }
  int64_t numel() const { return node_->value.numel(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  T item() const { return node_->value.item(); }
  Node<T>* node() const { return node_.get(); }

  static Var from_node(std::shared_ptr<Node<T>> node) {
    Var v;
    v.node_ = std::move(node);
    return v;
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

bool grad_enabled();

// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Re-enables recording inside a NoGradGuard scope.
class EnableGradGuard {
 public:
  EnableGradGuard();
  ~EnableGradGuard();
  EnableGradGuard(const EnableGradGuard&) = delete;
  EnableGradGuard& operator=(const EnableGradGuard&) = delete;

 private:
  bool previous_;
};

// Builds a node; returns a constant when recording is off or no parent needs grad.
template <typename T>
Var<T> make_node(Tensor<T> value, std::vector<Var<T>> parents, BackwardFn<T> backward,
                 std::string_view op);

// d(output)/d(inputs), seeded with grad_output (ones for a single-element
// output when undefined). Inputs that the output does not depend on receive
// zeros. With create_graph the returned gradients are themselves differentiable.
template <typename T>
std::vector<Var<T>> grad(const Var<T>& output, const std::vector<Var<T>>& inputs,
                         const Var<T>& grad_output = Var<T>(), bool create_graph = false);

}  // namespace hsrgan::ag
