#include "hsrgan/autograd/var.hpp"

#include <algorithm>
#include <unordered_map>
#include <unordered_set>

#include "hsrgan/autograd/ops.hpp"
#include "hsrgan/core/error.hpp"

namespace hsrgan::ag {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
EnableGradGuard::EnableGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = true; }
EnableGradGuard::~EnableGradGuard() { g_grad_enabled = previous_; }

template <typename T>
Var<T> make_node(Tensor<T> value, std::vector<Var<T>> parents, BackwardFn<T> backward,
                 std::string_view op) {
  bool needs = false;
  if (g_grad_enabled)
    for (const auto& p : parents) needs = needs || p.requires_grad();
  if (!needs) return Var<T>::constant(std::move(value));
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->requires_grad = true;
  node->parents = std::move(parents);
  node->backward = std::move(backward);
  node->op = op;
  return Var<T>::from_node(std::move(node));
}

template <typename T>
std::vector<Var<T>> grad(const Var<T>& output, const std::vector<Var<T>>& inputs,
                         const Var<T>& grad_output, bool create_graph) {
  std::vector<Var<T>> result(inputs.size());
  auto zeros_like = [](const Var<T>& v) { return Var<T>::constant(Tensor<T>(v.shape())); };

  if (!output.requires_grad()) {
    for (size_t i = 0; i < inputs.size(); ++i) result[i] = zeros_like(inputs[i]);
    return result;
  }

  // Post-order DFS gives parents before children.
  std::vector<Node<T>*> topo;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, size_t>> stack{{output.node(), 0}};
  visited.insert(output.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].node();
      if (parent && parent->requires_grad && visited.insert(parent).second)
        stack.emplace_back(parent, 0);
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }

  std::unordered_set<Node<T>*> input_nodes;
  for (const auto& in : inputs)
    if (in.defined()) input_nodes.insert(in.node());

  std::unordered_set<Node<T>*> reaches;
  for (Node<T>* node : topo) {
    bool r = input_nodes.count(node) > 0;
    for (const auto& p : node->parents) r = r || reaches.count(p.node()) > 0;
    if (r) reaches.insert(node);
  }

  std::unordered_map<Node<T>*, Var<T>> grads;
  if (reaches.count(output.node())) {
    Var<T> seed = grad_output;
    if (!seed.defined()) {
      if (output.numel() != 1)
        throw ShapeError("grad() of a non-scalar output needs an explicit grad_output");
      seed = Var<T>::constant(Tensor<T>(output.shape(), T(1)));
    }
    grads[output.node()] = seed;
  }

  {
    EnableGradGuard recording;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
      Node<T>* node = *it;
      auto found = grads.find(node);
      if (found == grads.end()) continue;
      if (!node->backward || !reaches.count(node)) continue;
      std::vector<bool> needed(node->parents.size());
      bool any = false;
      for (size_t i = 0; i < needed.size(); ++i) {
        Node<T>* p = node->parents[i].node();
        needed[i] = p && p->requires_grad && reaches.count(p) > 0;
        any = any || needed[i];
      }
      if (!any) continue;
      std::vector<Var<T>> parent_grads;
      if (create_graph) {
        parent_grads = node->backward(found->second, needed);
      } else {
        NoGradGuard off;
        parent_grads = node->backward(found->second, needed);
      }
      for (size_t i = 0; i < needed.size(); ++i) {
        if (!needed[i] || !parent_grads[i].defined()) continue;
        Node<T>* p = node->parents[i].node();
        auto existing = grads.find(p);
        if (existing == grads.end()) {
          grads.emplace(p, parent_grads[i]);
        } else if (create_graph) {
          existing->second = add(existing->second, parent_grads[i]);
        } else {
          NoGradGuard off;
          existing->second = add(existing->second, parent_grads[i]);
        }
      }
      if (!input_nodes.count(node)) grads.erase(node);
    }
  }

  for (size_t i = 0; i < inputs.size(); ++i) {
    auto found = inputs[i].defined() ? grads.find(inputs[i].node()) : grads.end();
    result[i] = found == grads.end() ? zeros_like(inputs[i]) : found->second;
  }
  return result;
}

template Var<float> make_node(Tensor<float>, std::vector<Var<float>>, BackwardFn<float>,
                              std::string_view);
template Var<double> make_node(Tensor<double>, std::vector<Var<double>>, BackwardFn<double>,
                               std::string_view);
template std::vector<Var<float>> grad(const Var<float>&, const std::vector<Var<float>>&,
                                      const Var<float>&, bool);
template std::vector<Var<double>> grad(const Var<double>&, const std::vector<Var<double>>&,
                                       const Var<double>&, bool);

}  // namespace hsrgan::ag
