#include "tidm/autograd.hpp"

#include <algorithm>
#include <unordered_set>

namespace tidm {

namespace detail {

template <std::floating_point Real>
void Node<Real>::accumulate(std::span<const Real> g) {
  if (g.size() != value.size()) {
    throw ShapeError("backward: gradient of size " + std::to_string(g.size()) + " for value of shape " +
                     shape_str(value.shape()));
  }
  if (grad.empty()) {
    grad.assign(g.begin(), g.end());
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
}

template <std::floating_point Real>
std::span<Real> Node<Real>::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), Real{0});
  return grad;
}

}  // namespace detail

template <std::floating_point Real>
Var<Real> constant(Tensor<Real> value) {
  auto node = std::make_shared<detail::Node<Real>>();
  node->value = std::move(value);
  return Var<Real>(std::move(node));
}

template <std::floating_point Real>
Var<Real> make_node(Tensor<Real> value, std::vector<Var<Real>> inputs,
                    std::function<void(detail::Node<Real>&)> backward) {
  auto node = std::make_shared<detail::Node<Real>>();
  node->value = std::move(value);
  node->requires_grad = std::any_of(inputs.begin(), inputs.end(), [](const Var<Real>& v) { return v.requires_grad(); });
  if (node->requires_grad) {
    node->inputs.reserve(inputs.size());
    for (auto& v : inputs) node->inputs.push_back(v.node());
    node->backward = std::move(backward);
  }
  return Var<Real>(std::move(node));
}

template <std::floating_point Real>
Var<Real> Tape<Real>::param(const std::string& name) {
  if (auto it = leaves_.find(name); it != leaves_.end()) return it->second;
  auto node = std::make_shared<detail::Node<Real>>();
  node->value = params_->at(name);
  node->param_name = name;
  node->requires_grad = !no_grad_ && !frozen_.contains(name);
  Var<Real> v(std::move(node));
  leaves_.emplace(name, v);
  return v;
}

template <std::floating_point Real>
Gradients<Real> backpropagate(const Var<Real>& loss, const ParamStore<Real>& params) {
  if (!loss.defined() || loss.value().size() != 1) {
    throw ShapeError("backpropagate: loss must be a scalar, got shape " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  Gradients<Real> out;
  for (const auto& [name, t] : params) out.emplace(name, Tensor<Real>(t.shape()));
  if (!loss.requires_grad()) return out;

  // Iterative post-order DFS gives a topological order.
  using NodePtr = detail::Node<Real>*;
  std::vector<NodePtr> order;
  std::unordered_set<NodePtr> visited;
  std::vector<std::pair<NodePtr, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      NodePtr child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (NodePtr n : order) n->grad.clear();
  const Real one = Real{1};
  loss.node()->accumulate(std::span<const Real>(&one, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodePtr n = *it;
    if (n->grad.empty()) continue;
    if (n->backward) n->backward(*n);
    if (!n->param_name.empty()) {
      auto slot = out.find(n->param_name);
      if (slot != out.end() && slot->second.shape() == n->value.shape()) {
        auto dst = slot->second.data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += n->grad[i];
      }
    }
  }
  for (NodePtr n : order) {
    n->grad.clear();
    n->grad.shrink_to_fit();
  }
  return out;
}

template struct detail::Node<float>;
template struct detail::Node<double>;
template Var<float> constant(Tensor<float>);
template Var<double> constant(Tensor<double>);
template Var<float> make_node(Tensor<float>, std::vector<Var<float>>, std::function<void(detail::Node<float>&)>);
template Var<double> make_node(Tensor<double>, std::vector<Var<double>>, std::function<void(detail::Node<double>&)>);
template class Tape<float>;
template class Tape<double>;
template Gradients<float> backpropagate(const Var<float>&, const ParamStore<float>&);
template Gradients<double> backpropagate(const Var<double>&, const ParamStore<double>&);

}  // namespace tidm
