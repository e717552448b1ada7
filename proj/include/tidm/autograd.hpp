#pragma once

// Define-by-run reverse-mode differentiation. Every op call records a node
// holding its value and a closure that pushes the output gradient into the
// inputs. The graph is rebuilt for each step; values are never mutated once
// recorded.

#include <concepts>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "tidm/param_store.hpp"
#include "tidm/tensor.hpp"

namespace tidm {

namespace detail {

template <std::floating_point Real>
struct Node {
  Tensor<Real> value;
  std::vector<Real> grad;  // empty until something flows back
  bool requires_grad = false;
  std::string param_name;  // set for parameter leaves
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  /// grad += g (allocating zeros first if needed).
  void accumulate(std::span<const Real> g);
  std::span<Real> grad_buffer();
};

}  // namespace detail

template <std::floating_point Real>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<detail::Node<Real>> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Tensor<Real>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const std::shared_ptr<detail::Node<Real>>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node<Real>> node_;
};

/// Value that takes no gradient.
template <std::floating_point Real>
Var<Real> constant(Tensor<Real> value);

/// Output node of an op: value, inputs, and the backward closure. The node
/// only requires grad when some input does; otherwise the closure is dropped.
template <std::floating_point Real>
Var<Real> make_node(Tensor<Real> value, std::vector<Var<Real>> inputs, std::function<void(detail::Node<Real>&)> backward);

template <std::floating_point Real>
using Gradients = std::map<std::string, Tensor<Real>, std::less<>>;

/// Binds parameter leaves to a store. Each name maps to a single leaf for the
/// lifetime of the tape; frozen names are recorded without gradient.
template <std::floating_point Real>
class Tape {
 public:
  explicit Tape(const ParamStore<Real>& params, std::set<std::string, std::less<>> frozen = {})
      : params_(&params), frozen_(std::move(frozen)) {}

  /// Tape whose parameter leaves never require grad (no backward closures).
  static Tape inference(const ParamStore<Real>& params) {
    Tape t(params);
    t.no_grad_ = true;
    return t;
  }

  Var<Real> param(const std::string& name);
  const ParamStore<Real>& params() const { return *params_; }
  bool has(std::string_view name) const { return params_->contains(name); }

 private:
  const ParamStore<Real>* params_;
  std::set<std::string, std::less<>> frozen_;
  bool no_grad_ = false;
  std::map<std::string, Var<Real>, std::less<>> leaves_;
};

/// d loss / d p for every entry of `params`. Parameters that never reached
/// the loss get an all-zero gradient.
template <std::floating_point Real>
Gradients<Real> backpropagate(const Var<Real>& loss, const ParamStore<Real>& params);

}  // namespace tidm
