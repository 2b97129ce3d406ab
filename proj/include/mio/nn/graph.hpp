#pragma once

#include <functional>
#include <initializer_list>
#include <string_view>
#include <vector>

#include "mio/nn/tensor.hpp"

namespace mio::nn {

// Tape of primitive operations for reverse-mode differentiation. Nodes are
// appended in execution order, so the node list is already a topological
// order and backward() walks it in reverse. A graph is single-use: build it
// for one forward pass, call backward() once, discard.
template <std::floating_point T>
class Graph {
 public:
  struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
  };
  // Called with the graph and the node's id once the node's gradient is final.
  using BackwardFn = std::function<void(Graph&, int)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Leaf that never receives a gradient.
  Var constant(Tensor<T> value);
  // Leaf whose gradient is kept (for gradient checks on inputs).
  Var input(Tensor<T> value, bool requires_grad = false);
  // Leaf bound to a parameter; backward() adds its gradient into p.grad.
  Var parameter(Parameter<T>& p);

  Var record(std::string_view op, Tensor<T> value, std::initializer_list<Var> inputs,
             BackwardFn backward);

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  const Shape& shape(Var v) const { return nodes_.at(v.id).value.shape(); }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::string_view op(Var v) const { return nodes_.at(v.id).op; }

  // Gradient slot of a node, allocated (zeroed) on first access.
  Tensor<T>& grad(Var v) { return grad(v.id); }
  Tensor<T>& grad(int id);
  bool has_grad(Var v) const { return !nodes_.at(v.id).grad.empty(); }

  // Seeds d(root)/d(root) = 1 (root must hold a single element).
  void backward(Var root);
  void backward(Var root, const Tensor<T>& seed);

  std::size_t size() const { return nodes_.size(); }

  // When on (default), every recorded value is scanned for NaN/Inf and a
  // non-finite result throws std::runtime_error naming the node.
  void set_check_finite(bool on) { check_finite_ = on; }

 private:
  struct Node {
    std::string_view op;
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    Parameter<T>* param = nullptr;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  bool check_finite_ = true;
  bool done_ = false;
};

}  // namespace mio::nn
