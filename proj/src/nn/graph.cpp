#include "mio/nn/graph.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace mio::nn {

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + ")";
}

template <std::floating_point T>
bool all_finite(std::span<const T> values) {
  // x * 0 is NaN exactly when x is not finite; lane sums keep it vectorized.
  constexpr std::size_t kLanes = 16;
  T acc[kLanes] = {};
  const T* p = values.data();
  const std::size_t n = values.size();
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    for (std::size_t j = 0; j < kLanes; ++j) acc[j] += p[i + j] * T(0);
  }
  for (; i < n; ++i) acc[0] += p[i] * T(0);
  T total = 0;
  for (T a : acc) total += a;
  return total == T(0);
}

template <std::floating_point T>
typename Graph<T>::Var Graph<T>::constant(Tensor<T> value) {
  return input(std::move(value), false);
}

template <std::floating_point T>
typename Graph<T>::Var Graph<T>::input(Tensor<T> value, bool requires_grad) {
  Node node;
  node.op = "input";
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <std::floating_point T>
typename Graph<T>::Var Graph<T>::parameter(Parameter<T>& p) {
  Node node;
  node.op = "parameter";
  node.value = p.value;
  node.requires_grad = true;
  node.param = &p;
  nodes_.push_back(std::move(node));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <std::floating_point T>
typename Graph<T>::Var Graph<T>::record(std::string_view op, Tensor<T> value,
                                        std::initializer_list<Var> inputs, BackwardFn backward) {
  if (check_finite_ && !all_finite<T>(value.values())) {
    throw std::runtime_error("non-finite value produced by " + std::string(op) + " node #" +
                             std::to_string(nodes_.size()));
  }
  Node node;
  node.op = op;
  node.value = std::move(value);
  for (Var v : inputs) {
    if (v.valid() && nodes_.at(v.id).requires_grad) node.requires_grad = true;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <std::floating_point T>
Tensor<T>& Graph<T>::grad(int id) {
  Node& node = nodes_.at(id);
  if (node.grad.empty()) node.grad = Tensor<T>(node.value.shape());
  return node.grad;
}

template <std::floating_point T>
void Graph<T>::backward(Var root) {
  if (value(root).size() != 1) {
    throw std::invalid_argument("backward(): root must be a scalar, got shape " +
                                shape(root).str());
  }
  backward(root, Tensor<T>(shape(root), T(1)));
}

template <std::floating_point T>
void Graph<T>::backward(Var root, const Tensor<T>& seed) {
  if (done_) throw std::logic_error("backward() already ran on this graph");
  if (seed.shape() != shape(root)) {
    throw std::invalid_argument("backward(): seed shape mismatch");
  }
  done_ = true;
  grad(root) = seed;
  for (int id = root.id; id >= 0; --id) {
    Node& node = nodes_[id];
    if (!node.requires_grad || node.grad.empty()) continue;
    if (check_finite_ && !all_finite<T>(node.grad.values())) {
      throw std::runtime_error("non-finite gradient at " + std::string(node.op) + " node #" +
                               std::to_string(id));
    }
    if (node.backward) node.backward(*this, id);
    if (node.param != nullptr) {
      Tensor<T>& pg = node.param->grad;
      if (pg.shape() != node.grad.shape()) pg = Tensor<T>(node.grad.shape());
      for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += nodes_[id].grad[i];
    }
  }
}

template bool all_finite<float>(std::span<const float>);
template bool all_finite<double>(std::span<const double>);
template class Graph<float>;
template class Graph<double>;

}  // namespace mio::nn
