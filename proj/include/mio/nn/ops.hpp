#pragma once

#include <span>

#include "mio/nn/graph.hpp"

// Differentiable primitives. Every op validates shapes and throws
// std::invalid_argument naming the op on mismatch.
namespace mio::nn {

template <std::floating_point T>
using Var = typename Graph<T>::Var;

// 2-D convolution, square kernel weight (Cout, Cin, k, k), odd k, stride 1
// or 2, edge-replicate padding of k/2. bias is (1, Cout, 1, 1) or invalid
// (no bias). Output is (N, Cout, ceil(H/stride), ceil(W/stride)).
template <std::floating_point T>
Var<T> conv2d(Graph<T>& g, Var<T> x, Var<T> weight, Var<T> bias, int stride = 1);

template <std::floating_point T>
Var<T> leaky_relu(Graph<T>& g, Var<T> x, T slope = T(0.2));

template <std::floating_point T>
Var<T> relu(Graph<T>& g, Var<T> x);

// x (N, K, 1, 1), weight (M, K, 1, 1), bias (1, M, 1, 1) -> (N, M, 1, 1).
template <std::floating_point T>
Var<T> dense(Graph<T>& g, Var<T> x, Var<T> weight, Var<T> bias);

// (N, C, H, W) -> (N, C, 1, 1).
template <std::floating_point T>
Var<T> global_avg_pool(Graph<T>& g, Var<T> x);

// b has the shape of a, or (1, C, 1, 1) / (N, C, 1, 1) broadcast over space
// (and batch).
template <std::floating_point T>
Var<T> add(Graph<T>& g, Var<T> a, Var<T> b);

template <std::floating_point T>
Var<T> mul(Graph<T>& g, Var<T> a, Var<T> b);

// out[n,c,h,w] = f[n,c,h,w] * s[c] + b[c]; s and b are (1, C, 1, 1) or
// per-sample (N, C, 1, 1).
template <std::floating_point T>
Var<T> channel_affine(Graph<T>& g, Var<T> f, Var<T> s, Var<T> b);

// Mean of all elements -> (1, 1, 1, 1).
template <std::floating_point T>
Var<T> mean(Graph<T>& g, Var<T> x);

// Mean absolute error. Subgradient at exact ties is 0.
template <std::floating_point T>
Var<T> l1_loss(Graph<T>& g, Var<T> pred, Var<T> target);

// logits (N, K, 1, 1); mean over the batch of -log softmax[label].
template <std::floating_point T>
Var<T> softmax_cross_entropy(Graph<T>& g, Var<T> logits, std::span<const int> labels);

// Row lookup: table (K, C, H, W), out[n] = table[indices[n]].
template <std::floating_point T>
Var<T> gather(Graph<T>& g, Var<T> table, std::span<const int> indices);

}  // namespace mio::nn
