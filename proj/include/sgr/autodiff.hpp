// SPDX-FileCopyrightText: Copyright (c) 2026 The sgrlab Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Reverse-mode automatic differentiation on a dynamic tape.
//
// Every operation records its vector-Jacobian product as a closure that is
// itself written in terms of recorded operations. Running backward() with
// create_graph = true therefore produces gradient nodes that can be
// differentiated again (double backprop). Operations whose VJP is not built
// from differentiable pieces are marked first-order only; walking through one
// of them while building a gradient graph raises UnsupportedOpError.
//
// A Graph is single-threaded. Independent graphs may live on separate threads.

#include <cstddef>
#include <deque>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sgr/tensor.hpp"

namespace sgr::ad {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; does not own the node.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  bool valid() const noexcept { return graph_ != nullptr; }
  Graph& graph() const { return *graph_; }
  std::size_t id() const noexcept { return id_; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  const std::string& op() const;

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Returns one gradient per input; an invalid Var means "no contribution".
using VjpFn = std::function<std::vector<Var>(std::span<const Var> inputs, Var output, Var grad_output)>;

struct Node {
  std::string op;
  std::vector<std::size_t> inputs;
  Tensor value;
  bool requires_grad = false;
  bool twice_differentiable = true;
  VjpFn vjp;
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Appends an op node. The VJP is dropped when no input requires a gradient
  /// or recording is suspended.
  Var record(std::string op, std::span<const Var> inputs, Tensor value, VjpFn vjp,
             bool twice_differentiable = true);

  const Node& node(std::size_t id) const { return nodes_[id]; }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool recording() const noexcept { return suspended_ == 0; }

 private:
  friend class NoRecordGuard;
  std::deque<Node> nodes_;
  int suspended_ = 0;
};

/// Suspends gradient recording on a graph for the guard's lifetime.
class NoRecordGuard {
 public:
  explicit NoRecordGuard(Graph& graph) : graph_(graph) { ++graph_.suspended_; }
  ~NoRecordGuard() { --graph_.suspended_; }
  NoRecordGuard(const NoRecordGuard&) = delete;
  NoRecordGuard& operator=(const NoRecordGuard&) = delete;

 private:
  Graph& graph_;
};

/// Gradients of a scalar root with respect to each leaf, as graph nodes.
/// Leaves the root does not depend on receive zeros. With create_graph the
/// returned nodes are differentiable.
std::vector<Var> backward(Var root, std::span<const Var> leaves, bool create_graph);

/// First-order gradients as plain tensors.
std::vector<Tensor> gradients(Var root, std::span<const Var> leaves);
Tensor gradient(Var root, Var leaf);

/// Differentiable gradient node of root with respect to wrt.
Var grad_as_node(Var root, Var wrt);

using ScalarFn = std::function<Var(Graph&, Var)>;

/// Max over coordinates of |analytic - central| / (|analytic| + |central| + 1e-12).
double finite_diff_check(const ScalarFn& f, const Tensor& x, double h = 1e-5);

// ---------------------------------------------------------------------------
// Operations. Shapes are checked; violations throw ContractError.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double factor);
/// Elementwise product with a constant tensor.
Var mul_const(Var a, const Tensor& c);
Var add_const(Var a, const Tensor& c);

/// Sum of all entries, rank-0 result.
Var sum(Var a);
/// Broadcast a rank-0 node to the given shape.
Var expand(Var scalar, Shape shape);
Var reshape(Var a, Shape shape);

Var matmul(Var a, Var b);
Var transpose(Var a);
/// a (m x k) times constant (k x n).
Var matmul_const(Var a, const Tensor& c);

/// a (m x n) + v (n) on every row.
Var add_rowvec(Var a, Var v);
/// (m x n) -> (n)
Var sum_rows(Var a);
/// (n) -> (m x n)
Var broadcast_rows(Var v, std::size_t m);
/// (m x n) -> (m)
Var row_sums(Var a);
/// (m) -> (m x n)
Var broadcast_cols(Var v, std::size_t n);

/// ReLU with derivative 0 at exactly 0.
Var relu(Var a);
Var exp(Var a);
/// Row-wise max-subtracted log-softmax of an (m x K) node.
Var log_softmax(Var logits);
/// (m x K) -> (m): entry [i, labels[i]].
Var pick(Var a, std::span<const std::size_t> labels);
/// Adjoint of pick: (m) -> (m x K).
Var scatter_pick(Var g, std::span<const std::size_t> labels, std::size_t classes);

/// out[i] = a[index[i]]; result has the given shape.
Var gather(Var a, std::shared_ptr<const std::vector<std::size_t>> index, Shape shape);
/// out[index[i]] += g[i]; result has the given shape.
Var scatter_add(Var g, std::shared_ptr<const std::vector<std::size_t>> index, Shape shape);

/// Valid (no padding), stride-1 2D correlation. x: N x H x W x C, w: KH x KW x C x O.
Var conv2d(Var x, Var w);
/// Gradient of conv2d with respect to x, as an op of (g, w).
Var conv2d_input_grad(Var g, Var w, std::size_t height, std::size_t width);
/// Gradient of conv2d with respect to w, as an op of (x, g).
Var conv2d_weight_grad(Var x, Var g, std::size_t kernel_h, std::size_t kernel_w);
/// 2x2 max pooling, stride 2, N x H x W x C. Ties go to the first element in row-major scan.
Var max_pool2x2(Var x);

/// Constant linear map applied to every row of an (m x d) node.
class RowOperator {
 public:
  virtual ~RowOperator() = default;
  virtual std::size_t dim() const = 0;
  /// rows (m x d) -> rows (m x d) after the map.
  virtual Tensor apply(const Tensor& rows) const = 0;
  virtual Tensor apply_transpose(const Tensor& rows) const = 0;
};

Var apply_rows(Var a, std::shared_ptr<const RowOperator> op, bool transposed = false);

// First-order only: these break a create_graph backward pass.
Var abs(Var a);
Var sqrt(Var a);

}  // namespace sgr::ad
