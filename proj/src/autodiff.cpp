// SPDX-FileCopyrightText: Copyright (c) 2026 The sgrlab Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0
#include "sgr/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "sgr/error.hpp"

namespace sgr::ad {

const Tensor& Var::value() const { return graph_->node(id_).value; }
bool Var::requires_grad() const { return graph_->node(id_).requires_grad; }
const std::string& Var::op() const { return graph_->node(id_).op; }

Var Graph::leaf(Tensor value, bool requires_grad) {
  Node node;
  node.op = requires_grad ? "leaf" : "constant";
  node.value = std::move(value);
  node.requires_grad = requires_grad && recording();
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Graph::record(std::string op, std::span<const Var> inputs, Tensor value, VjpFn vjp,
                  bool twice_differentiable) {
  Node node;
  node.op = std::move(op);
  node.value = std::move(value);
  node.twice_differentiable = twice_differentiable;
  bool any = false;
  node.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    if (&in.graph() != this) throw ContractError("op '" + node.op + "' mixes nodes from different graphs");
    node.inputs.push_back(in.id());
    any = any || in.requires_grad();
  }
  node.requires_grad = any && recording();
  if (node.requires_grad) node.vjp = std::move(vjp);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

std::vector<Var> backward(Var root, std::span<const Var> leaves, bool create_graph) {
  require(root.valid(), "backward: invalid root");
  if (root.value().size() != 1) {
    throw ContractError("backward: root must be scalar, got shape " + shape_str(root.shape()));
  }
  Graph& g = root.graph();
  const std::size_t n = root.id() + 1;

  std::vector<char> needed(n, 0);
  for (const Var& leaf : leaves) {
    require(&leaf.graph() == &g, "backward: leaf belongs to another graph");
    if (leaf.id() < n) needed[leaf.id()] = 1;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const Node& node = g.node(i);
    if (needed[i] || !node.vjp) continue;
    for (std::size_t in : node.inputs) {
      if (needed[in]) {
        needed[i] = 1;
        break;
      }
    }
  }

  std::vector<Var> grads(n);
  {
    std::unique_ptr<NoRecordGuard> guard;
    if (!create_graph) guard = std::make_unique<NoRecordGuard>(g);
    if (needed[root.id()]) grads[root.id()] = g.constant(Tensor(root.shape(), 1.0));

    std::vector<Var> inputs;
    for (std::size_t i = n; i-- > 0;) {
      if (!needed[i] || !grads[i].valid()) continue;
      const Node& node = g.node(i);
      if (!node.vjp) continue;
      if (create_graph && !node.twice_differentiable) {
        throw UnsupportedOpError("op '" + node.op + "' has no second-order rule");
      }
      inputs.clear();
      for (std::size_t in : node.inputs) inputs.emplace_back(&g, in);
      std::vector<Var> input_grads = node.vjp(inputs, Var(&g, i), grads[i]);
      for (std::size_t k = 0; k < input_grads.size(); ++k) {
        const Var& contribution = input_grads[k];
        const std::size_t target = node.inputs[k];
        if (!contribution.valid() || !needed[target]) continue;
        if (!contribution.value().all_finite()) {
          throw NumericError("non-finite gradient produced by op '" + node.op + "'");
        }
        grads[target] = grads[target].valid() ? add(grads[target], contribution) : contribution;
      }
    }
  }

  std::vector<Var> out;
  out.reserve(leaves.size());
  for (const Var& leaf : leaves) {
    if (leaf.id() < n && grads[leaf.id()].valid()) {
      out.push_back(grads[leaf.id()]);
    } else {
      out.push_back(g.constant(Tensor(leaf.shape(), 0.0)));
    }
  }
  return out;
}

std::vector<Tensor> gradients(Var root, std::span<const Var> leaves) {
  std::vector<Var> nodes = backward(root, leaves, false);
  std::vector<Tensor> out;
  out.reserve(nodes.size());
  for (const Var& v : nodes) out.push_back(v.value());
  return out;
}

Tensor gradient(Var root, Var leaf) { return gradients(root, std::span<const Var>(&leaf, 1)).front(); }

Var grad_as_node(Var root, Var wrt) { return backward(root, std::span<const Var>(&wrt, 1), true).front(); }

double finite_diff_check(const ScalarFn& f, const Tensor& x, double h) {
  Tensor analytic;
  {
    Graph g;
    Var leaf = g.leaf(x);
    analytic = gradient(f(g, leaf), leaf);
  }
  auto eval = [&](const Tensor& point) {
    Graph g;
    return f(g, g.constant(point)).value().item();
  };
  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = eval(probe);
    probe[i] = x[i] - h;
    const double down = eval(probe);
    probe[i] = x[i];
    const double central = (up - down) / (2.0 * h);
    const double err = std::abs(analytic[i] - central) / (std::abs(analytic[i]) + std::abs(central) + 1e-12);
    worst = std::max(worst, err);
  }
  return worst;
}

// ---------------------------------------------------------------------------

namespace {

void same_shape(Var a, Var b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ContractError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
  }
}

void need_rank(Var a, std::size_t rank, const char* op) {
  if (a.shape().size() != rank) {
    throw ContractError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                        shape_str(a.shape()));
  }
}

Var unary(std::string op, Var a, Tensor value, VjpFn vjp, bool twice = true) {
  const Var in[] = {a};
  return a.graph().record(std::move(op), in, std::move(value), std::move(vjp), twice);
}

Var binary(std::string op, Var a, Var b, Tensor value, VjpFn vjp) {
  const Var in[] = {a, b};
  return a.graph().record(std::move(op), in, std::move(value), std::move(vjp));
}

struct ConvGeometry {
  std::size_t n, h, w, c, kh, kw, o, oh, ow;
};

// x: N x H x W x C  ->  (N*OH*OW) x (KH*KW*C)
Tensor im2col(const Tensor& x, const ConvGeometry& s) {
  Tensor cols(Shape{s.n * s.oh * s.ow, s.kh * s.kw * s.c});
  double* out = cols.data().data();
  const double* in = x.data().data();
  for (std::size_t b = 0; b < s.n; ++b)
    for (std::size_t y = 0; y < s.oh; ++y)
      for (std::size_t xx = 0; xx < s.ow; ++xx)
        for (std::size_t dy = 0; dy < s.kh; ++dy) {
          const double* src = in + ((b * s.h + y + dy) * s.w + xx) * s.c;
          out = std::copy(src, src + s.kw * s.c, out);
        }
  return cols;
}

Tensor col2im(const Tensor& cols, const ConvGeometry& s) {
  Tensor x(Shape{s.n, s.h, s.w, s.c});
  double* out = x.data().data();
  const double* in = cols.data().data();
  for (std::size_t b = 0; b < s.n; ++b)
    for (std::size_t y = 0; y < s.oh; ++y)
      for (std::size_t xx = 0; xx < s.ow; ++xx)
        for (std::size_t dy = 0; dy < s.kh; ++dy) {
          double* dst = out + ((b * s.h + y + dy) * s.w + xx) * s.c;
          for (std::size_t k = 0; k < s.kw * s.c; ++k) dst[k] += *in++;
        }
  return x;
}

ConvGeometry conv_geometry(const Shape& x, const Shape& w) {
  if (x.size() != 4 || w.size() != 4 || x[3] != w[2] || x[1] < w[0] || x[2] < w[1]) {
    throw ContractError("conv2d: incompatible shapes x" + shape_str(x) + " w" + shape_str(w));
  }
  return {x[0], x[1], x[2], x[3], w[0], w[1], w[3], x[1] - w[0] + 1, x[2] - w[1] + 1};
}

Tensor conv_forward(const Tensor& x, const Tensor& w) {
  const ConvGeometry s = conv_geometry(x.shape(), w.shape());
  Tensor y = kernels::matmul(im2col(x, s), w.reshaped({s.kh * s.kw * s.c, s.o}));
  return y.reshaped({s.n, s.oh, s.ow, s.o});
}

}  // namespace

Var add(Var a, Var b) {
  same_shape(a, b, "add");
  return binary("add", a, b, kernels::add(a.value(), b.value()),
                [](std::span<const Var>, Var, Var g) { return std::vector<Var>{g, g}; });
}

Var sub(Var a, Var b) {
  same_shape(a, b, "sub");
  return binary("sub", a, b, kernels::sub(a.value(), b.value()),
                [](std::span<const Var>, Var, Var g) { return std::vector<Var>{g, neg(g)}; });
}

Var mul(Var a, Var b) {
  same_shape(a, b, "mul");
  return binary("mul", a, b, kernels::mul(a.value(), b.value()), [](std::span<const Var> in, Var, Var g) {
    return std::vector<Var>{mul(g, in[1]), mul(g, in[0])};
  });
}

Var neg(Var a) { return scale(a, -1.0); }

Var scale(Var a, double factor) {
  return unary("scale", a, kernels::scale(a.value(), factor),
               [factor](std::span<const Var>, Var, Var g) { return std::vector<Var>{scale(g, factor)}; });
}

Var mul_const(Var a, const Tensor& c) {
  if (a.shape() != c.shape()) throw ContractError("mul_const: shape mismatch");
  auto held = std::make_shared<const Tensor>(c);
  return unary("mul_const", a, kernels::mul(a.value(), c),
               [held](std::span<const Var>, Var, Var g) { return std::vector<Var>{mul_const(g, *held)}; });
}

Var add_const(Var a, const Tensor& c) {
  if (a.shape() != c.shape()) throw ContractError("add_const: shape mismatch");
  return unary("add_const", a, kernels::add(a.value(), c),
               [](std::span<const Var>, Var, Var g) { return std::vector<Var>{g}; });
}

Var sum(Var a) {
  return unary("sum", a, Tensor::scalar(kernels::sum(a.value())), [](std::span<const Var> in, Var, Var g) {
    return std::vector<Var>{expand(g, in[0].shape())};
  });
}

Var expand(Var scalar, Shape shape) {
  require(scalar.value().size() == 1, "expand: source must hold one element");
  Tensor value(shape, scalar.value()[0]);
  return unary("expand", scalar, std::move(value), [](std::span<const Var> in, Var, Var g) {
    return std::vector<Var>{reshape(sum(g), in[0].shape())};
  });
}

Var reshape(Var a, Shape shape) {
  if (a.shape() == shape) return a;
  return unary("reshape", a, a.value().reshaped(std::move(shape)), [](std::span<const Var> in, Var, Var g) {
    return std::vector<Var>{reshape(g, in[0].shape())};
  });
}

Var matmul(Var a, Var b) {
  need_rank(a, 2, "matmul");
  need_rank(b, 2, "matmul");
  return binary("matmul", a, b, kernels::matmul(a.value(), b.value()), [](std::span<const Var> in, Var, Var g) {
    return std::vector<Var>{matmul(g, transpose(in[1])), matmul(transpose(in[0]), g)};
  });
}

Var transpose(Var a) {
  need_rank(a, 2, "transpose");
  return unary("transpose", a, kernels::transpose(a.value()),
               [](std::span<const Var>, Var, Var g) { return std::vector<Var>{transpose(g)}; });
}

Var matmul_const(Var a, const Tensor& c) {
  need_rank(a, 2, "matmul_const");
  auto held_t = std::make_shared<const Tensor>(kernels::transpose(c));
  return unary("matmul_const", a, kernels::matmul(a.value(), c), [held_t](std::span<const Var>, Var, Var g) {
    return std::vector<Var>{matmul_const(g, *held_t)};
  });
}

Var add_rowvec(Var a, Var v) {
  need_rank(a, 2, "add_rowvec");
  need_rank(v, 1, "add_rowvec");
  if (a.shape()[1] != v.shape()[0]) throw ContractError("add_rowvec: width mismatch");
  Tensor value = a.value();
  const std::size_t m = value.dim(0), n = value.dim(1);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) value[i * n + j] += v.value()[j];
  return binary("add_rowvec", a, v, std::move(value),
                [](std::span<const Var>, Var, Var g) { return std::vector<Var>{g, sum_rows(g)}; });
}

Var sum_rows(Var a) {
  need_rank(a, 2, "sum_rows");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  Tensor value(Shape{n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) value[j] += a.value()[i * n + j];
  return unary("sum_rows", a, std::move(value),
               [m](std::span<const Var>, Var, Var g) { return std::vector<Var>{broadcast_rows(g, m)}; });
}

Var broadcast_rows(Var v, std::size_t m) {
  need_rank(v, 1, "broadcast_rows");
  const std::size_t n = v.shape()[0];
  Tensor value(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i) std::copy_n(v.value().data().data(), n, value.data().data() + i * n);
  return unary("broadcast_rows", v, std::move(value),
               [](std::span<const Var>, Var, Var g) { return std::vector<Var>{sum_rows(g)}; });
}

Var row_sums(Var a) {
  need_rank(a, 2, "row_sums");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  Tensor value(Shape{m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) value[i] += a.value()[i * n + j];
  return unary("row_sums", a, std::move(value),
               [n](std::span<const Var>, Var, Var g) { return std::vector<Var>{broadcast_cols(g, n)}; });
}

Var broadcast_cols(Var v, std::size_t n) {
  need_rank(v, 1, "broadcast_cols");
  const std::size_t m = v.shape()[0];
  Tensor value(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) value[i * n + j] = v.value()[i];
  return unary("broadcast_cols", v, std::move(value),
               [](std::span<const Var>, Var, Var g) { return std::vector<Var>{row_sums(g)}; });
}

Var relu(Var a) {
  Tensor value = a.value();
  Tensor mask(a.shape());
  for (std::size_t i = 0; i < value.size(); ++i) {
    if (value[i] > 0.0) {
      mask[i] = 1.0;
    } else {
      value[i] = 0.0;
    }
  }
  auto held = std::make_shared<const Tensor>(std::move(mask));
  return unary("relu", a, std::move(value),
               [held](std::span<const Var>, Var, Var g) { return std::vector<Var>{mul_const(g, *held)}; });
}

Var exp(Var a) {
  Tensor value = a.value();
  for (double& v : value.data()) v = std::exp(v);
  return unary("exp", a, std::move(value),
               [](std::span<const Var>, Var out, Var g) { return std::vector<Var>{mul(g, out)}; });
}

Var log_softmax(Var logits) {
  need_rank(logits, 2, "log_softmax");
  const std::size_t m = logits.shape()[0], k = logits.shape()[1];
  require(k >= 1, "log_softmax: needs at least one class");
  Tensor value = logits.value();
  for (std::size_t i = 0; i < m; ++i) {
    std::span<double> row = value.row(i);
    const double top = *std::max_element(row.begin(), row.end());
    double acc = 0.0;
    for (double v : row) acc += std::exp(v - top);
    const double lse = top + std::log(acc);
    for (double& v : row) v -= lse;
  }
  return unary("log_softmax", logits, std::move(value), [k](std::span<const Var>, Var out, Var g) {
    return std::vector<Var>{sub(g, mul(exp(out), broadcast_cols(row_sums(g), k)))};
  });
}

Var pick(Var a, std::span<const std::size_t> labels) {
  need_rank(a, 2, "pick");
  const std::size_t m = a.shape()[0], k = a.shape()[1];
  require(labels.size() == m, "pick: one label per row required");
  auto held = std::make_shared<const std::vector<std::size_t>>(labels.begin(), labels.end());
  Tensor value(Shape{m});
  for (std::size_t i = 0; i < m; ++i) {
    require(labels[i] < k, "pick: label out of range");
    value[i] = a.value()[i * k + labels[i]];
  }
  return unary("pick", a, std::move(value), [held, k](std::span<const Var>, Var, Var g) {
    return std::vector<Var>{scatter_pick(g, *held, k)};
  });
}

Var scatter_pick(Var g, std::span<const std::size_t> labels, std::size_t classes) {
  need_rank(g, 1, "scatter_pick");
  const std::size_t m = g.shape()[0];
  require(labels.size() == m, "scatter_pick: one label per row required");
  auto held = std::make_shared<const std::vector<std::size_t>>(labels.begin(), labels.end());
  Tensor value(Shape{m, classes});
  for (std::size_t i = 0; i < m; ++i) {
    require(labels[i] < classes, "scatter_pick: label out of range");
    value[i * classes + labels[i]] = g.value()[i];
  }
  return unary("scatter_pick", g, std::move(value), [held](std::span<const Var>, Var, Var up) {
    return std::vector<Var>{pick(up, *held)};
  });
}

Var gather(Var a, std::shared_ptr<const std::vector<std::size_t>> index, Shape shape) {
  require(index->size() == shape_size(shape), "gather: index count must match output shape");
  Tensor value(shape);
  for (std::size_t i = 0; i < index->size(); ++i) {
    require((*index)[i] < a.value().size(), "gather: index out of range");
    value[i] = a.value()[(*index)[i]];
  }
  return unary("gather", a, std::move(value), [index](std::span<const Var> in, Var, Var g) {
    return std::vector<Var>{scatter_add(g, index, in[0].shape())};
  });
}

Var scatter_add(Var g, std::shared_ptr<const std::vector<std::size_t>> index, Shape shape) {
  require(index->size() == g.value().size(), "scatter_add: index count must match source size");
  Tensor value(shape);
  for (std::size_t i = 0; i < index->size(); ++i) {
    require((*index)[i] < value.size(), "scatter_add: index out of range");
    value[(*index)[i]] += g.value()[i];
  }
  return unary("scatter_add", g, std::move(value), [index](std::span<const Var> in, Var, Var up) {
    return std::vector<Var>{gather(up, index, in[0].shape())};
  });
}

Var conv2d(Var x, Var w) {
  Tensor value = conv_forward(x.value(), w.value());
  return binary("conv2d", x, w, std::move(value), [](std::span<const Var> in, Var, Var g) {
    const Shape& xs = in[0].shape();
    const Shape& ws = in[1].shape();
    return std::vector<Var>{conv2d_input_grad(g, in[1], xs[1], xs[2]), conv2d_weight_grad(in[0], g, ws[0], ws[1])};
  });
}

Var conv2d_input_grad(Var g, Var w, std::size_t height, std::size_t width) {
  const Shape& gs = g.shape();
  const Shape& ws = w.shape();
  require(gs.size() == 4 && ws.size() == 4 && gs[3] == ws[3] && gs[1] + ws[0] - 1 == height &&
              gs[2] + ws[1] - 1 == width,
          "conv2d_input_grad: incompatible shapes");
  const ConvGeometry s{gs[0], height, width, ws[2], ws[0], ws[1], ws[3], gs[1], gs[2]};
  Tensor cols = kernels::matmul(g.value().reshaped({s.n * s.oh * s.ow, s.o}),
                                w.value().reshaped({s.kh * s.kw * s.c, s.o}), false, true);
  return binary("conv2d_input_grad", g, w, col2im(cols, s), [](std::span<const Var> in, Var, Var up) {
    const Shape& ws = in[1].shape();
    return std::vector<Var>{conv2d(up, in[1]), conv2d_weight_grad(up, in[0], ws[0], ws[1])};
  });
}

Var conv2d_weight_grad(Var x, Var g, std::size_t kernel_h, std::size_t kernel_w) {
  const Shape& xs = x.shape();
  const Shape& gs = g.shape();
  require(xs.size() == 4 && gs.size() == 4 && xs[0] == gs[0] && xs[1] == gs[1] + kernel_h - 1 &&
              xs[2] == gs[2] + kernel_w - 1,
          "conv2d_weight_grad: incompatible shapes");
  const ConvGeometry s{xs[0], xs[1], xs[2], xs[3], kernel_h, kernel_w, gs[3], gs[1], gs[2]};
  Tensor dw = kernels::matmul(im2col(x.value(), s), g.value().reshaped({s.n * s.oh * s.ow, s.o}), true, false);
  return binary("conv2d_weight_grad", x, g, dw.reshaped({s.kh, s.kw, s.c, s.o}),
                [](std::span<const Var> in, Var, Var up) {
                  const Shape& xs = in[0].shape();
                  return std::vector<Var>{conv2d_input_grad(in[1], up, xs[1], xs[2]), conv2d(in[0], up)};
                });
}

Var max_pool2x2(Var x) {
  need_rank(x, 4, "max_pool2x2");
  const Shape& s = x.shape();
  const std::size_t n = s[0], h = s[1], w = s[2], c = s[3];
  const std::size_t oh = h / 2, ow = w / 2;
  require(oh > 0 && ow > 0, "max_pool2x2: input smaller than the pool window");
  auto index = std::make_shared<std::vector<std::size_t>>();
  index->reserve(n * oh * ow * c);
  const Tensor& v = x.value();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx)
        for (std::size_t ch = 0; ch < c; ++ch) {
          std::size_t best = ((b * h + 2 * y) * w + 2 * xx) * c + ch;
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t at = ((b * h + 2 * y + dy) * w + 2 * xx + dx) * c + ch;
              if (v[at] > v[best]) best = at;
            }
          index->push_back(best);
        }
  return gather(x, std::move(index), Shape{n, oh, ow, c});
}

namespace {

Tensor apply_operator(const RowOperator& op, const Tensor& rows, bool transposed) {
  return transposed ? op.apply_transpose(rows) : op.apply(rows);
}

}  // namespace

Var apply_rows(Var a, std::shared_ptr<const RowOperator> op, bool transposed) {
  need_rank(a, 2, "apply_rows");
  if (a.shape()[1] != op->dim()) {
    throw ContractError("apply_rows: operator dimension " + std::to_string(op->dim()) + " vs rows " +
                        shape_str(a.shape()));
  }
  Tensor value = apply_operator(*op, a.value(), transposed);
  return unary("apply_rows", a, std::move(value), [op, transposed](std::span<const Var>, Var, Var g) {
    return std::vector<Var>{apply_rows(g, op, !transposed)};
  });
}

Var abs(Var a) {
  Tensor value = a.value();
  Tensor sign(a.shape());
  for (std::size_t i = 0; i < value.size(); ++i) {
    sign[i] = value[i] > 0 ? 1.0 : (value[i] < 0 ? -1.0 : 0.0);
    value[i] = std::abs(value[i]);
  }
  auto held = std::make_shared<const Tensor>(std::move(sign));
  return unary(
      "abs", a, std::move(value),
      [held](std::span<const Var>, Var, Var g) { return std::vector<Var>{mul_const(g, *held)}; },
      /*twice=*/false);
}

Var sqrt(Var a) {
  Tensor value = a.value();
  Tensor slope(a.shape());
  for (std::size_t i = 0; i < value.size(); ++i) {
    value[i] = std::sqrt(value[i]);
    slope[i] = 0.5 / value[i];
  }
  auto held = std::make_shared<const Tensor>(std::move(slope));
  return unary(
      "sqrt", a, std::move(value),
      [held](std::span<const Var>, Var, Var g) { return std::vector<Var>{mul_const(g, *held)}; },
      /*twice=*/false);
}

}  // namespace sgr::ad
