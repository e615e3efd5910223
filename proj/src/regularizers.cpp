// SPDX-FileCopyrightText: Copyright (c) 2026 The sgrlab Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0
#include "sgr/regularizers.hpp"

#include <algorithm>
#include <cmath>

#include "sgr/covariance.hpp"
#include "sgr/error.hpp"

namespace sgr::reg {

Kind parse_kind(const std::string& name) {
  if (name == "none") return Kind::kNone;
  if (name == "gn") return Kind::kGn;
  if (name == "sgr") return Kind::kSgr;
  throw ConfigError("unknown regularizer kind '" + name + "' (expected none, gn, sgr)");
}

std::string to_string(Kind kind) {
  switch (kind) {
    case Kind::kNone: return "none";
    case Kind::kGn: return "gn";
    case Kind::kSgr: return "sgr";
  }
  return "?";
}

ad::Var input_grad_node(const models::Classifier& model, ad::Graph& graph, std::span<const ad::Var> params,
                        ad::Var x, std::span<const std::size_t> labels) {
  ad::Var lp = models::log_prob(model, graph, params, x, labels);
  return ad::grad_as_node(ad::sum(lp), x);
}

ad::Var quadratic_penalty(ad::Var grads, std::shared_ptr<const ad::RowOperator> sigma, double scale) {
  const double m = static_cast<double>(grads.shape()[0]);
  ad::Var sg = ad::apply_rows(grads, std::move(sigma));
  return ad::scale(ad::sum(ad::mul(grads, sg)), scale / (2.0 * m));
}

ad::Var sgr_omega(const models::Classifier& model, ad::Graph& graph, std::span<const ad::Var> params,
                  const Tensor& x, std::span<const std::size_t> labels, std::shared_ptr<const ad::RowOperator> sigma,
                  double sigma_t) {
  require(!labels.empty(), "sgr_omega needs a nonempty batch");
  ad::Var input = graph.leaf(x);
  return quadratic_penalty(input_grad_node(model, graph, params, input, labels), std::move(sigma), sigma_t);
}

ad::Var gn_omega(const models::Classifier& model, ad::Graph& graph, std::span<const ad::Var> params,
                 const Tensor& x, std::span<const std::size_t> labels) {
  return sgr_omega(model, graph, params, x, labels, std::make_shared<cov::IdentityOperator>(model.input_dim()), 1.0);
}

namespace {

ad::Var linear_correction(ad::Var grads, const Tensor& mu) {
  const std::size_t m = grads.shape()[0], d = grads.shape()[1];
  if (mu.size() != d) throw ContractError("uncentered correction: mean has the wrong length");
  ad::Var projected = ad::matmul_const(grads, mu.reshaped({d, 1}));
  return ad::scale(ad::sum(projected), -1.0 / static_cast<double>(m));
}

}  // namespace

ad::Var uncentered_correction(const models::Classifier& model, ad::Graph& graph, std::span<const ad::Var> params,
                              const Tensor& x, std::span<const std::size_t> labels, const Tensor& mu) {
  require(!labels.empty(), "uncentered_correction needs a nonempty batch");
  ad::Var input = graph.leaf(x);
  return linear_correction(input_grad_node(model, graph, params, input, labels), mu);
}

ad::Var sgr_omega_logit(const models::Classifier& model, ad::Graph& graph, std::span<const ad::Var> params,
                        const Tensor& x, std::span<const std::size_t> labels,
                        std::shared_ptr<const ad::RowOperator> sigma, double sigma_t) {
  require(!labels.empty(), "sgr_omega_logit needs a nonempty batch");
  const std::size_t m = labels.size(), d = model.input_dim(), classes = model.num_classes();
  for (std::size_t y : labels) require(y < classes, "class index out of range");
  ad::Var input = graph.leaf(x);
  ad::Var z = models::logits(model, graph, params, input);
  ad::Var phi = ad::exp(ad::log_softmax(z));

  ad::Var class_average, selected;
  std::vector<std::size_t> column(m);
  for (std::size_t k = 0; k < classes; ++k) {
    std::fill(column.begin(), column.end(), k);
    ad::Var grad_k = ad::grad_as_node(ad::sum(ad::pick(z, column)), input);

    ad::Var weighted = ad::mul(ad::broadcast_cols(ad::pick(phi, column), d), grad_k);
    class_average = class_average.valid() ? ad::add(class_average, weighted) : weighted;

    Tensor mask(Shape{m, d});
    for (std::size_t i = 0; i < m; ++i)
      if (labels[i] == k) std::fill_n(mask.data().begin() + static_cast<std::ptrdiff_t>(i * d), d, 1.0);
    ad::Var mine = ad::mul_const(grad_k, mask);
    selected = selected.valid() ? ad::add(selected, mine) : mine;
  }
  return quadratic_penalty(ad::sub(selected, class_average), std::move(sigma), sigma_t);
}

namespace {

struct OneLayerTerms {
  std::vector<double> p;  // softmax, K
  std::vector<double> v;  // w_y - <w>, d
  std::vector<double> u;  // sym(Sigma) v, d
};

const models::LinearSoftmax& as_linear(const models::Classifier& model) {
  const auto* lin = dynamic_cast<const models::LinearSoftmax*>(&model);
  if (lin == nullptr) throw ContractError("closed form requires a one-layer softmax classifier, got " + model.kind());
  return *lin;
}

OneLayerTerms one_layer_terms(const models::LinearSoftmax& lin, std::span<const double> x, std::size_t y,
                              const Tensor& sigma) {
  const Tensor& w = lin.weights();
  const Tensor& b = lin.biases();
  const std::size_t classes = w.dim(0), d = w.dim(1);
  OneLayerTerms t{std::vector<double>(classes), std::vector<double>(d), std::vector<double>(d, 0.0)};
  double top = -INFINITY;
  for (std::size_t k = 0; k < classes; ++k) {
    double z = b[k];
    for (std::size_t j = 0; j < d; ++j) z += w[k * d + j] * x[j];
    t.p[k] = z;
    top = std::max(top, z);
  }
  double norm = 0.0;
  for (double& pk : t.p) norm += (pk = std::exp(pk - top));
  for (double& pk : t.p) pk /= norm;
  for (std::size_t j = 0; j < d; ++j) {
    double avg = 0.0;
    for (std::size_t k = 0; k < classes; ++k) avg += t.p[k] * w[k * d + j];
    t.v[j] = w[y * d + j] - avg;
  }
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) t.u[i] += 0.5 * (sigma[i * d + j] + sigma[j * d + i]) * t.v[j];
  return t;
}

void check_closed_form_inputs(const models::LinearSoftmax& lin, const Tensor& x, std::span<const std::size_t> labels,
                              const Tensor& sigma) {
  const std::size_t d = lin.input_dim();
  require(x.rank() == 2 && x.dim(1) == d && x.dim(0) == labels.size() && !labels.empty(),
          "closed form: x must be (m x d) with one label per row");
  require(sigma.rank() == 2 && sigma.dim(0) == d && sigma.dim(1) == d, "closed form: Sigma must be d x d");
  for (std::size_t y : labels) require(y < lin.num_classes(), "class index out of range");
}

}  // namespace

double onelayer_closed_form(const models::Classifier& model, const Tensor& x, std::span<const std::size_t> labels,
                            const Tensor& sigma) {
  const auto& lin = as_linear(model);
  check_closed_form_inputs(lin, x, labels, sigma);
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const OneLayerTerms t = one_layer_terms(lin, x.row(i), labels[i], sigma);
    double quad = 0.0;
    for (std::size_t j = 0; j < t.v.size(); ++j) quad += t.v[j] * t.u[j];
    total += 0.5 * quad;
  }
  return total / static_cast<double>(labels.size());
}

std::vector<Tensor> onelayer_closed_form_grad(const models::Classifier& model, const Tensor& x,
                                              std::span<const std::size_t> labels, const Tensor& sigma) {
  const auto& lin = as_linear(model);
  check_closed_form_inputs(lin, x, labels, sigma);
  const Tensor& w = lin.weights();
  const std::size_t classes = w.dim(0), d = w.dim(1);
  const double inv_m = 1.0 / static_cast<double>(labels.size());
  Tensor dw(Shape{classes, d}), db(Shape{classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::span<const double> xi = x.row(i);
    const OneLayerTerms t = one_layer_terms(lin, xi, labels[i], sigma);
    // Omega_i = 1/2 v^T S v with v = w_y - W^T p and p = softmax(W x + b):
    //   dOmega/dw_k = [k == y] u - p_k u - q_k x,  dOmega/db_k = -q_k,
    //   a = W u,  q = p * a - p (p . a).
    std::vector<double> a(classes, 0.0);
    double pa = 0.0;
    for (std::size_t k = 0; k < classes; ++k) {
      for (std::size_t j = 0; j < d; ++j) a[k] += w[k * d + j] * t.u[j];
      pa += t.p[k] * a[k];
    }
    for (std::size_t k = 0; k < classes; ++k) {
      const double q = t.p[k] * a[k] - t.p[k] * pa;
      const double direct = (k == labels[i] ? 1.0 : 0.0) - t.p[k];
      for (std::size_t j = 0; j < d; ++j) dw[k * d + j] += inv_m * (direct * t.u[j] - q * xi[j]);
      db[k] -= inv_m * q;
    }
  }
  return {dw, db};
}

ad::Var weight_penalty(const models::Classifier& model, std::span<const ad::Var> params, double weight_decay) {
  if (weight_decay == 0.0) return {};
  ad::Var norm;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!model.is_weight()[i]) continue;
    ad::Var sq = ad::sum(ad::mul(params[i], params[i]));
    norm = norm.valid() ? ad::add(norm, sq) : sq;
  }
  return norm.valid() ? ad::scale(norm, 0.5 * weight_decay) : norm;
}

Objective total_objective(const models::Classifier& model, ad::Graph& graph, std::span<const ad::Var> params,
                          const Tensor& x, std::span<const std::size_t> labels, const RegularizerSpec& spec,
                          std::shared_ptr<const ad::RowOperator> sigma, double sigma_t, double weight_decay,
                          const std::optional<Tensor>& mean) {
  require(!labels.empty(), "total_objective needs a nonempty batch");
  if (spec.lambda < 0.0) throw ConfigError("regularization strength must be nonnegative");
  Objective out;
  const bool penalize = spec.kind != Kind::kNone && spec.lambda != 0.0;

  ad::Var input = graph.leaf(x, penalize);
  ad::Var log_probs = ad::sum(models::log_prob(model, graph, params, input, labels));
  out.cross_entropy = ad::scale(log_probs, -1.0 / static_cast<double>(labels.size()));
  out.total = out.cross_entropy;

  if (penalize) {
    if (spec.kind == Kind::kGn) {
      sigma = std::make_shared<cov::IdentityOperator>(model.input_dim());
      sigma_t = 1.0;
    }
    require(sigma != nullptr, "SGR penalty needs a covariance operator");
    if (spec.logit_form) {
      out.omega = sgr_omega_logit(model, graph, params, x, labels, sigma, sigma_t);
    } else {
      // Reuse the forward pass that produced the cross-entropy.
      ad::Var grads = ad::grad_as_node(log_probs, input);
      out.omega = quadratic_penalty(grads, sigma, sigma_t);
      if (spec.uncentered) {
        if (!mean) throw ConfigError("uncentered correction enabled but the estimator tracks no mean");
        out.correction = linear_correction(grads, *mean);
      }
    }
    if (spec.uncentered && !out.correction.valid()) {
      if (!mean) throw ConfigError("uncentered correction enabled but the estimator tracks no mean");
      out.correction = uncentered_correction(model, graph, params, x, labels, *mean);
    }
    ad::Var penalty = out.correction.valid() ? ad::add(out.omega, out.correction) : out.omega;
    out.total = ad::add(out.total, ad::scale(penalty, spec.lambda));
  }

  ad::Var decay = weight_penalty(model, params, weight_decay);
  if (decay.valid()) out.total = ad::add(out.total, decay);
  return out;
}

}  // namespace sgr::reg
