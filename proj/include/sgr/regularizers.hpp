// SPDX-FileCopyrightText: Copyright (c) 2026 The sgrlab Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Structured gradient regularization and its special cases.
//
//   Omega_Sigma = (sigma_t / 2m) sum_i g_i^T Sigma g_i,   g_i = grad_x log phi_{y_i}(x_i)
//
// All penalties are built as graph nodes whose input gradients come from
// grad_as_node, so the parameter gradient of the penalty is available by an
// ordinary backward pass. Sigma is a constant operator in that pass.

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sgr/autodiff.hpp"
#include "sgr/models.hpp"

namespace sgr::reg {

enum class Kind { kNone, kGn, kSgr };

Kind parse_kind(const std::string& name);
std::string to_string(Kind kind);

struct RegularizerSpec {
  Kind kind = Kind::kNone;
  double lambda = 0.0;  // noise-to-signal ratio, any value >= 0
  bool uncentered = false;
  bool logit_form = false;  // evaluate Omega through logit gradients instead of log-probs
};

/// Rows of grad_x log phi_{y_i}(x_i) as a differentiable node; x must be a graph leaf.
ad::Var input_grad_node(const models::Classifier& model, ad::Graph& graph, std::span<const ad::Var> params,
                        ad::Var x, std::span<const std::size_t> labels);

/// (scale / 2m) sum_i g_i^T (Sigma g_i) for gradient rows g (m x d).
ad::Var quadratic_penalty(ad::Var grads, std::shared_ptr<const ad::RowOperator> sigma, double scale);

ad::Var sgr_omega(const models::Classifier& model, ad::Graph& graph, std::span<const ad::Var> params,
                  const Tensor& x, std::span<const std::size_t> labels, std::shared_ptr<const ad::RowOperator> sigma,
                  double sigma_t);

/// sgr_omega with Sigma = I and sigma_t = 1.
ad::Var gn_omega(const models::Classifier& model, ad::Graph& graph, std::span<const ad::Var> params,
                 const Tensor& x, std::span<const std::size_t> labels);

/// Linear term -(1/m) sum_i g_i^T mu of the uncentered regularizer.
ad::Var uncentered_correction(const models::Classifier& model, ad::Graph& graph, std::span<const ad::Var> params,
                              const Tensor& x, std::span<const std::size_t> labels, const Tensor& mu);

/// Same value as sgr_omega, computed from logit gradients around their softmax-weighted class average.
ad::Var sgr_omega_logit(const models::Classifier& model, ad::Graph& graph, std::span<const ad::Var> params,
                        const Tensor& x, std::span<const std::size_t> labels,
                        std::shared_ptr<const ad::RowOperator> sigma, double sigma_t);

/// (1/2m) sum_i (w_{y_i} - <w>_i)^T Sigma (w_{y_i} - <w>_i) with <w>_i = sum_k phi_k(x_i) w_k.
/// Direct evaluation without autodiff. sigma is a dense d x d matrix.
double onelayer_closed_form(const models::Classifier& model, const Tensor& x, std::span<const std::size_t> labels,
                            const Tensor& sigma);
/// Analytic parameter gradient of onelayer_closed_form: {dW (K x d), db (K)}.
std::vector<Tensor> onelayer_closed_form_grad(const models::Classifier& model, const Tensor& x,
                                              std::span<const std::size_t> labels, const Tensor& sigma);

/// weight_decay / 2 * sum of squared weight entries (biases excluded); invalid Var when zero.
ad::Var weight_penalty(const models::Classifier& model, std::span<const ad::Var> params, double weight_decay);

struct Objective {
  ad::Var total;
  ad::Var cross_entropy;
  ad::Var omega;       // invalid when no penalty was built
  ad::Var correction;  // invalid unless uncentered
};

/// mean CE + lambda * (Omega [+ correction]) + weight_decay * 1/2 ||weights||^2.
/// Terms with a zero coefficient are not built.
Objective total_objective(const models::Classifier& model, ad::Graph& graph, std::span<const ad::Var> params,
                          const Tensor& x, std::span<const std::size_t> labels, const RegularizerSpec& spec,
                          std::shared_ptr<const ad::RowOperator> sigma, double sigma_t, double weight_decay,
                          const std::optional<Tensor>& mean = std::nullopt);

}  // namespace sgr::reg
