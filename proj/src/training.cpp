// SPDX-FileCopyrightText: Copyright (c) 2026 The sgrlab Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0
#include "sgr/training.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "sgr/error.hpp"

namespace sgr::train {

Method parse_method(const std::string& name) {
  if (name == "clean") return Method::kClean;
  if (name == "wdecay") return Method::kWdecay;
  if (name == "adv_augment" || name == "adv") return Method::kAdvAugment;
  if (name == "gn") return Method::kGn;
  if (name == "sgr") return Method::kSgr;
  throw ConfigError("unknown training method '" + name + "' (valid: clean, wdecay, adv_augment, gn, sgr)");
}

std::string to_string(Method method) {
  switch (method) {
    case Method::kClean: return "clean";
    case Method::kWdecay: return "wdecay";
    case Method::kAdvAugment: return "adv_augment";
    case Method::kGn: return "gn";
    case Method::kSgr: return "sgr";
  }
  return "?";
}

void TrainConfig::validate() const {
  std::vector<std::string> problems;
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) problems.push_back("lambda must be finite and >= 0");
  if (!(beta > 0.0 && beta <= 1.0)) problems.push_back("beta must lie in (0, 1]");
  if (batch_size < 1) problems.push_back("batch_size must be >= 1");
  if (epochs < 1) problems.push_back("epochs must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) problems.push_back("lr must be finite and > 0");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) problems.push_back("weight_decay must be finite and >= 0");
  if (!(mix >= 0.0 && mix <= 1.0)) problems.push_back("mix must lie in [0, 1]");
  if (data_constant && !(*data_constant > 0.0)) problems.push_back("data_constant must be > 0");
  if (preload_dense && cov_mode != cov::CovMode::kDense) problems.push_back("dense preload requires dense cov mode");
  if (preload_radial && cov_mode != cov::CovMode::kRadial) problems.push_back("radial preload requires radial cov mode");
  if (method == Method::kAdvAugment &&
      (attack.kind == attacks::Kind::kDeepFool || attack.kind == attacks::Kind::kLrc)) {
    problems.push_back("adv_augment supports rand, fgm, fgsm and pgd attacks");
  }
  try {
    attack.validate();
  } catch (const ConfigError& e) {
    problems.push_back(e.what());
  }
  if (problems.empty()) return;
  std::string msg = "invalid training configuration:";
  for (const auto& p : problems) msg += "\n  " + p;
  throw ConfigError(msg);
}

void adam_update(std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamState& state, double lr) {
  require(params.size() == grads.size(), "adam_update: parameter and gradient counts differ");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.shape());
      state.v.emplace_back(p.shape());
    }
  }
  require(state.m.size() == params.size(), "adam_update: optimizer state does not match the parameters");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t), c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    require(params[k].shape() == grads[k].shape() && state.m[k].shape() == params[k].shape(),
            "adam_update: shape mismatch for parameter " + std::to_string(k));
    auto p = params[k].data();
    auto g = grads[k].data();
    auto m = state.m[k].data();
    auto v = state.v[k].data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + state.eps);
    }
  }
}

namespace {

std::uint64_t step_seed(std::uint64_t seed, std::size_t step) {
  Rng rng = derive_rng(seed, step, kStreamPgdStart + 100);
  return rng();
}

void apply_objective(models::Classifier& model, std::span<const ad::Var> params, ad::Var total,
                     AdamState& adam, double lr) {
  const std::vector<Tensor> grads = ad::gradients(total, params);
  adam_update(model.params(), grads, adam, lr);
}

}  // namespace

StepStats sgr_training_step(models::Classifier& model, const ModelBatch& batch, cov::CovEstimator* estimator,
                            const TrainConfig& config, AdamState& adam, const StepContext& context) {
  StepStats stats;
  reg::RegularizerSpec spec{reg::Kind::kNone, config.lambda, config.uncentered, config.logit_form};
  std::shared_ptr<const ad::RowOperator> sigma;
  double sigma_t = 1.0;
  std::optional<Tensor> mean;

  if (config.method == Method::kSgr) {
    require(estimator != nullptr, "SGR training needs a covariance estimator");
    spec.kind = reg::Kind::kSgr;
    if (config.cov_update_every > 0 && context.step % config.cov_update_every == 0) {
      attacks::SourceConfig source = context.source;
      source.attack.seed = step_seed(config.seed, context.step);
      estimator->update(attacks::perturbations_for_cov(model, batch, source));
    }
    try {
      if (!estimator->has_estimate()) throw DegenerateEstimateError("no covariance estimate yet");
      sigma_t = estimator->scale_factor(context.data_constant);
      sigma = estimator->sigma_operator(config.radial_cutoff);
      stats.avg_diag = estimator->avg_diag();
      if (config.uncentered) mean = estimator->mean();
    } catch (const DegenerateEstimateError& e) {
      spec.kind = reg::Kind::kGn;
      sigma_t = 1.0;
      stats.fallback_gn = true;
      if (context.warn) context.warn(std::string("covariance estimate unusable, using GN for this step: ") + e.what());
    }
  } else if (config.method == Method::kGn) {
    spec.kind = reg::Kind::kGn;
  }
  stats.sigma_t = spec.kind == reg::Kind::kNone ? 0.0 : sigma_t;

  const double decay = config.method == Method::kClean ? 0.0 : config.weight_decay;
  ad::Graph graph;
  auto params = models::bind_params(graph, model, true);
  reg::Objective obj =
      reg::total_objective(model, graph, params, batch.x, batch.labels, spec, sigma, sigma_t, decay, mean);
  stats.loss = obj.total.value().item();
  stats.cross_entropy = obj.cross_entropy.value().item();
  stats.omega = obj.omega.valid() ? obj.omega.value().item() : 0.0;
  apply_objective(model, params, obj.total, adam, config.lr);
  return stats;
}

StepStats adv_augmented_step(models::Classifier& model, const ModelBatch& batch, const attacks::AttackConfig& attack,
                             double mix, const TrainConfig& config, AdamState& adam) {
  require(mix >= 0.0 && mix <= 1.0, "mix must lie in [0, 1]");
  StepStats stats;
  ad::Graph graph;
  auto params = models::bind_params(graph, model, true);
  const reg::RegularizerSpec none{};
  ad::Var total;
  if (mix == 0.0) {
    reg::Objective clean = reg::total_objective(model, graph, params, batch.x, batch.labels, none, nullptr, 1.0,
                                                config.weight_decay);
    total = clean.total;
    stats.cross_entropy = clean.cross_entropy.value().item();
  } else {
    Tensor attacked = attacks::run_attack(model, batch, attack);
    reg::Objective adv =
        reg::total_objective(model, graph, params, attacked, batch.labels, none, nullptr, 1.0, 0.0);
    if (mix == 1.0) {
      total = adv.cross_entropy;
    } else {
      reg::Objective clean =
          reg::total_objective(model, graph, params, batch.x, batch.labels, none, nullptr, 1.0, 0.0);
      total = ad::add(ad::scale(clean.cross_entropy, 1.0 - mix), ad::scale(adv.cross_entropy, mix));
    }
    stats.cross_entropy = total.value().item();
    ad::Var decay = reg::weight_penalty(model, params, config.weight_decay);
    if (decay.valid()) total = ad::add(total, decay);
  }
  stats.loss = total.value().item();
  apply_objective(model, params, total, adam, config.lr);
  return stats;
}

cov::DenseCov dataset_covariance(const Tensor& inputs) {
  require(inputs.rank() == 2 && inputs.dim(0) >= 1, "dataset_covariance needs a nonempty matrix");
  const std::size_t n = inputs.dim(0), d = inputs.dim(1);
  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += inputs[i * d + j];
  for (double& v : mean) v /= static_cast<double>(n);
  Tensor centered = inputs;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) centered[i * d + j] -= mean[j];
  return cov::batch_second_moment(centered);
}

TrainResult train(const data::Dataset& train_set, const data::Dataset& test_set,
                  std::unique_ptr<models::Classifier> model, const TrainConfig& config,
                  const std::function<void(const LogRow&)>& on_epoch) {
  config.validate();
  require(model != nullptr, "train needs a model");
  if (train_set.size() == 0) throw ContractError("training set is empty");
  if (test_set.size() == 0) throw ContractError("test set is empty");
  require(model->input_dim() == train_set.geometry.dim(), "model input width does not match the training images");
  require(test_set.geometry == train_set.geometry, "train and test geometries differ");
  require(model->num_classes() >= train_set.num_classes, "model has fewer classes than the dataset");

  TrainResult result;
  std::vector<std::string>& warnings = result.warnings;
  std::size_t fallbacks = 0;

  const ModelBatch test_batch = data::make_batch(test_set, config.standardize);

  StepContext context;
  context.source.source = config.source;
  context.source.attack = config.attack;
  context.source.attack.geometry = train_set.geometry;
  if (config.method == Method::kSgr) {
    const Tensor inputs = data::model_inputs(train_set, config.standardize);
    result.data_constant = config.data_constant ? *config.data_constant : cov::dataset_diag_constant(inputs);
    context.data_constant = result.data_constant;
    if (config.source == attacks::Source::kDatasetCov) {
      const std::size_t n = inputs.dim(0), d = inputs.dim(1);
      Tensor mean(Shape{d});
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) mean[j] += inputs[i * d + j];
      for (double& v : mean.data()) v /= static_cast<double>(n);
      context.source.data_mean = std::move(mean);
    }
    if (config.source == attacks::Source::kLrc && config.cov_update_every > 0) {
      context.source.sampler = std::make_shared<attacks::LrcSampler>(train_set.geometry, config.attack.decay_length);
    }
    result.estimator.emplace(config.cov_mode, train_set.geometry, config.beta, config.uncentered);
    if (config.preload_dense) result.estimator->preload(*config.preload_dense);
    if (config.preload_radial) result.estimator->preload(*config.preload_radial);
    if (config.cov_update_every == 0 && !result.estimator->has_estimate()) {
      warnings.push_back("cov_update_every = 0 without a preloaded covariance: every step uses GN");
    }
  }
  context.warn = [&](const std::string&) { ++fallbacks; };

  AdamState adam;
  const std::size_t n = train_set.size(), m = config.batch_size;
  std::vector<std::size_t> order(n);
  bool stop = false;
  for (std::size_t epoch = 1; epoch <= config.epochs && !stop; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle = derive_rng(config.seed, epoch, kStreamShuffle);
    std::shuffle(order.begin(), order.end(), shuffle);
    const std::uint64_t augment_seed = derive_rng(config.seed, epoch, kStreamAugment)();

    double loss_sum = 0.0, omega_sum = 0.0;
    std::size_t steps = 0;
    StepStats last;
    for (std::size_t b = 0; b < n; b += m) {
      const std::span<const std::size_t> idx(order.data() + b, std::min(n, b + m) - b);
      const ModelBatch batch =
          data::make_batch(train_set, idx, config.standardize, config.augment ? &augment_seed : nullptr);
      if (config.method == Method::kAdvAugment) {
        attacks::AttackConfig attack = config.attack;
        attack.geometry = train_set.geometry;
        attack.seed = step_seed(config.seed, context.step);
        last = adv_augmented_step(*model, batch, attack, config.mix, config, adam);
      } else {
        last = sgr_training_step(*model, batch, result.estimator ? &*result.estimator : nullptr, config, adam,
                                 context);
      }
      loss_sum += last.loss;
      omega_sum += last.omega;
      ++steps;
      ++context.step;
      if (config.max_steps > 0 && context.step >= config.max_steps) {
        stop = true;
        break;
      }
    }
    LogRow row;
    row.epoch = epoch;
    row.step = context.step;
    row.loss = loss_sum / static_cast<double>(steps);
    row.omega = omega_sum / static_cast<double>(steps);
    row.sigma_t = last.sigma_t;
    row.avg_diag = last.avg_diag;
    row.test_acc = models::accuracy(*model, test_batch.x, test_batch.labels);
    result.log.push_back(row);
    if (on_epoch) on_epoch(row);
  }
  if (fallbacks > 0) {
    warnings.push_back(fmt::format("{} step(s) fell back to GN because the covariance estimate was unusable", fallbacks));
  }
  result.model = std::move(model);
  return result;
}

void write_train_log(const std::vector<LogRow>& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "epoch,step,loss,omega,sigma_t,test_acc\n";
  for (const auto& r : log) {
    out << fmt::format("{},{},{},{},{},{}\n", r.epoch, r.step, r.loss, r.omega, r.sigma_t, r.test_acc);
  }
  if (!out) throw IoError("failed writing " + path);
}

}  // namespace sgr::train
