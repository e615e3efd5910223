// SPDX-FileCopyrightText: Copyright (c) 2026 The sgrlab Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sgr/attacks.hpp"
#include "sgr/covariance.hpp"
#include "sgr/data.hpp"
#include "sgr/models.hpp"
#include "sgr/regularizers.hpp"

namespace sgr::train {

enum class Method { kClean, kWdecay, kAdvAugment, kGn, kSgr };

Method parse_method(const std::string& name);
std::string to_string(Method method);

inline attacks::AttackConfig default_attack() {
  attacks::AttackConfig a;
  a.kind = attacks::Kind::kFgsm;
  a.epsilon = 32.0;
  return a;
}

struct TrainConfig {
  Method method = Method::kClean;
  double lambda = 0.0;
  double beta = 0.1;
  std::size_t batch_size = 128;
  std::size_t epochs = 10;
  double lr = 1e-3;
  double weight_decay = 0.0;
  attacks::Source source = attacks::Source::kLossGradSign;
  /// Perturbation attack for fgsm / pgd / lrc sources and the adv_augment attack.
  attacks::AttackConfig attack = default_attack();
  double mix = 0.5;
  /// Covariance refresh period in steps; 0 never refreshes (a preloaded estimate stays fixed).
  std::size_t cov_update_every = 1;
  std::uint64_t seed = 0;
  cov::CovMode cov_mode = cov::CovMode::kDense;
  std::optional<std::size_t> radial_cutoff;
  bool uncentered = false;
  bool logit_form = false;
  bool augment = true;
  data::Standardize standardize = data::Standardize::kPerImage;
  /// Overrides the dataset constant c used in sigma_t = c / avg_diag.
  std::optional<double> data_constant;
  std::optional<cov::DenseCov> preload_dense;
  std::optional<cov::RadialCovFun> preload_radial;
  /// Stop after this many steps in total (0 = run every epoch to completion).
  std::size_t max_steps = 0;

  /// Throws ConfigError listing every violated constraint.
  void validate() const;
};

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

/// One bias-corrected Adam step applied in place.
void adam_update(std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamState& state, double lr);

struct StepStats {
  double loss = 0.0;
  double cross_entropy = 0.0;
  double omega = 0.0;
  double sigma_t = 0.0;
  double avg_diag = 0.0;
  bool fallback_gn = false;
};

/// Context shared by the steps of one run.
struct StepContext {
  double data_constant = 1.0;
  attacks::SourceConfig source;
  std::size_t step = 0;  // global step index
  std::function<void(const std::string&)> warn;
};

/// Perturbations, covariance refresh (on update steps), sigma_t, objective, backward, Adam.
StepStats sgr_training_step(models::Classifier& model, const ModelBatch& batch, cov::CovEstimator* estimator,
                            const TrainConfig& config, AdamState& adam, const StepContext& context);

/// (1 - mix) CE(clean) + mix CE(attacked), attacked against the true labels.
StepStats adv_augmented_step(models::Classifier& model, const ModelBatch& batch, const attacks::AttackConfig& attack,
                             double mix, const TrainConfig& config, AdamState& adam);

struct LogRow {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double loss = 0.0;
  double omega = 0.0;
  double sigma_t = 0.0;
  double test_acc = 0.0;
  double avg_diag = 0.0;
};

struct TrainResult {
  std::unique_ptr<models::Classifier> model;
  std::vector<LogRow> log;
  std::optional<cov::CovEstimator> estimator;
  double data_constant = 0.0;
  std::vector<std::string> warnings;
};

/// Trains an already initialized model. Test accuracy is measured on the
/// unaugmented test set after every epoch.
TrainResult train(const data::Dataset& train_set, const data::Dataset& test_set,
                  std::unique_ptr<models::Classifier> model, const TrainConfig& config,
                  const std::function<void(const LogRow&)>& on_epoch = {});

/// CSV `epoch,step,loss,omega,sigma_t,test_acc`.
void write_train_log(const std::vector<LogRow>& log, const std::string& path);

/// Covariance of the standardized inputs around their mean, as a dense matrix.
cov::DenseCov dataset_covariance(const Tensor& inputs);

}  // namespace sgr::train
