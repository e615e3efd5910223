// SPDX-FileCopyrightText: Copyright (c) 2026 The sgrlab Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sgr/batch.hpp"
#include "sgr/covariance.hpp"
#include "sgr/models.hpp"
#include "sgr/rng.hpp"

namespace sgr::attacks {

enum class Kind { kRand, kFgm, kFgsm, kPgd, kDeepFool, kLrc };

Kind parse_kind(const std::string& name);
std::string to_string(Kind kind);
/// "rand, fgm, fgsm, pgd, deepfool, lrc"
std::string valid_kinds();

struct AttackConfig {
  Kind kind = Kind::kFgsm;
  /// Gradient and uniform attacks: pixel budget in units of 1/255.
  /// LRC: multiple of the standardized image scale.
  double epsilon = 0.0;
  std::size_t nb_iter = 10;
  std::optional<double> eps_iter;  // pixel step in 1/255 units, epsilon / 5 when unset
  bool random_start = true;
  double overshoot = 0.02;
  std::size_t max_iter = 100;
  double decay_length = 8.0;
  std::size_t worst_of = 20;
  std::uint64_t seed = 0;
  models::ImageGeometry geometry;  // needed by lrc

  double pixel_epsilon() const { return epsilon / 255.0; }
  double pixel_step() const { return (eps_iter ? *eps_iter : epsilon / 5.0) / 255.0; }
  /// Throws ConfigError listing every violated constraint.
  void validate() const;
};

/// Loss gradient d CE / d x at the given labels, one row per sample (model space).
Tensor loss_grad(const models::Classifier& model, const Tensor& x, std::span<const std::size_t> labels);

// All attacks take and return model-space inputs. Pixel budgets become
// epsilon / spread[i] per row and outputs are clipped to the pixel range.

Tensor rand_noise(const ModelBatch& batch, double pixel_eps, std::uint64_t seed);

/// Rows whose loss gradient has L2 norm below 1e-12 are returned unchanged and flagged.
Tensor fgm(const models::Classifier& model, const ModelBatch& batch, double pixel_eps,
           std::vector<bool>* zero_grad = nullptr);

Tensor fgsm(const models::Classifier& model, const ModelBatch& batch, double pixel_eps);

Tensor pgd(const models::Classifier& model, const ModelBatch& batch, double pixel_eps, std::size_t nb_iter,
           double pixel_step, bool random_start, std::uint64_t seed);

struct DeepFoolResult {
  Tensor inputs;               // clip(x + (1 + overshoot) r)
  Tensor perturbation;         // accumulated r before overshoot
  std::vector<bool> converged; // false when max_iter was hit without a label change
  std::vector<std::size_t> iterations;
};

DeepFoolResult deepfool(const models::Classifier& model, const ModelBatch& batch, double overshoot = 0.02,
                        std::size_t max_iter = 100);

/// Mean over samples of ||x_adv - x|| / ||x|| in pixel space; zero-norm samples are skipped.
double deepfool_rho(const ModelBatch& batch, const Tensor& adversarial, std::size_t* skipped = nullptr);

/// Draws from N(0, Sigma_zeta) for the exponential covariance function.
class LrcSampler {
 public:
  LrcSampler(const models::ImageGeometry& geometry, double decay_length);
  std::size_t dim() const { return factor_.dim(0); }
  double decay_length() const { return decay_length_; }
  const cov::DenseCov& covariance() const { return sigma_; }
  /// Number of eigenvalues clipped to zero.
  std::size_t clipped() const { return clipped_; }
  std::vector<double> sample(Rng& rng) const;
  /// One draw per rng, stacked as rows.
  Tensor sample_rows(std::span<Rng> rngs) const;

 private:
  double decay_length_;
  cov::DenseCov sigma_;
  Tensor factor_;  // V sqrt(max(lambda, 0)), d x d
  std::size_t clipped_ = 0;
};

/// Among k draws x + eps * noise (clipped), keeps the one with the highest
/// cross-entropy against the true label. Draw j of sample i comes from a
/// stream derived from (seed, id), so a larger k extends the same sequence.
Tensor worst_of_k(const models::Classifier& model, const ModelBatch& batch, const LrcSampler& sampler,
                  std::size_t k, double eps, std::uint64_t seed);

/// accuracy[model][eps] under worst-of-k with draws shared across models and strengths.
std::vector<std::vector<double>> lrc_accuracy(std::span<const models::Classifier* const> models,
                                              const ModelBatch& batch, const LrcSampler& sampler, std::size_t k,
                                              std::span<const double> epsilons, std::uint64_t seed);

/// Dispatches on config.kind. Attack labels are the model's own predictions;
/// LRC scores against batch.labels.
Tensor run_attack(const models::Classifier& model, const ModelBatch& batch, const AttackConfig& config);

/// Accuracy against the true labels after the attack.
double attack_accuracy(const models::Classifier& model, const ModelBatch& batch, const AttackConfig& config);

/// True when every row lies inside the batch pixel range (with fp slack).
bool within_range(const Tensor& inputs, const ModelBatch& batch, double slack = 1e-12);

enum class Source { kLossGrad, kLossGradSign, kFgsm, kPgd, kLrc, kDatasetCov };

Source parse_source(const std::string& name);
std::string to_string(Source source);

struct SourceConfig {
  Source source = Source::kLossGradSign;
  AttackConfig attack;              // epsilon / iterations for fgsm, pgd, lrc
  std::optional<Tensor> data_mean;  // dataset_cov: subtracted from the inputs
  std::shared_ptr<const LrcSampler> sampler;  // lrc: built from attack.geometry when unset
};

/// Perturbations xi_i (m x d, model space) feeding the covariance estimator.
Tensor perturbations_for_cov(const models::Classifier& model, const ModelBatch& batch, const SourceConfig& config);

}  // namespace sgr::attacks
