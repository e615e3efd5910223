// SPDX-FileCopyrightText: Copyright (c) 2026 The sgrlab Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0
#include "sgr/attacks.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "sgr/error.hpp"

namespace sgr::attacks {

namespace {

constexpr std::size_t kChunk = 256;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

template <typename Fn>
Tensor chunked(const ModelBatch& batch, Fn&& fn) {
  if (batch.size() <= kChunk) return fn(batch);
  Tensor out(batch.x.shape());
  const std::size_t d = batch.dim();
  for (std::size_t b = 0; b < batch.size(); b += kChunk) {
    const std::size_t e = std::min(batch.size(), b + kChunk);
    Tensor part = fn(batch.rows(b, e));
    std::copy(part.data().begin(), part.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(b * d));
  }
  return out;
}

void require_batch(const models::Classifier& model, const ModelBatch& batch) {
  require(batch.x.rank() == 2 && batch.dim() == model.input_dim(), "attack: input width does not match the model");
  require(batch.x.dim(0) == batch.size() && batch.offset.size() == batch.size() && batch.spread.size() == batch.size(),
          "attack: batch metadata is inconsistent");
}

}  // namespace

Kind parse_kind(const std::string& name) {
  if (name == "rand") return Kind::kRand;
  if (name == "fgm") return Kind::kFgm;
  if (name == "fgsm") return Kind::kFgsm;
  if (name == "pgd") return Kind::kPgd;
  if (name == "deepfool" || name == "fool") return Kind::kDeepFool;
  if (name == "lrc") return Kind::kLrc;
  throw ConfigError("unknown attack '" + name + "' (valid: " + valid_kinds() + ")");
}

std::string to_string(Kind kind) {
  switch (kind) {
    case Kind::kRand: return "rand";
    case Kind::kFgm: return "fgm";
    case Kind::kFgsm: return "fgsm";
    case Kind::kPgd: return "pgd";
    case Kind::kDeepFool: return "deepfool";
    case Kind::kLrc: return "lrc";
  }
  return "?";
}

std::string valid_kinds() { return "rand, fgm, fgsm, pgd, deepfool, lrc"; }

void AttackConfig::validate() const {
  std::vector<std::string> problems;
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) problems.push_back("epsilon must be finite and >= 0");
  if (kind == Kind::kPgd && nb_iter < 1) problems.push_back("pgd needs nb_iter >= 1");
  if (eps_iter && !(*eps_iter >= 0.0)) problems.push_back("eps_iter must be >= 0");
  if (kind == Kind::kDeepFool && !(overshoot >= 0.0)) problems.push_back("overshoot must be >= 0");
  if (kind == Kind::kDeepFool && max_iter < 1) problems.push_back("deepfool needs max_iter >= 1");
  if (kind == Kind::kLrc && !(decay_length > 0.0)) problems.push_back("decay_length must be > 0");
  if (kind == Kind::kLrc && worst_of < 1) problems.push_back("worst_of must be >= 1");
  if (problems.empty()) return;
  std::string msg = "invalid attack configuration:";
  for (const auto& p : problems) msg += "\n  " + p;
  throw ConfigError(msg);
}

Tensor loss_grad(const models::Classifier& model, const Tensor& x, std::span<const std::size_t> labels) {
  return kernels::scale(models::input_log_prob_grad(model, x, labels), -1.0);
}

bool within_range(const Tensor& inputs, const ModelBatch& batch, double slack) {
  const std::size_t d = batch.dim();
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double lo = batch.lower(i), hi = batch.upper(i);
    const double tol = slack * (1.0 + std::abs(lo) + std::abs(hi));
    for (std::size_t j = 0; j < d; ++j) {
      const double v = inputs[i * d + j];
      if (!(v >= lo - tol && v <= hi + tol)) return false;
    }
  }
  return true;
}

// --- uniform noise / one-step attacks ------------------------------------------------

Tensor rand_noise(const ModelBatch& batch, double pixel_eps, std::uint64_t seed) {
  require(pixel_eps >= 0.0, "rand_noise: epsilon must be >= 0");
  Tensor out = batch.x;
  const std::size_t d = batch.dim();
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double eps = pixel_eps / batch.spread[i];
    Rng rng = derive_rng(seed, batch.ids[i], kStreamRandNoise);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] += eps * u(rng);
  }
  clip_to_range(out, batch);
  return out;
}

Tensor fgm(const models::Classifier& model, const ModelBatch& batch, double pixel_eps, std::vector<bool>* zero_grad) {
  require_batch(model, batch);
  require(pixel_eps >= 0.0, "fgm: epsilon must be >= 0");
  if (zero_grad != nullptr) zero_grad->assign(batch.size(), false);
  std::size_t done = 0;
  return chunked(batch, [&](const ModelBatch& part) {
    const std::vector<std::size_t> pred = models::predict(model, part.x);
    const Tensor g = loss_grad(model, part.x, pred);
    Tensor out = part.x;
    const std::size_t d = part.dim();
    for (std::size_t i = 0; i < part.size(); ++i) {
      double norm = 0.0;
      for (std::size_t j = 0; j < d; ++j) norm += g[i * d + j] * g[i * d + j];
      norm = std::sqrt(norm);
      if (norm < 1e-12) {
        if (zero_grad != nullptr) (*zero_grad)[done + i] = true;
        continue;
      }
      const double step = pixel_eps / part.spread[i] / norm;
      for (std::size_t j = 0; j < d; ++j) out[i * d + j] += step * g[i * d + j];
    }
    clip_to_range(out, part);
    done += part.size();
    return out;
  });
}

Tensor fgsm(const models::Classifier& model, const ModelBatch& batch, double pixel_eps) {
  require_batch(model, batch);
  require(pixel_eps >= 0.0, "fgsm: epsilon must be >= 0");
  return chunked(batch, [&](const ModelBatch& part) {
    const std::vector<std::size_t> pred = models::predict(model, part.x);
    const Tensor g = loss_grad(model, part.x, pred);
    Tensor out = part.x;
    const std::size_t d = part.dim();
    for (std::size_t i = 0; i < part.size(); ++i) {
      const double eps = pixel_eps / part.spread[i];
      for (std::size_t j = 0; j < d; ++j) out[i * d + j] += eps * sign(g[i * d + j]);
    }
    clip_to_range(out, part);
    return out;
  });
}

Tensor pgd(const models::Classifier& model, const ModelBatch& batch, double pixel_eps, std::size_t nb_iter,
           double pixel_step, bool random_start, std::uint64_t seed) {
  require_batch(model, batch);
  require(pixel_eps >= 0.0 && pixel_step >= 0.0, "pgd: epsilon and step must be >= 0");
  require(nb_iter >= 1, "pgd: nb_iter must be >= 1");
  return chunked(batch, [&](const ModelBatch& part) {
    const std::size_t m = part.size(), d = part.dim();
    const std::vector<std::size_t> pred = models::predict(model, part.x);
    Tensor x = part.x;
    if (random_start) {
      for (std::size_t i = 0; i < m; ++i) {
        const double eps = pixel_eps / part.spread[i];
        Rng rng = derive_rng(seed, part.ids[i], kStreamPgdStart);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        for (std::size_t j = 0; j < d; ++j) x[i * d + j] += eps * u(rng);
      }
      clip_to_range(x, part);
    }
    for (std::size_t it = 0; it < nb_iter; ++it) {
      const Tensor g = loss_grad(model, x, pred);
      for (std::size_t i = 0; i < m; ++i) {
        const double eps = pixel_eps / part.spread[i], step = pixel_step / part.spread[i];
        const double lo = part.lower(i), hi = part.upper(i);
        for (std::size_t j = 0; j < d; ++j) {
          const double x0 = part.x[i * d + j];
          double v = x[i * d + j] + step * sign(g[i * d + j]);
          v = std::clamp(v, x0 - eps, x0 + eps);
          x[i * d + j] = std::clamp(v, lo, hi);
        }
      }
    }
    return x;
  });
}

// --- DeepFool -------------------------------------------------------------------------

namespace {

/// Logits (m x K) and the input gradient of every logit, grads[k] is m x d.
void logit_jacobian(const models::Classifier& model, const Tensor& x, Tensor& z, std::vector<Tensor>& grads) {
  const std::size_t m = x.dim(0), classes = model.num_classes();
  grads.assign(classes, Tensor());
  std::vector<std::size_t> column(m);
  for (std::size_t k = 0; k < classes; ++k) {
    ad::Graph g;
    auto params = models::bind_params(g, model, false);
    ad::Var input = g.leaf(x);
    ad::Var out = models::logits(model, g, params, input);
    if (k == 0) z = out.value();
    std::fill(column.begin(), column.end(), k);
    grads[k] = ad::gradient(ad::sum(ad::pick(out, column)), input);
  }
}

}  // namespace

DeepFoolResult deepfool(const models::Classifier& model, const ModelBatch& batch, double overshoot,
                        std::size_t max_iter) {
  require_batch(model, batch);
  require(model.num_classes() >= 2, "deepfool needs at least two classes");
  require(overshoot >= 0.0 && max_iter >= 1, "deepfool: overshoot must be >= 0 and max_iter >= 1");
  const std::size_t n = batch.size(), d = batch.dim(), classes = model.num_classes();
  DeepFoolResult res{batch.x, Tensor(batch.x.shape()), std::vector<bool>(n, false), std::vector<std::size_t>(n, 0)};
  const std::vector<std::size_t> orig = models::predict(model, batch.x);

  std::vector<std::size_t> active(n);
  for (std::size_t i = 0; i < n; ++i) active[i] = i;
  for (std::size_t it = 0; it <= max_iter && !active.empty(); ++it) {
    std::vector<std::size_t> still;
    for (std::size_t b = 0; b < active.size(); b += kChunk) {
      const std::size_t e = std::min(active.size(), b + kChunk);
      const std::vector<std::size_t> rows(active.begin() + static_cast<std::ptrdiff_t>(b),
                                          active.begin() + static_cast<std::ptrdiff_t>(e));
      const ModelBatch part = batch.select(rows);
      Tensor x(part.x.shape());
      for (std::size_t k = 0; k < rows.size(); ++k)
        for (std::size_t j = 0; j < d; ++j)
          x[k * d + j] = part.x[k * d + j] + (1.0 + overshoot) * res.perturbation[rows[k] * d + j];
      clip_to_range(x, part);
      for (std::size_t k = 0; k < rows.size(); ++k)
        std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(k * d), d,
                    res.inputs.data().begin() + static_cast<std::ptrdiff_t>(rows[k] * d));

      Tensor z;
      std::vector<Tensor> grads;
      logit_jacobian(model, x, z, grads);
      for (std::size_t k = 0; k < rows.size(); ++k) {
        const std::size_t i = rows[k], y = orig[i];
        std::span<const double> zk = z.row(k);
        const auto top = static_cast<std::size_t>(std::max_element(zk.begin(), zk.end()) - zk.begin());
        if (top != y) {
          res.converged[i] = true;
          continue;
        }
        if (it == max_iter) continue;
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_l = classes;
        double best_f = 0.0, best_norm = 0.0;
        for (std::size_t l = 0; l < classes; ++l) {
          if (l == y) continue;
          double norm = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double w = grads[l][k * d + j] - grads[y][k * d + j];
            norm += w * w;
          }
          norm = std::sqrt(norm);
          const double f = zk[l] - zk[y];
          const double dist = std::abs(f) / (norm + 1e-12);
          if (dist < best) {
            best = dist;
            best_l = l;
            best_f = f;
            best_norm = norm;
          }
        }
        if (best_l == classes || best_norm < 1e-12) continue;  // flat logits, no direction to move in
        // Step to the linearized boundary plus 1e-4.
        const double step = (std::abs(best_f) / best_norm + 1e-4) / best_norm;
        for (std::size_t j = 0; j < d; ++j)
          res.perturbation[i * d + j] += step * (grads[best_l][k * d + j] - grads[y][k * d + j]);
        res.iterations[i] = it + 1;
        still.push_back(i);
      }
    }
    active = std::move(still);
  }
  return res;
}

double deepfool_rho(const ModelBatch& batch, const Tensor& adversarial, std::size_t* skipped) {
  require(adversarial.shape() == batch.x.shape(), "deepfool_rho: shape mismatch");
  const Tensor clean = batch.pixels();
  const Tensor adv = batch.pixels_of(adversarial);
  const std::size_t d = batch.dim();
  double total = 0.0;
  std::size_t used = 0, zero = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    double rr = 0.0, xx = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double r = adv[i * d + j] - clean[i * d + j];
      rr += r * r;
      xx += clean[i * d + j] * clean[i * d + j];
    }
    if (xx == 0.0) {
      ++zero;
      continue;
    }
    total += std::sqrt(rr / xx);
    ++used;
  }
  if (skipped != nullptr) *skipped = zero;
  return used == 0 ? 0.0 : total / static_cast<double>(used);
}

// --- LRC ------------------------------------------------------------------------------

LrcSampler::LrcSampler(const models::ImageGeometry& geometry, double decay_length) : decay_length_(decay_length) {
  if (!(decay_length > 0.0)) throw ContractError("LRC decay_length must be > 0");
  sigma_ = cov::radial_to_dense(cov::exponential_covfun(geometry, decay_length));
  const auto d = static_cast<Eigen::Index>(sigma_.dim());
  Eigen::Map<const RowMat> s(sigma_.matrix.data().data(), d, d);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(Eigen::MatrixXd(0.5 * (s + s.transpose())));
  if (solver.info() != Eigen::Success) {
    throw NumericError("LRC covariance eigendecomposition failed (d=" + std::to_string(d) +
                       ", trace=" + std::to_string(s.trace()) + ")");
  }
  Eigen::VectorXd lambda = solver.eigenvalues();
  for (Eigen::Index i = 0; i < d; ++i) {
    if (lambda[i] < 0.0) {
      lambda[i] = 0.0;
      ++clipped_;
    }
  }
  RowMat f = solver.eigenvectors() * lambda.cwiseSqrt().asDiagonal();
  factor_ = Tensor(Shape{static_cast<std::size_t>(d), static_cast<std::size_t>(d)});
  std::copy(f.data(), f.data() + f.size(), factor_.data().begin());
}

std::vector<double> LrcSampler::sample(Rng& rng) const {
  Rng* one = &rng;
  Tensor row = sample_rows(std::span<Rng>(one, 1));
  return {row.data().begin(), row.data().end()};
}

Tensor LrcSampler::sample_rows(std::span<Rng> rngs) const {
  const std::size_t d = dim(), m = rngs.size();
  Tensor z(Shape{m, d});
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < m; ++i) {
    normal.reset();
    for (std::size_t j = 0; j < d; ++j) z[i * d + j] = normal(rngs[i]);
  }
  return kernels::matmul(z, factor_, false, true);
}

namespace {

std::vector<Rng> lrc_streams(const ModelBatch& batch, std::uint64_t seed) {
  std::vector<Rng> rngs;
  rngs.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) rngs.push_back(derive_rng(seed, batch.ids[i], kStreamLrc));
  return rngs;
}

Tensor scaled_and_clipped(const ModelBatch& batch, const Tensor& noise, double eps) {
  Tensor out = batch.x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += eps * noise[i];
  clip_to_range(out, batch);
  return out;
}

}  // namespace

Tensor worst_of_k(const models::Classifier& model, const ModelBatch& batch, const LrcSampler& sampler, std::size_t k,
                  double eps, std::uint64_t seed) {
  require_batch(model, batch);
  require(k >= 1, "worst_of_k needs k >= 1");
  require(sampler.dim() == batch.dim(), "LRC sampler geometry does not match the inputs");
  return chunked(batch, [&](const ModelBatch& part) {
    std::vector<Rng> rngs = lrc_streams(part, seed);
    const std::size_t m = part.size(), d = part.dim();
    Tensor best = part.x;
    std::vector<double> best_loss(m, -std::numeric_limits<double>::infinity());
    for (std::size_t draw = 0; draw < k; ++draw) {
      const Tensor cand = scaled_and_clipped(part, sampler.sample_rows(rngs), eps);
      const std::vector<double> loss = models::sample_losses(model, cand, part.labels);
      for (std::size_t i = 0; i < m; ++i) {
        if (loss[i] > best_loss[i]) {
          best_loss[i] = loss[i];
          std::copy_n(cand.data().begin() + static_cast<std::ptrdiff_t>(i * d), d,
                      best.data().begin() + static_cast<std::ptrdiff_t>(i * d));
        }
      }
    }
    return best;
  });
}

std::vector<std::vector<double>> lrc_accuracy(std::span<const models::Classifier* const> models,
                                              const ModelBatch& batch, const LrcSampler& sampler, std::size_t k,
                                              std::span<const double> epsilons, std::uint64_t seed) {
  require(k >= 1, "lrc_accuracy needs k >= 1");
  require(sampler.dim() == batch.dim(), "LRC sampler geometry does not match the inputs");
  for (const auto* m : models) require_batch(*m, batch);
  const std::size_t nm = models.size(), ne = epsilons.size();
  std::vector<std::vector<double>> correct(nm, std::vector<double>(ne, 0.0));
  for (std::size_t b = 0; b < batch.size(); b += kChunk) {
    const ModelBatch part = batch.rows(b, std::min(batch.size(), b + kChunk));
    std::vector<Rng> rngs = lrc_streams(part, seed);
    const std::size_t m = part.size();
    // best[model][eps][i]: highest loss so far and whether that draw was classified correctly.
    std::vector<std::vector<std::vector<double>>> best(
        nm, std::vector<std::vector<double>>(ne, std::vector<double>(m, -std::numeric_limits<double>::infinity())));
    std::vector<std::vector<std::vector<char>>> right(nm, std::vector<std::vector<char>>(ne, std::vector<char>(m, 1)));
    for (std::size_t draw = 0; draw < k; ++draw) {
      const Tensor noise = sampler.sample_rows(rngs);
      for (std::size_t e = 0; e < ne; ++e) {
        const Tensor cand = scaled_and_clipped(part, noise, epsilons[e]);
        for (std::size_t mi = 0; mi < nm; ++mi) {
          const std::vector<double> loss = models::sample_losses(*models[mi], cand, part.labels);
          const std::vector<std::size_t> pred = models::predict(*models[mi], cand);
          for (std::size_t i = 0; i < m; ++i) {
            if (loss[i] > best[mi][e][i]) {
              best[mi][e][i] = loss[i];
              right[mi][e][i] = pred[i] == part.labels[i];
            }
          }
        }
      }
    }
    for (std::size_t mi = 0; mi < nm; ++mi)
      for (std::size_t e = 0; e < ne; ++e)
        for (std::size_t i = 0; i < m; ++i) correct[mi][e] += right[mi][e][i];
  }
  for (auto& row : correct)
    for (double& v : row) v /= static_cast<double>(batch.size());
  return correct;
}

// --- dispatch -------------------------------------------------------------------------

Tensor run_attack(const models::Classifier& model, const ModelBatch& batch, const AttackConfig& config) {
  config.validate();
  switch (config.kind) {
    case Kind::kRand: return rand_noise(batch, config.pixel_epsilon(), config.seed);
    case Kind::kFgm: return fgm(model, batch, config.pixel_epsilon());
    case Kind::kFgsm: return fgsm(model, batch, config.pixel_epsilon());
    case Kind::kPgd:
      return pgd(model, batch, config.pixel_epsilon(), config.nb_iter, config.pixel_step(), config.random_start,
                 config.seed);
    case Kind::kDeepFool: return deepfool(model, batch, config.overshoot, config.max_iter).inputs;
    case Kind::kLrc: {
      require(config.geometry.dim() == batch.dim(), "lrc attack: geometry does not match the inputs");
      const LrcSampler sampler(config.geometry, config.decay_length);
      return worst_of_k(model, batch, sampler, config.worst_of, config.epsilon, config.seed);
    }
  }
  throw ContractError("run_attack: unknown attack");
}

double attack_accuracy(const models::Classifier& model, const ModelBatch& batch, const AttackConfig& config) {
  return models::accuracy(model, run_attack(model, batch, config), batch.labels);
}

// --- covariance sources ---------------------------------------------------------------

Source parse_source(const std::string& name) {
  if (name == "loss_grad" || name == "grad") return Source::kLossGrad;
  if (name == "loss_grad_sign" || name == "sign") return Source::kLossGradSign;
  if (name == "fgsm") return Source::kFgsm;
  if (name == "pgd") return Source::kPgd;
  if (name == "lrc") return Source::kLrc;
  if (name == "dataset_cov" || name == "dataset") return Source::kDatasetCov;
  throw ConfigError("unknown perturbation source '" + name +
                    "' (valid: loss_grad, loss_grad_sign, fgsm, pgd, lrc, dataset_cov)");
}

std::string to_string(Source source) {
  switch (source) {
    case Source::kLossGrad: return "loss_grad";
    case Source::kLossGradSign: return "loss_grad_sign";
    case Source::kFgsm: return "fgsm";
    case Source::kPgd: return "pgd";
    case Source::kLrc: return "lrc";
    case Source::kDatasetCov: return "dataset_cov";
  }
  return "?";
}

Tensor perturbations_for_cov(const models::Classifier& model, const ModelBatch& batch, const SourceConfig& config) {
  require_batch(model, batch);
  const AttackConfig& a = config.attack;
  switch (config.source) {
    case Source::kLossGrad:
    case Source::kLossGradSign: {
      Tensor g = loss_grad(model, batch.x, models::predict(model, batch.x));
      if (config.source == Source::kLossGradSign)
        for (double& v : g.data()) v = sign(v);
      return g;
    }
    case Source::kFgsm: return kernels::sub(fgsm(model, batch, a.pixel_epsilon()), batch.x);
    case Source::kPgd:
      return kernels::sub(pgd(model, batch, a.pixel_epsilon(), a.nb_iter, a.pixel_step(), a.random_start, a.seed),
                          batch.x);
    case Source::kLrc: {
      std::shared_ptr<const LrcSampler> sampler = config.sampler;
      if (!sampler) sampler = std::make_shared<LrcSampler>(a.geometry, a.decay_length);
      require(sampler->dim() == batch.dim(), "lrc source: geometry does not match the inputs");
      std::vector<Rng> rngs = lrc_streams(batch, a.seed);
      return kernels::scale(sampler->sample_rows(rngs), a.epsilon);
    }
    case Source::kDatasetCov: {
      Tensor out = batch.x;
      const std::size_t d = batch.dim();
      Tensor mean(Shape{d});
      if (config.data_mean) {
        require(config.data_mean->size() == d, "dataset mean has the wrong length");
        mean = *config.data_mean;
      } else {
        for (std::size_t i = 0; i < batch.size(); ++i)
          for (std::size_t j = 0; j < d; ++j) mean[j] += batch.x[i * d + j] / static_cast<double>(batch.size());
      }
      for (std::size_t i = 0; i < batch.size(); ++i)
        for (std::size_t j = 0; j < d; ++j) out[i * d + j] -= mean[j];
      return out;
    }
  }
  throw ContractError("perturbations_for_cov: unknown source");
}

}  // namespace sgr::attacks
