// SPDX-FileCopyrightText: Copyright (c) 2026 The sgrlab Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0
#include "sgr/covariance.hpp"

#include <Eigen/Dense>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "sgr/error.hpp"

namespace sgr::cov {

double DenseCov::avg_diag() const {
  const std::size_t d = dim();
  require(d > 0, "avg_diag of an empty matrix");
  double total = 0.0;
  for (std::size_t i = 0; i < d; ++i) total += matrix[i * d + i];
  return total / static_cast<double>(d);
}

DenseCov DenseCov::identity(std::size_t d, double variance) {
  DenseCov out{Tensor(Shape{d, d})};
  for (std::size_t i = 0; i < d; ++i) out.matrix[i * d + i] = variance;
  return out;
}

RadialCovFun::RadialCovFun(ImageGeometry g) : geometry(g) {
  if (g.dim() == 0) return;
  max_radius = max_displacement(g);
  const std::size_t pairs = g.channels * g.channels;
  values.assign(pairs, std::vector<double>(max_radius + 1, 0.0));
  counts.assign(pairs, std::vector<std::uint64_t>(max_radius + 1, 0));
}

double RadialCovFun::avg_diag() const {
  double total = 0.0;
  for (std::size_t c = 0; c < geometry.channels; ++c) total += at(c, c, 0);
  return total / static_cast<double>(geometry.channels);
}

std::size_t rounded_displacement(long dy, long dx) {
  return static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(dy * dy + dx * dx))));
}

std::size_t max_displacement(const ImageGeometry& g) {
  return rounded_displacement(static_cast<long>(g.height) - 1, static_cast<long>(g.width) - 1);
}

DenseCov batch_second_moment(const Tensor& perturbations) {
  require(perturbations.rank() == 2, "batch_second_moment expects an (m x d) matrix");
  const std::size_t m = perturbations.dim(0);
  if (m == 0) throw ContractError("batch_second_moment needs at least one perturbation");
  DenseCov out{kernels::matmul(perturbations, perturbations, true, false)};
  for (double& v : out.matrix.data()) v /= static_cast<double>(m);
  return out;
}

RadialCovFun radial_estimate(const Tensor& perturbations, const ImageGeometry& geometry) {
  require(perturbations.rank() == 2, "radial_estimate expects an (m x d) matrix");
  const std::size_t m = perturbations.dim(0);
  if (m == 0) throw ContractError("radial_estimate needs at least one perturbation");
  if (perturbations.dim(1) != geometry.dim()) {
    throw ContractError("radial_estimate: perturbation width " + std::to_string(perturbations.dim(1)) +
                        " does not match image geometry " + std::to_string(geometry.dim()));
  }
  const long h = static_cast<long>(geometry.height), w = static_cast<long>(geometry.width);
  const std::size_t c = geometry.channels;
  RadialCovFun rc(geometry);
  const double* data = perturbations.data().data();
  const std::size_t d = geometry.dim();

  for (long dy = -(h - 1); dy <= h - 1; ++dy) {
    for (long dx = -(w - 1); dx <= w - 1; ++dx) {
      const std::size_t r = rounded_displacement(dy, dx);
      const long y0 = std::max(0L, -dy), y1 = std::min(h, h - dy);
      const long x0 = std::max(0L, -dx), x1 = std::min(w, w - dx);
      const auto pairs = static_cast<std::uint64_t>((y1 - y0) * (x1 - x0));
      for (std::size_t c1 = 0; c1 < c; ++c1) {
        for (std::size_t c2 = 0; c2 < c; ++c2) {
          double acc = 0.0;
          for (std::size_t n = 0; n < m; ++n) {
            const double* img = data + n * d;
            for (long y = y0; y < y1; ++y)
              for (long x = x0; x < x1; ++x) {
                acc += img[static_cast<std::size_t>(y * w + x) * c + c1] *
                       img[static_cast<std::size_t>((y + dy) * w + (x + dx)) * c + c2];
              }
          }
          rc.values[rc.pair(c1, c2)][r] += acc / static_cast<double>(m);
          rc.counts[rc.pair(c1, c2)][r] += pairs;
        }
      }
    }
  }
  for (std::size_t p = 0; p < rc.values.size(); ++p)
    for (std::size_t r = 0; r <= rc.max_radius; ++r)
      if (rc.counts[p][r] > 0) rc.values[p][r] /= static_cast<double>(rc.counts[p][r]);
  return rc;
}

DenseCov radial_to_dense(const RadialCovFun& rc, std::size_t max_dim) {
  const std::size_t d = rc.geometry.dim();
  if (d > max_dim) {
    throw CapacityError("radial_to_dense: dimension " + std::to_string(d) + " exceeds the cap of " +
                        std::to_string(max_dim));
  }
  const std::size_t w = rc.geometry.width, c = rc.geometry.channels;
  DenseCov out{Tensor(Shape{d, d})};
  for (std::size_t i = 0; i < d; ++i) {
    const long yi = static_cast<long>(i / c / w), xi = static_cast<long>((i / c) % w);
    for (std::size_t j = 0; j < d; ++j) {
      const long yj = static_cast<long>(j / c / w), xj = static_cast<long>((j / c) % w);
      out.matrix[i * d + j] = rc.at(i % c, j % c, rounded_displacement(yi - yj, xi - xj));
    }
  }
  return out;
}

RadialCovFun exponential_covfun(const ImageGeometry& geometry, double decay_length, double inter_channel) {
  if (!(decay_length > 0.0)) throw ContractError("decay length must be positive");
  RadialCovFun rc(geometry);
  for (std::size_t c1 = 0; c1 < geometry.channels; ++c1)
    for (std::size_t c2 = 0; c2 < geometry.channels; ++c2)
      for (std::size_t r = 0; r <= rc.max_radius; ++r) {
        const double base = std::exp(-static_cast<double>(r) / decay_length);
        rc.values[rc.pair(c1, c2)][r] = c1 == c2 ? base : inter_channel * base;
        rc.counts[rc.pair(c1, c2)][r] = 1;
      }
  return rc;
}

std::size_t default_cutoff(const RadialCovFun& rc) {
  const double threshold = 1e-3 * std::abs(rc.avg_diag());
  for (std::size_t r = 0; r <= rc.max_radius; ++r) {
    bool small = true;
    for (const auto& v : rc.values) small = small && std::abs(v[r]) < threshold;
    if (small) return r;
  }
  return rc.max_radius;
}

double decay_length(const RadialCovFun& rc) {
  const std::size_t channels = rc.geometry.channels;
  auto intra = [&](std::size_t r) {
    double total = 0.0;
    for (std::size_t c = 0; c < channels; ++c) total += rc.at(c, c, r);
    return total / static_cast<double>(channels);
  };
  const double target = intra(0) / std::exp(1.0);
  for (std::size_t r = 1; r <= rc.max_radius; ++r) {
    const double prev = intra(r - 1), cur = intra(r);
    if (cur <= target) {
      return static_cast<double>(r - 1) + (prev - target) / (prev - cur);
    }
  }
  return static_cast<double>(rc.max_radius);
}

double dataset_diag_constant(const Tensor& inputs) {
  require(inputs.rank() == 2, "dataset_diag_constant expects an (N x d) matrix");
  const std::size_t n = inputs.dim(0), d = inputs.dim(1);
  if (n < 2) throw ContractError("dataset_diag_constant needs at least two samples");
  std::vector<double> mean(d, 0.0), var(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += inputs[i * d + j];
  for (double& v : mean) v /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double delta = inputs[i * d + j] - mean[j];
      var[j] += delta * delta;
    }
  double total = 0.0;
  for (double v : var) total += v / static_cast<double>(n);
  return total / static_cast<double>(d);
}

double min_eigenvalue(const DenseCov& c) {
  const auto d = static_cast<Eigen::Index>(c.dim());
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(c.matrix.data().data(),
                                                                                             d, d);
  Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sym, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) throw NumericError("eigenvalue solver failed");
  return solver.eigenvalues().minCoeff();
}

// --- operators -------------------------------------------------------------------

DenseOperator::DenseOperator(Tensor matrix) : matrix_(std::move(matrix)) {
  require(matrix_.rank() == 2 && matrix_.dim(0) == matrix_.dim(1), "DenseOperator needs a square matrix");
  transposed_ = kernels::transpose(matrix_);
}

// Rows are row vectors: (Sigma g)^T = g^T Sigma^T.
Tensor DenseOperator::apply(const Tensor& rows) const { return kernels::matmul(rows, transposed_); }
Tensor DenseOperator::apply_transpose(const Tensor& rows) const { return kernels::matmul(rows, matrix_); }

RadialOperator::RadialOperator(RadialCovFun rc, std::size_t cutoff) : rc_(std::move(rc)), cutoff_(cutoff) {
  const long h = static_cast<long>(rc_.geometry.height), w = static_cast<long>(rc_.geometry.width);
  cutoff_ = std::min(cutoff_, rc_.max_radius);
  for (long dy = -(h - 1); dy <= h - 1; ++dy)
    for (long dx = -(w - 1); dx <= w - 1; ++dx) {
      const std::size_t r = rounded_displacement(dy, dx);
      if (r <= cutoff_) stencil_.push_back({dy, dx, r});
    }
}

Tensor RadialOperator::run(const Tensor& rows, bool transposed) const {
  require(rows.rank() == 2 && rows.dim(1) == dim(), "RadialOperator: shape mismatch");
  const long h = static_cast<long>(rc_.geometry.height), w = static_cast<long>(rc_.geometry.width);
  const std::size_t c = rc_.geometry.channels, d = dim(), m = rows.dim(0);
  Tensor out(rows.shape());
  for (std::size_t n = 0; n < m; ++n) {
    const double* g = rows.data().data() + n * d;
    double* o = out.data().data() + n * d;
    for (const Offset& off : stencil_) {
      const long y0 = std::max(0L, -off.dy), y1 = std::min(h, h - off.dy);
      const long x0 = std::max(0L, -off.dx), x1 = std::min(w, w - off.dx);
      for (std::size_t c1 = 0; c1 < c; ++c1) {
        for (std::size_t c2 = 0; c2 < c; ++c2) {
          // Entry (i, j) with i in channel c1, j in channel c2; the transpose reads (j, i).
          const double k = transposed ? rc_.at(c2, c1, off.r) : rc_.at(c1, c2, off.r);
          if (k == 0.0) continue;
          for (long y = y0; y < y1; ++y) {
            for (long x = x0; x < x1; ++x) {
              o[static_cast<std::size_t>(y * w + x) * c + c1] +=
                  k * g[static_cast<std::size_t>((y + off.dy) * w + (x + off.dx)) * c + c2];
            }
          }
        }
      }
    }
  }
  return out;
}

// --- estimator ---------------------------------------------------------------------

CovEstimator::CovEstimator(CovMode mode, ImageGeometry geometry, double beta, bool track_mean)
    : mode_(mode), geometry_(geometry), beta_(beta), track_mean_(track_mean), radial_(geometry) {
  if (!(beta > 0.0 && beta <= 1.0)) throw ContractError("EWMA decay rate must satisfy 0 < beta <= 1");
  require(geometry.dim() > 0, "estimator needs a positive dimension");
}

void CovEstimator::update(const Tensor& perturbations) {
  require(perturbations.rank() == 2 && perturbations.dim(1) == dim(),
          "estimator update: perturbations must be (m x " + std::to_string(dim()) + ")");
  if (track_mean_) {
    const std::size_t m = perturbations.dim(0), d = dim();
    Tensor batch_mean(Shape{d});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < d; ++j) batch_mean[j] += perturbations[i * d + j] / static_cast<double>(m);
    if (!mean_ || !has_estimate_) {
      mean_ = batch_mean;
    } else {
      mean_ = kernels::add(kernels::scale(*mean_, 1.0 - beta_), kernels::scale(batch_mean, beta_));
    }
  }
  if (mode_ == CovMode::kDense) {
    ewma_update(batch_second_moment(perturbations));
  } else {
    ewma_update(radial_estimate(perturbations, geometry_));
  }
}

void CovEstimator::ewma_update(const DenseCov& batch) {
  require(mode_ == CovMode::kDense, "dense batch passed to a radial estimator");
  if (batch.dim() != dim()) throw ContractError("estimator update: batch covariance dimension mismatch");
  if (!has_estimate_) {
    dense_ = batch;
  } else {
    Tensor& s = dense_.matrix;
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = (1.0 - beta_) * s[i] + beta_ * batch.matrix[i];
  }
  has_estimate_ = true;
  ++steps_;
}

void CovEstimator::ewma_update(const RadialCovFun& batch) {
  require(mode_ == CovMode::kRadial, "radial batch passed to a dense estimator");
  if (!(batch.geometry == geometry_)) throw ContractError("estimator update: covariance function geometry mismatch");
  if (!has_estimate_) {
    radial_ = batch;
  } else {
    for (std::size_t p = 0; p < radial_.values.size(); ++p)
      for (std::size_t r = 0; r <= radial_.max_radius; ++r) {
        radial_.values[p][r] = (1.0 - beta_) * radial_.values[p][r] + beta_ * batch.values[p][r];
        radial_.counts[p][r] += batch.counts[p][r];
      }
  }
  has_estimate_ = true;
  ++steps_;
}

void CovEstimator::preload(DenseCov estimate) {
  require(mode_ == CovMode::kDense && estimate.dim() == dim(), "preload: dense estimate does not fit the estimator");
  dense_ = std::move(estimate);
  has_estimate_ = true;
}

void CovEstimator::preload(RadialCovFun estimate) {
  require(mode_ == CovMode::kRadial && estimate.geometry == geometry_,
          "preload: covariance function does not fit the estimator");
  radial_ = std::move(estimate);
  has_estimate_ = true;
}

void CovEstimator::require_estimate() const {
  if (!has_estimate_) throw DegenerateEstimateError("covariance estimator has no estimate yet");
}

const DenseCov& CovEstimator::dense() const {
  require(mode_ == CovMode::kDense, "estimator is not in dense mode");
  require_estimate();
  return dense_;
}

const RadialCovFun& CovEstimator::radial() const {
  require(mode_ == CovMode::kRadial, "estimator is not in radial mode");
  require_estimate();
  return radial_;
}

double CovEstimator::avg_diag() const {
  require_estimate();
  return mode_ == CovMode::kDense ? dense_.avg_diag() : radial_.avg_diag();
}

double CovEstimator::scale_factor(double c) const {
  const double avg = avg_diag();
  if (!(avg > 0.0)) {
    throw DegenerateEstimateError("average diagonal of the covariance estimate is " + fmt::format("{}", avg) +
                                  "; no perturbation signal yet");
  }
  return c / avg;
}

std::shared_ptr<const ad::RowOperator> CovEstimator::sigma_operator(std::optional<std::size_t> cutoff) const {
  require_estimate();
  if (mode_ == CovMode::kDense) return std::make_shared<DenseOperator>(dense_.matrix);
  return std::make_shared<RadialOperator>(radial_, cutoff.value_or(default_cutoff(radial_)));
}

Tensor CovEstimator::sigma_vecmul(const Tensor& g) const {
  if (g.rank() != 2 || g.dim(1) != dim()) {
    throw ContractError("sigma_vecmul: expected rows of length " + std::to_string(dim()) + ", got " +
                        shape_str(g.shape()));
  }
  return sigma_operator()->apply(g);
}

// --- export --------------------------------------------------------------------------

void write_dense_csv(const DenseCov& c, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  const std::size_t d = c.dim();
  for (std::size_t j = 0; j < d; ++j) out << (j ? "," : "") << 'c' << j;
  out << '\n';
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) out << (j ? "," : "") << fmt::format("{}", c.matrix[i * d + j]);
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path);
}

void write_radial_csv(const RadialCovFun& rc, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << "channel_pair,r,value,count\n";
  const std::size_t c = rc.geometry.channels;
  for (std::size_t c1 = 0; c1 < c; ++c1)
    for (std::size_t c2 = 0; c2 < c; ++c2)
      for (std::size_t r = 0; r <= rc.max_radius; ++r) {
        out << c1 << '-' << c2 << ',' << r << ',' << fmt::format("{}", rc.at(c1, c2, r)) << ','
            << rc.counts[rc.pair(c1, c2)][r] << '\n';
      }
  if (!out) throw IoError("failed writing " + path);
}

}  // namespace sgr::cov
