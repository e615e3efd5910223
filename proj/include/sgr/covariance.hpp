// SPDX-FileCopyrightText: Copyright (c) 2026 The sgrlab Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Second-moment structure of perturbations: dense d x d matrices and, for
// images, radial covariance functions indexed by rounded pixel displacement.
// Estimates are raw (uncentered) second moments with divisor m.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sgr/autodiff.hpp"
#include "sgr/models.hpp"
#include "sgr/tensor.hpp"

namespace sgr::cov {

using models::ImageGeometry;

struct DenseCov {
  Tensor matrix;  // d x d

  std::size_t dim() const { return matrix.empty() ? 0 : matrix.dim(0); }
  double avg_diag() const;
  static DenseCov identity(std::size_t d, double variance = 1.0);
};

/// cov[(c1, c2)][r] for r = 0..max_radius, with the number of (ordered) pixel
/// pairs that fell into each bin. Pair index is c1 * channels + c2.
struct RadialCovFun {
  ImageGeometry geometry;
  std::size_t max_radius = 0;
  std::vector<std::vector<double>> values;
  std::vector<std::vector<std::uint64_t>> counts;

  explicit RadialCovFun(ImageGeometry g = {});

  std::size_t pair(std::size_t c1, std::size_t c2) const { return c1 * geometry.channels + c2; }
  double at(std::size_t c1, std::size_t c2, std::size_t r) const { return values[pair(c1, c2)][r]; }
  /// cov[(c, c)][0] averaged over channels.
  double avg_diag() const;
};

/// round(||(dy, dx)||_2)
std::size_t rounded_displacement(long dy, long dx);
std::size_t max_displacement(const ImageGeometry& g);

/// (1/m) sum_i xi_i xi_i^T for perturbations (m x d).
DenseCov batch_second_moment(const Tensor& perturbations);

/// Bin-averaged second moments of image-shaped perturbations (m x H*W*C, HWC order).
/// Empty bins hold 0 with count 0.
RadialCovFun radial_estimate(const Tensor& perturbations, const ImageGeometry& geometry);

/// Expands a covariance function to its d x d matrix. Throws CapacityError above max_dim.
DenseCov radial_to_dense(const RadialCovFun& rc, std::size_t max_dim = 4096);

/// Intra-channel exp(-r / decay_length), inter-channel inter_channel * exp(-r / decay_length).
RadialCovFun exponential_covfun(const ImageGeometry& geometry, double decay_length, double inter_channel = 0.5);

/// Smallest r with |cov[pair][r]| < 1e-3 * avg_diag for every channel pair, else max_radius.
std::size_t default_cutoff(const RadialCovFun& rc);

/// Displacement at which the channel-averaged intra-channel function first
/// drops to 1/e of its r = 0 value, linearly interpolated. max_radius when it never does.
double decay_length(const RadialCovFun& rc);

/// Mean over coordinates of the per-coordinate population variance of inputs (N x d).
double dataset_diag_constant(const Tensor& inputs);

double min_eigenvalue(const DenseCov& c);

/// Row operator g -> Sigma g for a dense matrix.
class DenseOperator final : public ad::RowOperator {
 public:
  explicit DenseOperator(Tensor matrix);
  std::size_t dim() const override { return matrix_.dim(0); }
  Tensor apply(const Tensor& rows) const override;
  Tensor apply_transpose(const Tensor& rows) const override;

 private:
  Tensor matrix_;
  Tensor transposed_;
};

/// Row operator (Sigma g)_i = sum_j cov[(c_i, c_j)][round|i - j|] g_j over displacements <= cutoff.
class RadialOperator final : public ad::RowOperator {
 public:
  RadialOperator(RadialCovFun rc, std::size_t cutoff);
  std::size_t dim() const override { return rc_.geometry.dim(); }
  Tensor apply(const Tensor& rows) const override { return run(rows, false); }
  Tensor apply_transpose(const Tensor& rows) const override { return run(rows, true); }
  std::size_t cutoff() const { return cutoff_; }

 private:
  struct Offset {
    long dy, dx;
    std::size_t r;
  };
  Tensor run(const Tensor& rows, bool transposed) const;

  RadialCovFun rc_;
  std::size_t cutoff_;
  std::vector<Offset> stencil_;
};

/// Identity row operator (GN).
class IdentityOperator final : public ad::RowOperator {
 public:
  explicit IdentityOperator(std::size_t d) : dim_(d) {}
  std::size_t dim() const override { return dim_; }
  Tensor apply(const Tensor& rows) const override { return rows; }
  Tensor apply_transpose(const Tensor& rows) const override { return rows; }

 private:
  std::size_t dim_;
};

enum class CovMode { kDense, kRadial };

/// Running EWMA estimate Sigma_t = (1 - beta) Sigma_{t-1} + beta * batch.
/// The first batch seen without a preloaded estimate initializes Sigma directly.
class CovEstimator {
 public:
  CovEstimator(CovMode mode, ImageGeometry geometry, double beta = 0.1, bool track_mean = false);

  CovMode mode() const { return mode_; }
  double beta() const { return beta_; }
  std::size_t steps() const { return steps_; }
  bool has_estimate() const { return has_estimate_; }
  std::size_t dim() const { return geometry_.dim(); }
  const ImageGeometry& geometry() const { return geometry_; }

  /// Estimates the batch second moment of perturbations (m x d) and blends it in.
  void update(const Tensor& perturbations);
  void ewma_update(const DenseCov& batch);
  void ewma_update(const RadialCovFun& batch);
  void preload(DenseCov estimate);
  void preload(RadialCovFun estimate);

  const DenseCov& dense() const;
  const RadialCovFun& radial() const;
  const std::optional<Tensor>& mean() const { return mean_; }

  double avg_diag() const;
  /// sigma_t with sigma_t * avg_diag = c. Throws DegenerateEstimateError when avg_diag <= 0.
  double scale_factor(double c) const;
  /// Constant snapshot of the current estimate. cutoff applies in radial mode (default_cutoff when empty).
  std::shared_ptr<const ad::RowOperator> sigma_operator(std::optional<std::size_t> cutoff = std::nullopt) const;
  /// Sigma_t applied to each row of g (m x d).
  Tensor sigma_vecmul(const Tensor& g) const;

 private:
  void require_estimate() const;

  CovMode mode_;
  ImageGeometry geometry_;
  double beta_;
  bool track_mean_;
  bool has_estimate_ = false;
  std::size_t steps_ = 0;
  DenseCov dense_;
  RadialCovFun radial_;
  std::optional<Tensor> mean_;
};

void write_dense_csv(const DenseCov& c, const std::string& path);
/// Schema: channel_pair,r,value,count
void write_radial_csv(const RadialCovFun& rc, const std::string& path);

}  // namespace sgr::cov
