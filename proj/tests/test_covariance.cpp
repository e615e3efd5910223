// SPDX-FileCopyrightText: Copyright (c) 2026 The sgrlab Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <fstream>

#include "helpers.hpp"
#include "sgr/covariance.hpp"
#include "sgr/error.hpp"

using namespace sgr;
using namespace sgr::testing;

namespace {

double frob(const Tensor& a) { return std::sqrt(kernels::dot(a, a)); }

/// Bin average of dense entries, the oracle for radial_estimate.
double dense_bin_average(const cov::DenseCov& d, const models::ImageGeometry& g, std::size_t c1, std::size_t c2,
                         std::size_t r, std::size_t* count) {
  double total = 0.0;
  std::size_t n = 0;
  const std::size_t dim = g.dim();
  for (std::size_t i = 0; i < dim; ++i)
    for (std::size_t j = 0; j < dim; ++j) {
      const std::size_t pi = i / g.channels, pj = j / g.channels;
      if (i % g.channels != c1 || j % g.channels != c2) continue;
      const long dy = static_cast<long>(pi / g.width) - static_cast<long>(pj / g.width);
      const long dx = static_cast<long>(pi % g.width) - static_cast<long>(pj % g.width);
      if (cov::rounded_displacement(dy, dx) != r) continue;
      total += d.matrix.at(i, j);
      ++n;
    }
  *count = n;
  return n ? total / static_cast<double>(n) : 0.0;
}

}  // namespace

TEST_SUITE("covariance") {
  TEST_CASE("batch second moment examples") {
    CHECK(cov::batch_second_moment(Tensor::matrix(1, 2, {1, 0})).matrix == Tensor::matrix(2, 2, {1, 0, 0, 0}));
    CHECK(cov::batch_second_moment(Tensor::matrix(2, 2, {1, 1, 1, -1})).matrix == Tensor::matrix(2, 2, {1, 0, 0, 1}));
    CHECK_THROWS_AS(cov::batch_second_moment(Tensor(Shape{0, 2})), ContractError);
  }

  TEST_CASE("Monte Carlo diagonal") {
    Rng rng = derive_rng(1, 0);
    Tensor xi = random_tensor({1000, 2}, rng);
    for (std::size_t i = 0; i < 1000; ++i) xi.at(i, 0) *= 2.0;
    const auto c = cov::batch_second_moment(xi);
    CHECK(std::abs(c.matrix.at(0, 0) / 4.0 - 1.0) < 0.15);
    CHECK(std::abs(c.matrix.at(1, 1) - 1.0) < 0.15);
  }

  TEST_CASE("EWMA examples") {
    const models::ImageGeometry g{1, 3, 1};
    cov::CovEstimator est(cov::CovMode::kDense, g, 0.1);
    est.preload(cov::DenseCov::identity(3));
    est.ewma_update(cov::DenseCov{Tensor(Shape{3, 3})});
    CHECK(est.dense().matrix == cov::DenseCov::identity(3, 0.9).matrix);

    cov::CovEstimator one(cov::CovMode::kDense, g, 1.0);
    one.preload(cov::DenseCov::identity(3));
    Rng rng = derive_rng(2, 0);
    const cov::DenseCov batch{random_psd(3, rng)};
    one.ewma_update(batch);
    CHECK(one.dense().matrix == batch.matrix);

    CHECK_THROWS_AS(est.ewma_update(cov::DenseCov::identity(4)), ContractError);
  }

  TEST_CASE("EWMA converges geometrically to a repeated batch") {
    const models::ImageGeometry g{1, 4, 1};
    Rng rng = derive_rng(3, 0);
    const cov::DenseCov c{random_psd(4, rng)};
    cov::CovEstimator est(cov::CovMode::kDense, g, 0.1);
    est.preload(cov::DenseCov::identity(4));
    const double d0 = frob(kernels::sub(est.dense().matrix, c.matrix));
    for (int t = 1; t <= 20; ++t) {
      est.ewma_update(c);
      const double dt = frob(kernels::sub(est.dense().matrix, c.matrix));
      CHECK(std::abs(dt - std::pow(0.9, t) * d0) < 1e-12 * (1 + d0));
    }
  }

  TEST_CASE("EWMA recursion on two batches has the closed form") {
    const models::ImageGeometry g{1, 5, 1};
    Rng rng = derive_rng(4, 0);
    const Tensor s0 = random_psd(5, rng), a = random_psd(5, rng), b = random_psd(5, rng);
    const double beta = 0.3;
    cov::CovEstimator est(cov::CovMode::kDense, g, beta);
    est.preload(cov::DenseCov{s0});
    est.ewma_update(cov::DenseCov{a});
    est.ewma_update(cov::DenseCov{b});
    for (std::size_t i = 0; i < 25; ++i) {
      const double expected = (1 - beta) * (1 - beta) * s0[i] + (1 - beta) * beta * a[i] + beta * b[i];
      CHECK(std::abs(est.dense().matrix[i] - expected) < 1e-14);
    }
  }

  TEST_CASE("first update takes the batch directly") {
    const models::ImageGeometry g{1, 3, 1};
    Rng rng = derive_rng(5, 0);
    const Tensor xi = random_tensor({8, 3}, rng);
    cov::CovEstimator est(cov::CovMode::kDense, g, 0.1);
    CHECK_FALSE(est.has_estimate());
    est.update(xi);
    CHECK(est.dense().matrix == cov::batch_second_moment(xi).matrix);
  }

  TEST_CASE("estimate stays PSD") {
    const models::ImageGeometry g{4, 4, 1};
    cov::CovEstimator est(cov::CovMode::kDense, g, 0.1);
    Rng rng = derive_rng(6, 0);
    for (int t = 0; t < 30; ++t) {
      est.update(random_tensor({5, 16}, rng));
      CHECK(cov::min_eigenvalue(est.dense()) >= -1e-8);
    }
  }

  TEST_CASE("radial estimate of white noise and constant fields") {
    const models::ImageGeometry g{6, 6, 1};
    Rng rng = derive_rng(7, 0);
    const Tensor white = random_tensor({4000, 36}, rng);
    const auto rc = cov::radial_estimate(white, g);
    CHECK(std::abs(rc.at(0, 0, 0) - 1.0) < 0.05);
    for (std::size_t r = 1; r <= rc.max_radius; ++r) CHECK(std::abs(rc.at(0, 0, r)) < 0.05);

    Tensor flat(Shape{3, 36});
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 36; ++j) flat.at(i, j) = static_cast<double>(i) - 1.0;
    const auto rf = cov::radial_estimate(flat, g);
    for (std::size_t r = 0; r <= rf.max_radius; ++r)
      if (rf.counts[0][r] > 0) CHECK(rf.at(0, 0, r) == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  }

  TEST_CASE("radial estimate is the bin average of the dense estimate") {
    for (const models::ImageGeometry g : {models::ImageGeometry{4, 4, 1}, models::ImageGeometry{6, 6, 1},
                                          models::ImageGeometry{3, 4, 2}}) {
      Rng rng = derive_rng(8, g.dim());
      const Tensor xi = random_tensor({7, g.dim()}, rng);
      const auto dense = cov::batch_second_moment(xi);
      const auto rc = cov::radial_estimate(xi, g);
      for (std::size_t c1 = 0; c1 < g.channels; ++c1)
        for (std::size_t c2 = 0; c2 < g.channels; ++c2)
          for (std::size_t r = 0; r <= rc.max_radius; ++r) {
            std::size_t n = 0;
            const double expected = dense_bin_average(dense, g, c1, c2, r, &n);
            CHECK(rc.counts[rc.pair(c1, c2)][r] == n);
            CHECK(std::abs(rc.at(c1, c2, r) - expected) <= 1e-12 * (1 + std::abs(expected)));
          }
      if (g.channels == 2)
        for (std::size_t r = 0; r <= rc.max_radius; ++r) CHECK(rc.at(0, 1, r) == doctest::Approx(rc.at(1, 0, r)));
    }
  }

  TEST_CASE("radial to dense") {
    const models::ImageGeometry g{2, 2, 1};
    cov::RadialCovFun delta(g);
    delta.values[0][0] = 3.0;
    CHECK(cov::radial_to_dense(delta).matrix == cov::DenseCov::identity(4, 3.0).matrix);

    const auto e = cov::radial_to_dense(cov::exponential_covfun({2, 1, 1}, 1.0));
    CHECK(e.matrix.at(0, 1) == doctest::Approx(std::exp(-1.0)).epsilon(1e-15));
    CHECK(e.matrix.at(0, 0) == 1.0);

    CHECK_THROWS_AS(cov::radial_to_dense(cov::exponential_covfun({8, 8, 1}, 1.0), 32), CapacityError);
  }

  TEST_CASE("radial round trip reproduces the bin-averaged dense matrix") {
    const models::ImageGeometry g{5, 5, 1};
    Rng rng = derive_rng(9, 0);
    const Tensor xi = random_tensor({10, 25}, rng);
    const auto dense = cov::batch_second_moment(xi);
    const auto back = cov::radial_to_dense(cov::radial_estimate(xi, g));
    for (std::size_t i = 0; i < 25; ++i)
      for (std::size_t j = 0; j < 25; ++j) {
        const long dy = static_cast<long>(i / 5) - static_cast<long>(j / 5);
        const long dx = static_cast<long>(i % 5) - static_cast<long>(j % 5);
        std::size_t n = 0;
        const double expected = dense_bin_average(dense, g, 0, 0, cov::rounded_displacement(dy, dx), &n);
        CHECK(std::abs(back.matrix.at(i, j) - expected) < 1e-12);
      }
  }

  TEST_CASE("scale factor") {
    const models::ImageGeometry g{1, 2, 1};
    cov::CovEstimator est(cov::CovMode::kDense, g, 0.1);
    CHECK_THROWS_AS(est.scale_factor(1.0), DegenerateEstimateError);
    est.preload(cov::DenseCov::identity(2, 2.0));
    CHECK(est.scale_factor(1.0) == 0.5);
    est.preload(cov::DenseCov{Tensor::matrix(2, 2, {1, 0, 0, 3})});
    CHECK(est.scale_factor(2.0) == 1.0);
    est.preload(cov::DenseCov{Tensor(Shape{2, 2})});
    CHECK_THROWS_AS(est.scale_factor(1.0), DegenerateEstimateError);

    Rng rng = derive_rng(10, 0);
    cov::CovEstimator r(cov::CovMode::kRadial, {5, 5, 2}, 0.1);
    for (int t = 0; t < 3; ++t) {
      r.update(random_tensor({6, 50}, rng, 0.3));
      const double c = 0.7;
      CHECK(r.scale_factor(c) * r.avg_diag() == doctest::Approx(c).epsilon(1e-15));
    }
  }

  TEST_CASE("sigma vecmul") {
    Rng rng = derive_rng(11, 0);
    cov::CovEstimator ident(cov::CovMode::kDense, {1, 4, 1}, 0.1);
    ident.preload(cov::DenseCov::identity(4));
    const Tensor g = random_tensor({3, 4}, rng);
    CHECK(ident.sigma_vecmul(g) == g);
    CHECK(kernels::max_abs(ident.sigma_vecmul(Tensor(Shape{3, 4}))) == 0.0);
    CHECK_THROWS_AS(ident.sigma_vecmul(Tensor(Shape{3, 5})), ContractError);
  }

  TEST_CASE("radial operator with full cutoff equals the dense product") {
    const models::ImageGeometry g{8, 8, 1};
    Rng rng = derive_rng(12, 0);
    const auto rc = cov::radial_estimate(random_tensor({20, 64}, rng), g);
    const cov::RadialOperator op(rc, rc.max_radius);
    const cov::DenseOperator dense(cov::radial_to_dense(rc).matrix);
    const Tensor v = random_tensor({3, 64}, rng);
    const Tensor a = op.apply(v), b = dense.apply(v);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-12);
  }

  TEST_CASE("radial operator is linear") {
    const models::ImageGeometry g{6, 6, 2};
    Rng rng = derive_rng(13, 0);
    const auto rc = cov::radial_estimate(random_tensor({10, 72}, rng), g);
    const cov::RadialOperator op(rc, cov::default_cutoff(rc));
    const Tensor g1 = random_tensor({2, 72}, rng), g2 = random_tensor({2, 72}, rng);
    const Tensor lhs = op.apply(kernels::add(kernels::scale(g1, 1.5), kernels::scale(g2, -0.25)));
    const Tensor rhs = kernels::add(kernels::scale(op.apply(g1), 1.5), kernels::scale(op.apply(g2), -0.25));
    for (std::size_t i = 0; i < lhs.size(); ++i) CHECK(std::abs(lhs[i] - rhs[i]) < 1e-12);
  }

  TEST_CASE("dataset diagonal constant") {
    CHECK(cov::dataset_diag_constant(Tensor::matrix(2, 1, {0, 2})) == 1.0);
    CHECK(cov::dataset_diag_constant(Tensor(Shape{5, 3}, 0.4)) == 0.0);
    CHECK_THROWS_AS(cov::dataset_diag_constant(Tensor(Shape{1, 3})), ContractError);
    Rng rng = derive_rng(14, 0);
    Tensor z = random_tensor({500, 4}, rng);
    for (std::size_t j = 0; j < 4; ++j) {
      double mu = 0, var = 0;
      for (std::size_t i = 0; i < 500; ++i) mu += z.at(i, j) / 500.0;
      for (std::size_t i = 0; i < 500; ++i) var += (z.at(i, j) - mu) * (z.at(i, j) - mu) / 500.0;
      for (std::size_t i = 0; i < 500; ++i) z.at(i, j) = (z.at(i, j) - mu) / std::sqrt(var);
    }
    CHECK(cov::dataset_diag_constant(z) == doctest::Approx(1.0).epsilon(1e-12));
  }

  TEST_CASE("decay length of an exponential covfun") {
    for (double zeta : {1.0, 2.0, 4.0}) {
      const auto rc = cov::exponential_covfun({32, 32, 1}, zeta);
      CHECK(cov::decay_length(rc) == doctest::Approx(zeta).epsilon(0.05));
    }
  }

  TEST_CASE("CSV exports") {
    const auto rc = cov::exponential_covfun({3, 3, 1}, 1.0);
    const std::string path = temp_path("radial.csv");
    cov::write_radial_csv(rc, path);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "channel_pair,r,value,count");
  }
}
