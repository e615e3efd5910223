// SPDX-FileCopyrightText: Copyright (c) 2026 The sgrlab Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <fstream>

#include "helpers.hpp"
#include "sgr/autodiff.hpp"
#include "sgr/data.hpp"
#include "sgr/error.hpp"
#include "sgr/training.hpp"

using namespace sgr;
using namespace sgr::testing;

namespace {

struct Blobs {
  data::Dataset train, test;
};

Blobs blobs(std::size_t classes = 3, std::size_t dim = 16, double sep = 4.0) {
  data::Dataset all = data::synthetic_blobs(classes, dim, 60, sep, 3);
  Blobs b;
  b.train = all.head(150);
  b.test = all;
  return b;
}

train::TrainConfig base(train::Method m) {
  train::TrainConfig c;
  c.method = m;
  c.epochs = 2;
  c.batch_size = 32;
  c.seed = 17;
  c.augment = false;
  return c;
}

std::vector<Tensor> final_params(const Blobs& b, const train::TrainConfig& c) {
  auto model = std::make_unique<models::Mlp>(std::vector<std::size_t>{b.train.geometry.dim(), 12, b.train.num_classes});
  models::initialize(*model, 1);
  return train::train(b.train, b.test, std::move(model), c).model->params();
}

}  // namespace

TEST_SUITE("training") {
  TEST_CASE("Adam first step and fixed points") {
    std::vector<Tensor> p{Tensor(Shape{3}, 0.0)};
    train::AdamState s;
    train::adam_update(p, {Tensor(Shape{3}, 1.0)}, s, 0.01);
    for (double v : p[0].data()) CHECK(v == doctest::Approx(-0.01).epsilon(1e-6));

    std::vector<Tensor> q{Tensor::vector({1.0, -2.0})};
    train::AdamState z;
    for (int t = 0; t < 100; ++t) train::adam_update(q, {Tensor(Shape{2})}, z, 0.01);
    CHECK(q[0] == Tensor::vector({1.0, -2.0}));

    CHECK_THROWS_AS(train::adam_update(q, {Tensor(Shape{3})}, z, 0.01), ContractError);
  }

  TEST_CASE("Adam minimizes a quadratic bowl") {
    std::vector<Tensor> th{Tensor::vector({1.0})};
    train::AdamState s;
    for (int t = 0; t < 500; ++t) train::adam_update(th, {th[0]}, s, 0.01);
    CHECK(std::abs(th[0][0]) < 1e-3);
  }

  TEST_CASE("method lattice: lambda, decay and mixture of zero reproduce clean training") {
    const Blobs b = blobs();
    const auto clean = final_params(b, base(train::Method::kClean));
    auto sgr = base(train::Method::kSgr);
    sgr.lambda = 0.0;
    auto wd = base(train::Method::kWdecay);
    wd.weight_decay = 0.0;
    auto adv = base(train::Method::kAdvAugment);
    adv.mix = 0.0;
    auto gn = base(train::Method::kGn);
    gn.lambda = 0.0;
    CHECK(final_params(b, sgr) == clean);
    CHECK(final_params(b, wd) == clean);
    CHECK(final_params(b, adv) == clean);
    CHECK(final_params(b, gn) == clean);
  }

  TEST_CASE("fixed identity estimate reproduces GN training") {
    const Blobs b = blobs();
    auto gn = base(train::Method::kGn);
    gn.lambda = 0.5;
    auto sgr = base(train::Method::kSgr);
    sgr.lambda = 0.5;
    sgr.cov_update_every = 0;
    sgr.preload_dense = cov::DenseCov::identity(b.train.geometry.dim());
    sgr.data_constant = 1.0;
    CHECK(final_params(b, sgr) == final_params(b, gn));
  }

  TEST_CASE("reproducible runs") {
    const Blobs b = blobs();
    auto c = base(train::Method::kSgr);
    c.lambda = 1.0;
    c.augment = true;
    CHECK(final_params(b, c) == final_params(b, c));
  }

  TEST_CASE("single SGR step decreases the objective of a one-layer model") {
    const Blobs b = blobs(2, 8);
    models::LinearSoftmax lin(8, 2);
    models::initialize(lin, 3);
    const std::vector<std::size_t> idx{0, 1, 2, 3, 70, 71, 72, 73};
    const ModelBatch batch = data::make_batch(b.train, idx, data::Standardize::kPerImage);
    auto c = base(train::Method::kSgr);
    c.lambda = 1.0;
    c.lr = 1e-4;
    c.cov_update_every = 0;
    c.preload_dense = cov::DenseCov::identity(8, 2.0);
    cov::CovEstimator est(cov::CovMode::kDense, b.train.geometry, c.beta);
    est.preload(*c.preload_dense);
    train::AdamState adam;
    train::StepContext ctx;
    ctx.data_constant = 1.0;
    const auto first = train::sgr_training_step(lin, batch, &est, c, adam, ctx);
    ctx.step = 1;
    const auto second = train::sgr_training_step(lin, batch, &est, c, adam, ctx);
    CHECK(second.loss < first.loss);
    CHECK(first.sigma_t * first.avg_diag == doctest::Approx(1.0).epsilon(1e-15));
  }

  TEST_CASE("weight decay enters as half the coefficient times the squared norm") {
    const Blobs b = blobs();
    models::Mlp mlp({16, 6, 3});
    models::initialize(mlp, 4);
    const ModelBatch batch = data::make_batch(b.train.head(8), data::Standardize::kPerImage);
    auto c = base(train::Method::kWdecay);
    c.weight_decay = 0.1;
    train::AdamState a1;
    const auto stats = train::sgr_training_step(mlp, batch, nullptr, c, a1, {});
    double sq = 0.0;
    models::Mlp fresh({16, 6, 3});
    models::initialize(fresh, 4);
    for (std::size_t i = 0; i < fresh.params().size(); ++i)
      if (fresh.is_weight()[i]) sq += kernels::dot(fresh.params()[i], fresh.params()[i]);
    CHECK(stats.loss == doctest::Approx(stats.cross_entropy + 0.05 * sq).epsilon(1e-12));
  }

  TEST_CASE("training log has one row per epoch and the scaling invariant") {
    const Blobs b = blobs();
    auto c = base(train::Method::kSgr);
    c.lambda = 1.0;
    c.epochs = 3;
    auto model = std::make_unique<models::Mlp>(std::vector<std::size_t>{16, 10, 3});
    models::initialize(*model, 2);
    std::size_t calls = 0;
    const auto r = train::train(b.train, b.test, std::move(model), c, [&](const train::LogRow&) { ++calls; });
    CHECK(r.log.size() == 3);
    CHECK(calls == 3);
    for (const auto& row : r.log) {
      CHECK(row.omega >= 0.0);
      CHECK(row.sigma_t * row.avg_diag == doctest::Approx(r.data_constant).epsilon(1e-12));
    }
    const std::string path = temp_path("train_log.csv");
    train::write_train_log(r.log, path);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "epoch,step,loss,omega,sigma_t,test_acc");
    std::size_t rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 3);
  }

  TEST_CASE("separable blobs are learned by a one-layer model") {
    const data::Dataset d = data::synthetic_blobs(2, 2, 100, 10.0, 5);
    auto c = base(train::Method::kClean);
    c.epochs = 25;
    c.batch_size = 32;
    c.lr = 0.01;
    c.standardize = data::Standardize::kNone;
    auto lin = std::make_unique<models::LinearSoftmax>(2, 2);
    models::initialize(*lin, 1);
    const auto r = train::train(d, d, std::move(lin), c);
    CHECK(r.log.back().step < 200);
    CHECK(r.log.back().test_acc == 1.0);
  }

  TEST_CASE("configuration errors are listed together") {
    train::TrainConfig c;
    c.batch_size = 0;
    c.beta = 1.5;
    c.lr = -1.0;
    try {
      c.validate();
      FAIL("expected a config error");
    } catch (const ConfigError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("batch_size") != std::string::npos);
      CHECK(msg.find("beta") != std::string::npos);
      CHECK(msg.find("lr") != std::string::npos);
    }
    CHECK_THROWS_AS(train::parse_method("dropout"), ConfigError);
  }
}
