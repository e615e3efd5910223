// SPDX-FileCopyrightText: Copyright (c) 2026 The sgrlab Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "helpers.hpp"
#include "sgr/autodiff.hpp"
#include "sgr/error.hpp"

using namespace sgr;
using namespace sgr::testing;

TEST_SUITE("autodiff") {
  TEST_CASE("square has derivative 2x") {
    ad::Graph g;
    ad::Var x = g.leaf(Tensor::scalar(3.0));
    ad::Var f = ad::mul(x, x);
    CHECK(ad::gradient(f, x).item() == doctest::Approx(6.0).epsilon(1e-15));
  }

  TEST_CASE("bilinear form gradients") {
    ad::Graph g;
    ad::Var w = g.leaf(Tensor::vector({1.0, 2.0}));
    ad::Var x = g.leaf(Tensor::vector({3.0, 4.0}));
    const ad::Var leaves[] = {w, x};
    const auto grads = ad::gradients(ad::sum(ad::mul(w, x)), leaves);
    CHECK(grads[0] == Tensor::vector({3.0, 4.0}));
    CHECK(grads[1] == Tensor::vector({1.0, 2.0}));
  }

  TEST_CASE("non-scalar root is rejected") {
    ad::Graph g;
    ad::Var x = g.leaf(Tensor::vector({1.0, 2.0}));
    CHECK_THROWS_AS(ad::gradient(ad::mul(x, x), x), ContractError);
  }

  TEST_CASE("non-finite gradient is tagged with the op") {
    ad::Graph g;
    ad::Var x = g.leaf(Tensor::vector({0.0, 1.0}));
    try {
      ad::gradient(ad::sum(ad::sqrt(x)), x);
      FAIL("expected a numeric error");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("sqrt") != std::string::npos);
    }
  }

  TEST_CASE("unreachable leaf gets zeros") {
    ad::Graph g;
    ad::Var x = g.leaf(Tensor::vector({1.0, 2.0}));
    ad::Var y = g.leaf(Tensor::vector({5.0}));
    CHECK(ad::gradient(ad::sum(x), y) == Tensor::vector({0.0}));
  }

  TEST_CASE("MLP gradients match central differences") {
    Rng rng = derive_rng(11, 0);
    const models::Mlp mlp = random_mlp({6, 8, 5, 3}, 3);
    const Tensor x = random_tensor({4, 6}, rng);
    const auto labels = random_labels(4, 3, rng);
    // Input gradient of the mean cross-entropy.
    const double in_err = ad::finite_diff_check(
        [&](ad::Graph& g, ad::Var v) {
          const auto p = models::bind_params(g, mlp, false);
          return models::cross_entropy(mlp, g, p, v, labels);
        },
        x);
    CHECK(in_err < 1e-6);
    // Parameter gradient of the first weight matrix.
    const double w_err = ad::finite_diff_check(
        [&](ad::Graph& g, ad::Var w) {
          auto p = models::bind_params(g, mlp, false);
          p[0] = w;
          return models::cross_entropy(mlp, g, p, g.constant(x), labels);
        },
        mlp.params()[0]);
    CHECK(w_err < 1e-6);
  }

  TEST_CASE("half squared norm is exact") {
    Rng rng = derive_rng(12, 0);
    const double err = ad::finite_diff_check(
        [](ad::Graph&, ad::Var v) { return ad::scale(ad::sum(ad::mul(v, v)), 0.5); }, random_tensor({7}, rng));
    CHECK(err < 1e-9);
  }

  TEST_CASE("double backprop of w x") {
    ad::Graph g;
    ad::Var w = g.leaf(Tensor::scalar(3.0));
    ad::Var x = g.leaf(Tensor::scalar(2.0));
    ad::Var f = ad::mul(w, x);
    ad::Var dfdx = ad::grad_as_node(f, x);
    ad::Var omega = ad::scale(ad::mul(dfdx, dfdx), 0.5);
    CHECK(omega.value().item() == doctest::Approx(4.5));
    CHECK(ad::gradient(omega, w).item() == doctest::Approx(3.0).epsilon(1e-15));
  }

  TEST_CASE("relu gradient is piecewise constant") {
    ad::Graph g;
    ad::Var x = g.leaf(Tensor::vector({0.5, 1.5, 2.0}));
    ad::Var dx = ad::grad_as_node(ad::sum(ad::relu(x)), x);
    ad::Var omega = ad::scale(ad::sum(ad::mul(dx, dx)), 0.5);
    CHECK(ad::gradient(omega, x) == Tensor::vector({0.0, 0.0, 0.0}));
  }

  TEST_CASE("relu derivative at zero is zero") {
    ad::Graph g;
    ad::Var x = g.leaf(Tensor::vector({0.0, -1.0, 1.0}));
    CHECK(ad::gradient(ad::sum(ad::relu(x)), x) == Tensor::vector({0.0, 0.0, 1.0}));
  }

  TEST_CASE("op without second-order rule fails loudly under double backprop") {
    ad::Graph g;
    ad::Var x = g.leaf(Tensor::vector({1.0, 4.0}));
    CHECK_THROWS_AS(ad::grad_as_node(ad::sum(ad::sqrt(x)), x), UnsupportedOpError);
  }

  TEST_CASE("linearity of backward") {
    Rng rng = derive_rng(13, 0);
    const models::Mlp mlp = random_mlp({5, 6, 3}, 4);
    const Tensor x0 = random_tensor({3, 5}, rng);
    const std::vector<std::size_t> y1{0, 1, 2}, y2{2, 2, 0};
    const double a = 0.7, b = -1.3;
    auto grad_of = [&](auto build) {
      ad::Graph g;
      ad::Var x = g.leaf(x0);
      const auto p = models::bind_params(g, mlp, false);
      return ad::gradient(build(g, p, x), x);
    };
    const Tensor gf = grad_of([&](ad::Graph& g, auto& p, ad::Var x) { return models::cross_entropy(mlp, g, p, x, y1); });
    const Tensor gg = grad_of([&](ad::Graph& g, auto& p, ad::Var x) { return models::cross_entropy(mlp, g, p, x, y2); });
    const Tensor gc = grad_of([&](ad::Graph& g, auto& p, ad::Var x) {
      return ad::add(ad::scale(models::cross_entropy(mlp, g, p, x, y1), a),
                     ad::scale(models::cross_entropy(mlp, g, p, x, y2), b));
    });
    for (std::size_t i = 0; i < gc.size(); ++i) CHECK(gc[i] == doctest::Approx(a * gf[i] + b * gg[i]).epsilon(1e-12));
  }

  TEST_CASE("mixed derivative matches finite differences") {
    Rng rng = derive_rng(14, 0);
    const models::Mlp mlp = random_mlp({4, 7, 3}, 5);
    const Tensor x0 = random_tensor({2, 4}, rng);
    const Tensor v = random_tensor({2, 4}, rng);
    const std::vector<std::size_t> labels{1, 2};
    // h(w) = <grad_x CE(x, w), v>; its w-gradient is a mixed second derivative.
    const double err = ad::finite_diff_check(
        [&](ad::Graph& g, ad::Var w) {
          auto p = models::bind_params(g, mlp, false);
          p[0] = w;
          ad::Var x = g.leaf(x0);
          ad::Var gx = ad::grad_as_node(models::cross_entropy(mlp, g, p, x, labels), x);
          return ad::sum(ad::mul_const(gx, v));
        },
        mlp.params()[0]);
    CHECK(err < 1e-4);
  }

  TEST_CASE("conv and max-pool survive double backprop") {
    Rng rng = derive_rng(15, 0);
    models::ConvNet net({16, 16, 1}, {2, 2, 3, 3, 5, 4, 3});
    models::initialize(net, 6);
    const Tensor x0 = random_tensor({2, 256}, rng);
    const std::vector<std::size_t> labels{0, 2};
    const double err = ad::finite_diff_check(
        [&](ad::Graph& g, ad::Var w) {
          auto p = models::bind_params(g, net, false);
          p[0] = w;
          ad::Var x = g.leaf(x0);
          ad::Var gx = ad::grad_as_node(models::cross_entropy(net, g, p, x, labels), x);
          return ad::scale(ad::sum(ad::mul(gx, gx)), 0.5);
        },
        net.params()[0]);
    CHECK(err < 1e-4);
  }

  TEST_CASE("identical construction gives bit-identical gradients") {
    const models::Mlp mlp = random_mlp({5, 6, 3}, 7);
    auto run = [&] {
      Rng rng = derive_rng(16, 0);
      const Tensor x0 = random_tensor({3, 5}, rng);
      ad::Graph g;
      const auto p = models::bind_params(g, mlp, true);
      ad::Var x = g.leaf(x0);
      ad::Var gx = ad::grad_as_node(models::cross_entropy(mlp, g, p, x, std::vector<std::size_t>{0, 1, 2}), x);
      return ad::gradients(ad::sum(ad::mul(gx, gx)), p);
    };
    CHECK(run() == run());
  }
}
