// SPDX-FileCopyrightText: Copyright (c) 2026 The sgrlab Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "sgr/batch.hpp"
#include "sgr/models.hpp"
#include "sgr/rng.hpp"
#include "sgr/tensor.hpp"

namespace sgr::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> n(0.0, scale);
  for (double& v : t.data()) v = n(rng);
  return t;
}

inline Tensor uniform_tensor(Shape shape, Rng& rng, double lo = 0.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.data()) v = u(rng);
  return t;
}

inline std::vector<std::size_t> random_labels(std::size_t m, std::size_t k, Rng& rng) {
  std::uniform_int_distribution<std::size_t> u(0, k - 1);
  std::vector<std::size_t> out(m);
  for (auto& y : out) y = u(rng);
  return out;
}

/// Random PSD matrix A A^T / d.
inline Tensor random_psd(std::size_t d, Rng& rng) {
  const Tensor a = random_tensor({d, d}, rng);
  return kernels::scale(kernels::matmul(a, a, false, true), 1.0 / static_cast<double>(d));
}

inline models::Mlp random_mlp(std::vector<std::size_t> widths, std::uint64_t seed) {
  models::Mlp m(std::move(widths));
  models::initialize(m, seed);
  // Nonzero biases so that no identity accidentally relies on them being zero.
  Rng rng = derive_rng(seed, 1);
  for (std::size_t i = 0; i < m.params().size(); ++i)
    if (!m.is_weight()[i])
      for (double& v : m.params()[i].data()) v = std::normal_distribution<double>(0.0, 0.1)(rng);
  return m;
}

/// Batch whose model space equals pixel space (offset 0, spread 1), pixels in [0, 1].
inline ModelBatch pixel_batch(const Tensor& x, std::vector<std::size_t> labels) {
  ModelBatch b;
  b.x = x;
  b.labels = std::move(labels);
  b.offset.assign(b.labels.size(), 0.0);
  b.spread.assign(b.labels.size(), 1.0);
  for (std::size_t i = 0; i < b.labels.size(); ++i) b.ids.push_back(i);
  return b;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / (std::abs(a) + std::abs(b) + 1e-12); }

inline std::string temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "sgr_tests";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

}  // namespace sgr::testing
