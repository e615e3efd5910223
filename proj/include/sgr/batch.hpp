// SPDX-FileCopyrightText: Copyright (c) 2026 The sgrlab Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "sgr/tensor.hpp"

namespace sgr {

/// Classifier inputs plus what is needed to map between model space and pixel space.
///
/// Row i of x equals (pixel_i - offset[i]) / spread[i]. Attacks work in model
/// space; their pixel-unit budgets become epsilon / spread[i] and the pixel
/// range [pixel_lo, pixel_hi] becomes per-row clip bounds.
struct ModelBatch {
  Tensor x;                          // m x d
  std::vector<std::size_t> labels;   // true labels
  std::vector<double> offset;        // per-row pixel mean
  std::vector<double> spread;        // per-row pixel scale
  std::vector<std::uint64_t> ids;    // stable sample ids, seed per-sample RNG streams
  double pixel_lo = 0.0;
  double pixel_hi = 1.0;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return x.empty() ? 0 : x.dim(1); }
  double lower(std::size_t i) const { return (pixel_lo - offset[i]) / spread[i]; }
  double upper(std::size_t i) const { return (pixel_hi - offset[i]) / spread[i]; }

  ModelBatch rows(std::size_t begin, std::size_t end) const;
  ModelBatch select(const std::vector<std::size_t>& which) const;
  /// Same batch with different model-space inputs.
  ModelBatch with_inputs(Tensor inputs) const;
  /// Rows mapped back to pixel scale.
  Tensor pixels() const;
  Tensor pixels_of(const Tensor& inputs) const;
};

/// Clamps every row of inputs into the batch's pixel range.
void clip_to_range(Tensor& inputs, const ModelBatch& batch);

}  // namespace sgr
