// SPDX-FileCopyrightText: Copyright (c) 2026 The sgrlab Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0
#include "sgr/batch.hpp"

#include <algorithm>

#include "sgr/error.hpp"

namespace sgr {

ModelBatch ModelBatch::rows(std::size_t begin, std::size_t end) const {
  require(begin <= end && end <= size(), "batch row range out of bounds");
  ModelBatch out;
  out.x = x.rows(begin, end);
  out.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(begin), labels.begin() + static_cast<std::ptrdiff_t>(end));
  out.offset.assign(offset.begin() + static_cast<std::ptrdiff_t>(begin), offset.begin() + static_cast<std::ptrdiff_t>(end));
  out.spread.assign(spread.begin() + static_cast<std::ptrdiff_t>(begin), spread.begin() + static_cast<std::ptrdiff_t>(end));
  out.ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(begin), ids.begin() + static_cast<std::ptrdiff_t>(end));
  out.pixel_lo = pixel_lo;
  out.pixel_hi = pixel_hi;
  return out;
}

ModelBatch ModelBatch::select(const std::vector<std::size_t>& which) const {
  ModelBatch out;
  const std::size_t d = dim();
  out.x = Tensor(Shape{which.size(), d});
  for (std::size_t k = 0; k < which.size(); ++k) {
    const std::size_t i = which[k];
    require(i < size(), "batch selection out of range");
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(i * d), d,
                out.x.data().begin() + static_cast<std::ptrdiff_t>(k * d));
    out.labels.push_back(labels[i]);
    out.offset.push_back(offset[i]);
    out.spread.push_back(spread[i]);
    out.ids.push_back(ids[i]);
  }
  out.pixel_lo = pixel_lo;
  out.pixel_hi = pixel_hi;
  return out;
}

ModelBatch ModelBatch::with_inputs(Tensor inputs) const {
  require(inputs.shape() == x.shape(), "replacement inputs must keep the batch shape");
  ModelBatch out = *this;
  out.x = std::move(inputs);
  return out;
}

Tensor ModelBatch::pixels() const { return pixels_of(x); }

Tensor ModelBatch::pixels_of(const Tensor& inputs) const {
  Tensor out = inputs;
  const std::size_t d = dim();
  for (std::size_t i = 0; i < size(); ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = out[i * d + j] * spread[i] + offset[i];
  return out;
}

void clip_to_range(Tensor& inputs, const ModelBatch& batch) {
  const std::size_t d = batch.dim();
  require(inputs.shape() == batch.x.shape(), "clip_to_range: shape mismatch");
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double lo = batch.lower(i), hi = batch.upper(i);
    for (std::size_t j = 0; j < d; ++j) inputs[i * d + j] = std::clamp(inputs[i * d + j], lo, hi);
  }
}

}  // namespace sgr
