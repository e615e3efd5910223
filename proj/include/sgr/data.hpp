// SPDX-FileCopyrightText: Copyright (c) 2026 The sgrlab Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sgr/batch.hpp"
#include "sgr/models.hpp"
#include "sgr/rng.hpp"

namespace sgr::data {

using models::ImageGeometry;

enum class DatasetKind { kMnist, kCifar, kSynthetic };

/// Images in [0, 1] pixel scale, flattened HWC, one row per sample.
struct Dataset {
  std::string name;
  DatasetKind kind = DatasetKind::kSynthetic;
  ImageGeometry geometry;
  std::size_t num_classes = 0;
  Tensor images;  // N x d
  std::vector<std::size_t> labels;

  std::size_t size() const { return labels.size(); }
  std::span<const double> image(std::size_t i) const { return images.row(i); }
  /// First n samples (or all when n exceeds the size).
  Dataset head(std::size_t n) const;
};

/// Reads an IDX image file (magic 0x803) and label file (magic 0x801), raw or gzip.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);
/// Writes images quantized to bytes (round(255 p)) and labels in IDX format, gzip when the path ends in .gz.
void save_idx(const Dataset& dataset, const std::string& images_path, const std::string& labels_path);

/// Loads {train, t10k}-{images-idx3, labels-idx1}-ubyte[.gz] from dir.
Dataset load_mnist(const std::string& dir, bool train);

/// Directory from $SGR_DATA_DIR, falling back to the given default.
std::string data_dir(const std::string& fallback);

/// Gaussian blobs around seeded random centers spaced by `separation`, clipped into [0, 1].
Dataset synthetic_blobs(std::size_t classes, std::size_t dim, std::size_t per_class, double separation,
                        std::uint64_t seed);

/// Pad-4 / crop at (offset_y, offset_x) in [0, 8]^2 / optional horizontal flip.
std::vector<double> augment_at(std::span<const double> image, const ImageGeometry& geometry, DatasetKind kind,
                               std::size_t offset_y, std::size_t offset_x, bool flip);
/// Random crop offset; flips with probability 1/2 only for CIFAR-style data. Synthetic data passes through.
std::vector<double> augment(std::span<const double> image, const ImageGeometry& geometry, DatasetKind kind, Rng& rng);

enum class Standardize { kPerImage, kNone };

Standardize parse_standardize(const std::string& name);

struct Standardized {
  std::vector<double> values;
  double offset = 0.0;
  double spread = 1.0;
};

/// Zero mean, unit variance per image; variance floored at 1e-8.
Standardized standardize(std::span<const double> image, Standardize policy = Standardize::kPerImage);

/// Builds classifier inputs for the given samples. With augment_seed set, each
/// sample is augmented using a stream derived from (seed, sample id).
ModelBatch make_batch(const Dataset& dataset, std::span<const std::size_t> indices, Standardize policy,
                      const std::uint64_t* augment_seed = nullptr);
ModelBatch make_batch(const Dataset& dataset, Standardize policy);

/// Classifier-space inputs (standardized) of the whole dataset, N x d.
Tensor model_inputs(const Dataset& dataset, Standardize policy);

}  // namespace sgr::data
