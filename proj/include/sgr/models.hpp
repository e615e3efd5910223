// SPDX-FileCopyrightText: Copyright (c) 2026 The sgrlab Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sgr/autodiff.hpp"
#include "sgr/tensor.hpp"

namespace sgr::models {

/// Input geometry of image-shaped data. Flattened inputs use HWC order.
struct ImageGeometry {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;

  std::size_t dim() const { return height * width * channels; }
  bool operator==(const ImageGeometry&) const = default;
};

/// A map from flattened inputs (m x d) to logits (m x K).
///
/// Parameters live in the classifier; forward() receives them as graph nodes
/// so callers decide whether they are differentiable leaves or constants.
class Classifier {
 public:
  virtual ~Classifier() = default;

  virtual std::string kind() const = 0;
  virtual std::size_t input_dim() const = 0;
  virtual std::size_t num_classes() const = 0;
  /// Integers that, with kind(), rebuild the architecture.
  virtual std::vector<std::uint64_t> architecture() const = 0;
  virtual ad::Var forward(ad::Graph& graph, std::span<const ad::Var> params, ad::Var x) const = 0;
  virtual std::unique_ptr<Classifier> clone() const = 0;

  std::vector<Tensor>& params() { return params_; }
  const std::vector<Tensor>& params() const { return params_; }
  /// True for weight tensors (subject to weight decay), false for biases.
  const std::vector<bool>& is_weight() const { return is_weight_; }

  std::map<std::string, std::string>& metadata() { return metadata_; }
  const std::map<std::string, std::string>& metadata() const { return metadata_; }

  std::size_t parameter_count() const;

 protected:
  void add_param(Tensor value, bool weight) {
    params_.push_back(std::move(value));
    is_weight_.push_back(weight);
  }

  std::vector<Tensor> params_;
  std::vector<bool> is_weight_;
  std::map<std::string, std::string> metadata_;
};

/// logits = x W^T + b with W: K x d.
class LinearSoftmax final : public Classifier {
 public:
  LinearSoftmax(std::size_t input_dim, std::size_t classes);
  LinearSoftmax(Tensor weights, Tensor biases);

  std::string kind() const override { return "linear"; }
  std::size_t input_dim() const override { return params_[0].dim(1); }
  std::size_t num_classes() const override { return params_[0].dim(0); }
  std::vector<std::uint64_t> architecture() const override;
  ad::Var forward(ad::Graph& graph, std::span<const ad::Var> params, ad::Var x) const override;
  std::unique_ptr<Classifier> clone() const override { return std::make_unique<LinearSoftmax>(*this); }

  const Tensor& weights() const { return params_[0]; }
  const Tensor& biases() const { return params_[1]; }
};

/// Fully connected ReLU network; widths = {d, h1, ..., K}.
class Mlp final : public Classifier {
 public:
  explicit Mlp(std::vector<std::size_t> widths);

  std::string kind() const override { return "mlp"; }
  std::size_t input_dim() const override { return widths_.front(); }
  std::size_t num_classes() const override { return widths_.back(); }
  std::vector<std::uint64_t> architecture() const override;
  ad::Var forward(ad::Graph& graph, std::span<const ad::Var> params, ad::Var x) const override;
  std::unique_ptr<Classifier> clone() const override { return std::make_unique<Mlp>(*this); }

  const std::vector<std::size_t>& widths() const { return widths_; }

 private:
  std::vector<std::size_t> widths_;
};

/// Four 3x3 valid conv blocks with two 2x2 max-pools, then three dense layers.
/// feature_maps = {conv1, conv2, conv3, conv4, dense1, dense2, classes}.
class ConvNet final : public Classifier {
 public:
  ConvNet(ImageGeometry geometry, std::vector<std::size_t> feature_maps);

  static std::vector<std::size_t> mnist_feature_maps() { return {32, 32, 64, 64, 200, 200, 10}; }
  static std::vector<std::size_t> cifar_feature_maps() { return {64, 64, 128, 128, 256, 256, 10}; }

  std::string kind() const override { return "convnet"; }
  std::size_t input_dim() const override { return geometry_.dim(); }
  std::size_t num_classes() const override { return feature_maps_.back(); }
  std::vector<std::uint64_t> architecture() const override;
  ad::Var forward(ad::Graph& graph, std::span<const ad::Var> params, ad::Var x) const override;
  std::unique_ptr<Classifier> clone() const override { return std::make_unique<ConvNet>(*this); }

  const std::vector<std::size_t>& feature_maps() const { return feature_maps_; }

 private:
  ImageGeometry geometry_;
  std::vector<std::size_t> feature_maps_;
};

/// He-uniform weights, zero biases.
void initialize(Classifier& model, std::uint64_t seed);

std::unique_ptr<Classifier> make_classifier(const std::string& kind, std::span<const std::uint64_t> architecture);

// ---------------------------------------------------------------------------
// Evaluation helpers. x is always (m x d).

std::vector<ad::Var> bind_params(ad::Graph& graph, const Classifier& model, bool requires_grad);

ad::Var logits(const Classifier& model, ad::Graph& graph, std::span<const ad::Var> params, ad::Var x);
/// Per-row log phi_{y_i}(x_i), shape (m).
ad::Var log_prob(const Classifier& model, ad::Graph& graph, std::span<const ad::Var> params, ad::Var x,
                 std::span<const std::size_t> labels);
/// Mean cross-entropy over the batch, rank 0.
ad::Var cross_entropy(const Classifier& model, ad::Graph& graph, std::span<const ad::Var> params, ad::Var x,
                      std::span<const std::size_t> labels);

Tensor logits(const Classifier& model, const Tensor& x);
Tensor probabilities(const Classifier& model, const Tensor& x);
/// Per-row log phi_{y_i}(x_i) as plain numbers.
std::vector<double> log_prob(const Classifier& model, const Tensor& x, std::span<const std::size_t> labels);
/// Per-sample cross-entropy (no averaging).
std::vector<double> sample_losses(const Classifier& model, const Tensor& x, std::span<const std::size_t> labels);
/// Rows of grad_x log phi_{y_i}(x_i), shape (m x d).
Tensor input_log_prob_grad(const Classifier& model, const Tensor& x, std::span<const std::size_t> labels);
/// Argmax of each row; ties go to the smallest index.
std::vector<std::size_t> argmax_rows(const Tensor& scores);
std::vector<std::size_t> predict(const Classifier& model, const Tensor& x);
double accuracy(const Classifier& model, const Tensor& x, std::span<const std::size_t> labels);

// ---------------------------------------------------------------------------
// Checkpoints: versioned little-endian binary, exact round trip.

void save_checkpoint(const Classifier& model, const std::string& path);
std::unique_ptr<Classifier> load_checkpoint(const std::string& path);

}  // namespace sgr::models
