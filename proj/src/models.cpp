// SPDX-FileCopyrightText: Copyright (c) 2026 The sgrlab Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0
#include "sgr/models.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "sgr/error.hpp"

namespace sgr::models {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

std::size_t Classifier::parameter_count() const {
  std::size_t total = 0;
  for (const Tensor& p : params_) total += p.size();
  return total;
}

// --- LinearSoftmax ----------------------------------------------------------

LinearSoftmax::LinearSoftmax(std::size_t input_dim, std::size_t classes) {
  require(input_dim > 0 && classes > 0, "LinearSoftmax needs positive dimensions");
  add_param(Tensor(Shape{classes, input_dim}), true);
  add_param(Tensor(Shape{classes}), false);
}

LinearSoftmax::LinearSoftmax(Tensor weights, Tensor biases) {
  require(weights.rank() == 2 && biases.rank() == 1 && biases.dim(0) == weights.dim(0),
          "LinearSoftmax: weights must be K x d and biases K");
  add_param(std::move(weights), true);
  add_param(std::move(biases), false);
}

std::vector<std::uint64_t> LinearSoftmax::architecture() const { return {input_dim(), num_classes()}; }

ad::Var LinearSoftmax::forward(ad::Graph&, std::span<const ad::Var> params, ad::Var x) const {
  return ad::add_rowvec(ad::matmul(x, ad::transpose(params[0])), params[1]);
}

// --- Mlp ---------------------------------------------------------------------

Mlp::Mlp(std::vector<std::size_t> widths) : widths_(std::move(widths)) {
  require(widths_.size() >= 2, "Mlp needs at least input and output widths");
  for (std::size_t w : widths_) require(w > 0, "Mlp widths must be positive");
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    add_param(Tensor(Shape{widths_[l], widths_[l + 1]}), true);
    add_param(Tensor(Shape{widths_[l + 1]}), false);
  }
}

std::vector<std::uint64_t> Mlp::architecture() const { return {widths_.begin(), widths_.end()}; }

ad::Var Mlp::forward(ad::Graph&, std::span<const ad::Var> params, ad::Var x) const {
  ad::Var h = x;
  const std::size_t layers = widths_.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    h = ad::add_rowvec(ad::matmul(h, params[2 * l]), params[2 * l + 1]);
    if (l + 1 < layers) h = ad::relu(h);
  }
  return h;
}

// --- ConvNet -----------------------------------------------------------------

ConvNet::ConvNet(ImageGeometry geometry, std::vector<std::size_t> feature_maps)
    : geometry_(geometry), feature_maps_(std::move(feature_maps)) {
  require(feature_maps_.size() == 7, "ConvNet needs 7 feature-map parameters");
  std::size_t h = geometry_.height, w = geometry_.width, c = geometry_.channels;
  for (std::size_t block = 0; block < 4; ++block) {
    require(h >= 3 && w >= 3, "ConvNet input too small for its conv stack");
    add_param(Tensor(Shape{3, 3, c, feature_maps_[block]}), true);
    add_param(Tensor(Shape{feature_maps_[block]}), false);
    h -= 2;
    w -= 2;
    c = feature_maps_[block];
    if (block % 2 == 1) {
      h /= 2;
      w /= 2;
    }
  }
  require(h > 0 && w > 0, "ConvNet input too small for its pooling stack");
  std::size_t fan_in = h * w * c;
  for (std::size_t dense = 4; dense < 7; ++dense) {
    add_param(Tensor(Shape{fan_in, feature_maps_[dense]}), true);
    add_param(Tensor(Shape{feature_maps_[dense]}), false);
    fan_in = feature_maps_[dense];
  }
}

std::vector<std::uint64_t> ConvNet::architecture() const {
  std::vector<std::uint64_t> out{geometry_.height, geometry_.width, geometry_.channels};
  out.insert(out.end(), feature_maps_.begin(), feature_maps_.end());
  return out;
}

ad::Var ConvNet::forward(ad::Graph&, std::span<const ad::Var> params, ad::Var x) const {
  const std::size_t m = x.shape()[0];
  ad::Var h = ad::reshape(x, {m, geometry_.height, geometry_.width, geometry_.channels});
  for (std::size_t block = 0; block < 4; ++block) {
    h = ad::conv2d(h, params[2 * block]);
    const Shape s = h.shape();
    h = ad::reshape(ad::add_rowvec(ad::reshape(h, {s[0] * s[1] * s[2], s[3]}), params[2 * block + 1]), s);
    h = ad::relu(h);
    if (block % 2 == 1) h = ad::max_pool2x2(h);
  }
  h = ad::reshape(h, {m, h.value().size() / m});
  for (std::size_t dense = 0; dense < 3; ++dense) {
    h = ad::add_rowvec(ad::matmul(h, params[8 + 2 * dense]), params[9 + 2 * dense]);
    if (dense < 2) h = ad::relu(h);
  }
  return h;
}

// --- construction --------------------------------------------------------------

void initialize(Classifier& model, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    Tensor& p = model.params()[i];
    if (!model.is_weight()[i]) {
      std::fill(p.data().begin(), p.data().end(), 0.0);
      continue;
    }
    // Linear weights are K x d (fan-in on the last axis); the rest store fan-in first.
    std::size_t fan_in = 1;
    if (model.kind() == "linear") {
      fan_in = p.dim(1);
    } else {
      for (std::size_t a = 0; a + 1 < p.rank(); ++a) fan_in *= p.dim(a);
    }
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (double& v : p.data()) v = dist(rng);
  }
}

std::unique_ptr<Classifier> make_classifier(const std::string& kind, std::span<const std::uint64_t> arch) {
  if (kind == "linear") {
    require(arch.size() == 2, "linear architecture needs {d, K}");
    return std::make_unique<LinearSoftmax>(arch[0], arch[1]);
  }
  if (kind == "mlp") {
    return std::make_unique<Mlp>(std::vector<std::size_t>(arch.begin(), arch.end()));
  }
  if (kind == "convnet") {
    require(arch.size() == 10, "convnet architecture needs {H, W, C, 7 feature maps}");
    return std::make_unique<ConvNet>(ImageGeometry{arch[0], arch[1], arch[2]},
                                     std::vector<std::size_t>(arch.begin() + 3, arch.end()));
  }
  throw ContractError("unknown classifier kind '" + kind + "' (expected linear, mlp, convnet)");
}

// --- evaluation ----------------------------------------------------------------

std::vector<ad::Var> bind_params(ad::Graph& graph, const Classifier& model, bool requires_grad) {
  std::vector<ad::Var> out;
  out.reserve(model.params().size());
  for (const Tensor& p : model.params()) out.push_back(graph.leaf(p, requires_grad));
  return out;
}

ad::Var logits(const Classifier& model, ad::Graph& graph, std::span<const ad::Var> params, ad::Var x) {
  if (x.shape().size() != 2 || x.shape()[1] != model.input_dim()) {
    throw ContractError("model expects inputs (m x " + std::to_string(model.input_dim()) + "), got " +
                        shape_str(x.shape()));
  }
  return model.forward(graph, params, x);
}

ad::Var log_prob(const Classifier& model, ad::Graph& graph, std::span<const ad::Var> params, ad::Var x,
                 std::span<const std::size_t> labels) {
  for (std::size_t y : labels) {
    if (y >= model.num_classes()) throw ContractError("class index " + std::to_string(y) + " out of range");
  }
  return ad::pick(ad::log_softmax(logits(model, graph, params, x)), labels);
}

ad::Var cross_entropy(const Classifier& model, ad::Graph& graph, std::span<const ad::Var> params, ad::Var x,
                      std::span<const std::size_t> labels) {
  ad::Var lp = log_prob(model, graph, params, x, labels);
  return ad::scale(ad::sum(lp), -1.0 / static_cast<double>(labels.size()));
}

Tensor logits(const Classifier& model, const Tensor& x) {
  ad::Graph g;
  ad::NoRecordGuard guard(g);
  auto params = bind_params(g, model, false);
  return logits(model, g, params, g.constant(x)).value();
}

Tensor probabilities(const Classifier& model, const Tensor& x) {
  ad::Graph g;
  ad::NoRecordGuard guard(g);
  auto params = bind_params(g, model, false);
  return ad::exp(ad::log_softmax(logits(model, g, params, g.constant(x)))).value();
}

std::vector<double> log_prob(const Classifier& model, const Tensor& x, std::span<const std::size_t> labels) {
  ad::Graph g;
  ad::NoRecordGuard guard(g);
  auto params = bind_params(g, model, false);
  const Tensor& v = log_prob(model, g, params, g.constant(x), labels).value();
  return {v.data().begin(), v.data().end()};
}

std::vector<double> sample_losses(const Classifier& model, const Tensor& x, std::span<const std::size_t> labels) {
  std::vector<double> out = log_prob(model, x, labels);
  for (double& v : out) v = -v;
  return out;
}

Tensor input_log_prob_grad(const Classifier& model, const Tensor& x, std::span<const std::size_t> labels) {
  ad::Graph g;
  auto params = bind_params(g, model, false);
  ad::Var input = g.leaf(x);
  return ad::gradient(ad::sum(log_prob(model, g, params, input, labels)), input);
}

std::vector<std::size_t> argmax_rows(const Tensor& scores) {
  require(scores.rank() == 2, "argmax_rows needs a matrix");
  std::vector<std::size_t> out(scores.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::span<const double> row = scores.row(i);
    out[i] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

std::vector<std::size_t> predict(const Classifier& model, const Tensor& x) { return argmax_rows(logits(model, x)); }

double accuracy(const Classifier& model, const Tensor& x, std::span<const std::size_t> labels) {
  require(!labels.empty(), "accuracy of an empty set");
  const std::vector<std::size_t> pred = predict(model, x);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += pred[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

// --- checkpoints ---------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'S', 'G', 'R', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
 public:
  Reader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}

  template <typename T>
  T get() {
    T value{};
    read(reinterpret_cast<char*>(&value), sizeof(T));
    return value;
  }

  std::string get_string() {
    const auto n = get<std::uint32_t>();
    if (n > (1u << 20)) fail("string length " + std::to_string(n) + " is implausible");
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }

  void read(char* dst, std::size_t n) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) fail("truncated checkpoint");
    offset_ += n;
  }

  [[noreturn]] void fail(const std::string& why) const {
    throw FormatError(path_ + ": " + why + " at byte offset " + std::to_string(offset_));
  }

 private:
  std::istream& in_;
  std::string path_;
  std::size_t offset_ = 0;
};

}  // namespace

void save_checkpoint(const Classifier& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  put_string(out, model.kind());
  const auto arch = model.architecture();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(arch.size()));
  for (std::uint64_t a : arch) put<std::uint64_t>(out, a);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.metadata().size()));
  for (const auto& [key, value] : model.metadata()) {
    put_string(out, key);
    put_string(out, value);
  }
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.params().size()));
  for (const Tensor& p : model.params()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.rank()));
    for (std::size_t d : p.shape()) put<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(p.data().data()), static_cast<std::streamsize>(p.size() * sizeof(double)));
  }
  if (!out) throw IoError("failed writing checkpoint: " + path);
}

std::unique_ptr<Classifier> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  Reader r(in, path);
  char magic[8];
  r.read(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) r.fail("bad checkpoint magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) r.fail("unsupported checkpoint version " + std::to_string(version));
  const std::string kind = r.get_string();
  const auto n_arch = r.get<std::uint32_t>();
  if (n_arch > 64) r.fail("architecture too long");
  std::vector<std::uint64_t> arch(n_arch);
  for (auto& a : arch) a = r.get<std::uint64_t>();
  std::unique_ptr<Classifier> model = make_classifier(kind, arch);
  const auto n_meta = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string key = r.get_string();
    model->metadata()[key] = r.get_string();
  }
  const auto n_params = r.get<std::uint32_t>();
  if (n_params != model->params().size()) r.fail("parameter count does not match the architecture");
  for (Tensor& p : model->params()) {
    const auto rank = r.get<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint64_t>();
    if (shape != p.shape()) r.fail("parameter shape " + shape_str(shape) + " expected " + shape_str(p.shape()));
    r.read(reinterpret_cast<char*>(p.data().data()), p.size() * sizeof(double));
  }
  return model;
}

}  // namespace sgr::models
