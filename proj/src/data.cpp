// SPDX-FileCopyrightText: Copyright (c) 2026 The sgrlab Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0
#include "sgr/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <memory>

#include "sgr/error.hpp"

namespace sgr::data {

Dataset Dataset::head(std::size_t n) const {
  n = std::min(n, size());
  Dataset out = *this;
  out.images = images.rows(0, n);
  out.labels.resize(n);
  return out;
}

// --- IDX ----------------------------------------------------------------------

namespace {

struct GzCloser {
  void operator()(gzFile f) const { gzclose(f); }
};
using GzHandle = std::unique_ptr<std::remove_pointer_t<gzFile>, GzCloser>;

class IdxReader {
 public:
  explicit IdxReader(const std::string& path) : path_(path) {
    if (!std::filesystem::exists(path)) throw IoError("no such file: " + path);
    file_.reset(gzopen(path.c_str(), "rb"));
    if (!file_) throw IoError("cannot open " + path);
  }

  void read(void* dst, std::size_t n) {
    auto* out = static_cast<unsigned char*>(dst);
    std::size_t done = 0;
    while (done < n) {
      const auto chunk = static_cast<unsigned>(std::min<std::size_t>(n - done, 1u << 30));
      const int got = gzread(file_.get(), out + done, chunk);
      if (got <= 0) {
        throw FormatError(path_ + ": truncated IDX file at byte offset " + std::to_string(offset_ + done) +
                          " (wanted " + std::to_string(n) + " bytes)");
      }
      done += static_cast<std::size_t>(got);
    }
    offset_ += n;
  }

  std::uint32_t be32() {
    std::array<unsigned char, 4> b{};
    read(b.data(), 4);
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
  }

  std::size_t offset() const { return offset_; }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  GzHandle file_;
  std::size_t offset_ = 0;
};

void write_be32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<unsigned char>((v >> shift) & 0xFF));
}

void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
  const bool gz = path.size() > 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
  GzHandle f(gzopen(path.c_str(), gz ? "wb9" : "wbT"));
  if (!f) throw IoError("cannot write " + path);
  std::size_t done = 0;
  while (done < bytes.size()) {
    const auto chunk = static_cast<unsigned>(std::min<std::size_t>(bytes.size() - done, 1u << 30));
    if (gzwrite(f.get(), bytes.data() + done, chunk) <= 0) throw IoError("failed writing " + path);
    done += chunk;
  }
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  IdxReader img(images_path);
  const std::uint32_t img_magic = img.be32();
  if (img_magic != 0x00000803) {
    throw FormatError(images_path + ": bad image magic " + std::to_string(img_magic) + " at byte offset 0");
  }
  const std::uint32_t n = img.be32(), rows = img.be32(), cols = img.be32();
  if (n == 0 || rows == 0 || cols == 0 || static_cast<std::uint64_t>(n) * rows * cols > (1ull << 34)) {
    throw FormatError(images_path + ": implausible header dimensions at byte offset 4");
  }

  IdxReader lab(labels_path);
  const std::uint32_t lab_magic = lab.be32();
  if (lab_magic != 0x00000801) {
    throw FormatError(labels_path + ": bad label magic " + std::to_string(lab_magic) + " at byte offset 0");
  }
  const std::uint32_t n_labels = lab.be32();
  if (n_labels != n) {
    throw FormatError(labels_path + ": label count " + std::to_string(n_labels) + " differs from image count " +
                      std::to_string(n) + " at byte offset 4");
  }

  const std::size_t d = static_cast<std::size_t>(rows) * cols;
  std::vector<unsigned char> pixels(static_cast<std::size_t>(n) * d);
  img.read(pixels.data(), pixels.size());
  std::vector<unsigned char> raw_labels(n);
  lab.read(raw_labels.data(), raw_labels.size());

  Dataset out;
  out.name = std::filesystem::path(images_path).filename().string();
  out.kind = DatasetKind::kMnist;
  out.geometry = ImageGeometry{rows, cols, 1};
  out.images = Tensor(Shape{n, d});
  for (std::size_t i = 0; i < pixels.size(); ++i) out.images[i] = static_cast<double>(pixels[i]) / 255.0;
  out.labels.assign(raw_labels.begin(), raw_labels.end());
  std::size_t top = 0;
  for (std::size_t y : out.labels) top = std::max(top, y);
  out.num_classes = std::max<std::size_t>(top + 1, 10);
  return out;
}

void save_idx(const Dataset& dataset, const std::string& images_path, const std::string& labels_path) {
  require(dataset.geometry.channels == 1, "IDX export supports single-channel images only");
  std::vector<unsigned char> img;
  write_be32(img, 0x00000803);
  write_be32(img, static_cast<std::uint32_t>(dataset.size()));
  write_be32(img, static_cast<std::uint32_t>(dataset.geometry.height));
  write_be32(img, static_cast<std::uint32_t>(dataset.geometry.width));
  for (double p : dataset.images.data()) {
    img.push_back(static_cast<unsigned char>(std::lround(std::clamp(p, 0.0, 1.0) * 255.0)));
  }
  write_bytes(images_path, img);

  std::vector<unsigned char> lab;
  write_be32(lab, 0x00000801);
  write_be32(lab, static_cast<std::uint32_t>(dataset.size()));
  for (std::size_t y : dataset.labels) lab.push_back(static_cast<unsigned char>(y));
  write_bytes(labels_path, lab);
}

Dataset load_mnist(const std::string& dir, bool train) {
  const std::string prefix = train ? "train" : "t10k";
  auto pick = [&](const std::string& stem) {
    const std::filesystem::path base = std::filesystem::path(dir) / (prefix + stem);
    if (std::filesystem::exists(base)) return base.string();
    return base.string() + ".gz";
  };
  Dataset out = load_idx(pick("-images-idx3-ubyte"), pick("-labels-idx1-ubyte"));
  out.name = train ? "mnist-train" : "mnist-test";
  return out;
}

std::string data_dir(const std::string& fallback) {
  const char* env = std::getenv("SGR_DATA_DIR");
  return env != nullptr && *env != '\0' ? std::string(env) : fallback;
}

// --- synthetic -------------------------------------------------------------------

Dataset synthetic_blobs(std::size_t classes, std::size_t dim, std::size_t per_class, double separation,
                        std::uint64_t seed) {
  if (classes < 2) throw ContractError("synthetic_blobs needs at least two classes");
  require(dim > 0 && per_class > 0, "synthetic_blobs needs positive dimension and class size");
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  // Centers: random unit directions scaled so neighbouring centers sit `separation` noise widths apart.
  // The noise width is chosen so that every blob fits inside [0, 1].
  const double width = 1.0 / (2.0 * separation + 8.0);
  std::vector<std::vector<double>> centers(classes, std::vector<double>(dim));
  for (auto& c : centers) {
    double norm = 0.0;
    for (double& v : c) {
      v = normal(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : c) v = 0.5 + 0.5 * separation * width * v / norm;
  }

  Dataset out;
  out.name = "synthetic-blobs";
  out.kind = DatasetKind::kSynthetic;
  out.geometry = ImageGeometry{1, dim, 1};
  out.num_classes = classes;
  out.images = Tensor(Shape{classes * per_class, dim});
  for (std::size_t k = 0; k < classes; ++k)
    for (std::size_t i = 0; i < per_class; ++i) {
      const std::size_t row = k * per_class + i;
      for (std::size_t j = 0; j < dim; ++j) {
        out.images[row * dim + j] = std::clamp(centers[k][j] + width * normal(rng), 0.0, 1.0);
      }
      out.labels.push_back(k);
    }
  return out;
}

// --- augmentation / standardization ------------------------------------------------

std::vector<double> augment_at(std::span<const double> image, const ImageGeometry& geometry, DatasetKind kind,
                               std::size_t offset_y, std::size_t offset_x, bool flip) {
  constexpr std::size_t kPad = 4;
  require(offset_y <= 2 * kPad && offset_x <= 2 * kPad, "crop offset must lie in [0, 8]");
  require(image.size() == geometry.dim(), "augment: image does not match geometry");
  // CIFAR-style data is padded with the mid-range value (0 after a -0.5 shift).
  const double pad_value = kind == DatasetKind::kCifar ? 0.5 : 0.0;
  const long h = static_cast<long>(geometry.height), w = static_cast<long>(geometry.width);
  const std::size_t c = geometry.channels;
  std::vector<double> out(image.size());
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      const long sy = y + static_cast<long>(offset_y) - static_cast<long>(kPad);
      const long cx = flip ? w - 1 - x : x;
      const long sx = cx + static_cast<long>(offset_x) - static_cast<long>(kPad);
      const bool inside = sy >= 0 && sy < h && sx >= 0 && sx < w;
      for (std::size_t ch = 0; ch < c; ++ch) {
        out[static_cast<std::size_t>(y * w + x) * c + ch] =
            inside ? image[static_cast<std::size_t>(sy * w + sx) * c + ch] : pad_value;
      }
    }
  }
  return out;
}

std::vector<double> augment(std::span<const double> image, const ImageGeometry& geometry, DatasetKind kind, Rng& rng) {
  if (kind == DatasetKind::kSynthetic) return {image.begin(), image.end()};
  std::uniform_int_distribution<std::size_t> offset(0, 8);
  const std::size_t oy = offset(rng), ox = offset(rng);
  // MNIST digits are chirality-sensitive; only CIFAR-style images are flipped.
  bool flip = false;
  if (kind == DatasetKind::kCifar) flip = std::bernoulli_distribution(0.5)(rng);
  return augment_at(image, geometry, kind, oy, ox, flip);
}

Standardize parse_standardize(const std::string& name) {
  if (name == "per_image") return Standardize::kPerImage;
  if (name == "none") return Standardize::kNone;
  throw ConfigError("unknown standardization policy '" + name + "' (expected per_image, none)");
}

Standardized standardize(std::span<const double> image, Standardize policy) {
  Standardized out;
  out.values.assign(image.begin(), image.end());
  if (policy == Standardize::kNone || image.empty()) return out;
  double mean = 0.0;
  for (double v : image) mean += v;
  mean /= static_cast<double>(image.size());
  double var = 0.0;
  for (double v : image) var += (v - mean) * (v - mean);
  var /= static_cast<double>(image.size());
  out.offset = mean;
  out.spread = std::sqrt(std::max(var, 1e-8));
  for (double& v : out.values) v = (v - mean) / out.spread;
  return out;
}

ModelBatch make_batch(const Dataset& dataset, std::span<const std::size_t> indices, Standardize policy,
                      const std::uint64_t* augment_seed) {
  const std::size_t d = dataset.geometry.dim();
  ModelBatch out;
  out.x = Tensor(Shape{indices.size(), d});
  out.pixel_lo = 0.0;
  out.pixel_hi = 1.0;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t i = indices[k];
    require(i < dataset.size(), "sample index out of range");
    std::span<const double> img = dataset.image(i);
    std::vector<double> aug;
    if (augment_seed != nullptr) {
      Rng rng = derive_rng(*augment_seed, i, kStreamAugment);
      aug = augment(img, dataset.geometry, dataset.kind, rng);
      img = aug;
    }
    Standardized s = standardize(img, policy);
    std::copy(s.values.begin(), s.values.end(), out.x.data().begin() + static_cast<std::ptrdiff_t>(k * d));
    out.labels.push_back(dataset.labels[i]);
    out.offset.push_back(s.offset);
    out.spread.push_back(s.spread);
    out.ids.push_back(i);
  }
  return out;
}

ModelBatch make_batch(const Dataset& dataset, Standardize policy) {
  std::vector<std::size_t> all(dataset.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return make_batch(dataset, all, policy);
}

Tensor model_inputs(const Dataset& dataset, Standardize policy) { return make_batch(dataset, policy).x; }

}  // namespace sgr::data
