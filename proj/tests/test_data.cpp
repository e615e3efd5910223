// SPDX-FileCopyrightText: Copyright (c) 2026 The sgrlab Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <fstream>

#include "helpers.hpp"
#include "sgr/data.hpp"
#include "sgr/error.hpp"

using namespace sgr;
using namespace sgr::testing;

namespace {

data::Dataset tiny_digits() {
  data::Dataset d;
  d.name = "tiny";
  d.kind = data::DatasetKind::kMnist;
  d.geometry = {4, 3, 1};
  d.num_classes = 10;
  d.images = Tensor(Shape{3, 12});
  for (std::size_t i = 0; i < d.images.size(); ++i) d.images[i] = static_cast<double>((i * 37) % 256) / 255.0;
  d.labels = {3, 0, 9};
  return d;
}

void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_SUITE("data") {
  TEST_CASE("IDX round trip, raw and gzip") {
    const data::Dataset d = tiny_digits();
    for (const std::string ext : {"", ".gz"}) {
      const std::string img = temp_path("rt-images" + ext), lab = temp_path("rt-labels" + ext);
      data::save_idx(d, img, lab);
      const data::Dataset back = data::load_idx(img, lab);
      CHECK(back.images == d.images);
      CHECK(back.labels == d.labels);
      CHECK(back.geometry == d.geometry);
    }
  }

  TEST_CASE("IDX magic numbers and truncation") {
    const std::string img = temp_path("bad-images"), lab = temp_path("bad-labels");
    // Valid header for 2 images of 2x2, but only 5 of 8 pixel bytes.
    write_bytes(img, {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2, 1, 2, 3, 4, 5});
    write_bytes(lab, {0, 0, 8, 1, 0, 0, 0, 2, 1, 1});
    try {
      data::load_idx(img, lab);
      FAIL("expected a format error");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("offset") != std::string::npos);
    }
    write_bytes(img, {0, 0, 8, 1, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2, 1, 2, 3, 4, 5, 6, 7, 8});
    CHECK_THROWS_AS(data::load_idx(img, lab), FormatError);
    write_bytes(img, {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2, 1, 2, 3, 4, 5, 6, 7, 8});
    write_bytes(lab, {0, 0, 8, 1, 0, 0, 0, 3, 1, 1, 1});
    CHECK_THROWS_AS(data::load_idx(img, lab), FormatError);
    CHECK_THROWS_AS(data::load_idx(temp_path("nope-images"), lab), IoError);
  }

  TEST_CASE("bundled MNIST subset header") {
    const data::Dataset train = data::load_mnist(std::string(SGR_SOURCE_DIR) + "/data/mnist", true);
    CHECK(train.size() == 10000);
    CHECK(train.geometry == models::ImageGeometry{28, 28, 1});
    CHECK(train.num_classes == 10);
    double lo = 1.0, hi = 0.0;
    for (double v : train.images.data()) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    CHECK(lo >= 0.0);
    CHECK(hi <= 1.0);
  }

  TEST_CASE("synthetic blobs") {
    const data::Dataset a = data::synthetic_blobs(3, 5, 40, 4.0, 7), b = data::synthetic_blobs(3, 5, 40, 4.0, 7);
    CHECK(a.images == b.images);
    CHECK(a.labels == b.labels);
    std::vector<std::size_t> counts(3, 0);
    for (auto y : a.labels) ++counts[y];
    CHECK(counts == std::vector<std::size_t>{40, 40, 40});
    for (double v : a.images.data()) CHECK((v >= 0.0 && v <= 1.0));
  }

  TEST_CASE("augmentation") {
    const models::ImageGeometry g{6, 5, 3};
    Rng rng = derive_rng(1, 0);
    const Tensor img = uniform_tensor({1, g.dim()}, rng);
    const auto same = data::augment_at(img.row(0), g, data::DatasetKind::kCifar, 4, 4, false);
    CHECK(std::equal(same.begin(), same.end(), img.row(0).begin()));
    const auto once = data::augment_at(img.row(0), g, data::DatasetKind::kCifar, 4, 4, true);
    const auto twice = data::augment_at(once, g, data::DatasetKind::kCifar, 4, 4, true);
    CHECK(std::equal(twice.begin(), twice.end(), img.row(0).begin()));
    for (int t = 0; t < 20; ++t) CHECK(data::augment(img.row(0), g, data::DatasetKind::kMnist, rng).size() == g.dim());
    // Shift right by one: column 0 becomes padding (black for MNIST).
    const models::ImageGeometry m{3, 3, 1};
    const std::vector<double> ones(9, 1.0);
    const auto shifted = data::augment_at(ones, m, data::DatasetKind::kMnist, 4, 3, false);
    CHECK(shifted[0] == 0.0);
    CHECK(shifted[1] == 1.0);
    const auto cifar = data::augment_at(ones, m, data::DatasetKind::kCifar, 4, 3, false);
    CHECK(cifar[0] == 0.5);
  }

  TEST_CASE("MNIST augmentation never flips") {
    const models::ImageGeometry g{1, 9, 1};
    std::vector<double> ramp(9);
    for (std::size_t i = 0; i < 9; ++i) ramp[i] = i / 8.0;
    Rng rng = derive_rng(2, 0);
    for (int t = 0; t < 50; ++t) {
      const auto out = data::augment(ramp, g, data::DatasetKind::kMnist, rng);
      for (std::size_t i = 1; i < 9; ++i)
        if (out[i] > 0 && out[i - 1] > 0) CHECK(out[i] > out[i - 1]);
    }
  }

  TEST_CASE("standardization") {
    const std::vector<double> flat(10, 0.3);
    const auto z = data::standardize(flat);
    for (double v : z.values) CHECK(std::abs(v) < 1e-12);
    Rng rng = derive_rng(3, 0);
    const Tensor img = uniform_tensor({1, 50}, rng);
    const auto s = data::standardize(img.row(0));
    double mu = 0.0, var = 0.0;
    for (double v : s.values) mu += v / 50.0;
    for (double v : s.values) var += (v - mu) * (v - mu) / 50.0;
    CHECK(std::abs(mu) < 1e-10);
    CHECK(std::abs(var - 1.0) < 1e-8);
    const auto again = data::standardize(s.values);
    for (std::size_t i = 0; i < 50; ++i) CHECK(again.values[i] == doctest::Approx(s.values[i]).epsilon(1e-12));
    for (std::size_t i = 0; i < 50; ++i) CHECK(s.values[i] * s.spread + s.offset == doctest::Approx(img[i]));
    CHECK_THROWS_AS(data::parse_standardize("global"), ConfigError);
  }

  TEST_CASE("batches keep labels and pixel inverse") {
    const data::Dataset d = tiny_digits();
    const ModelBatch b = data::make_batch(d, data::Standardize::kPerImage);
    CHECK(b.labels == d.labels);
    const Tensor px = b.pixels();
    for (std::size_t i = 0; i < px.size(); ++i) CHECK(px[i] == doctest::Approx(d.images[i]).epsilon(1e-12));
    const std::uint64_t seed = 5;
    const std::vector<std::size_t> idx{2, 0};
    const ModelBatch a1 = data::make_batch(d, idx, data::Standardize::kPerImage, &seed);
    const ModelBatch a2 = data::make_batch(d, idx, data::Standardize::kPerImage, &seed);
    CHECK(a1.x == a2.x);
    CHECK(a1.labels == std::vector<std::size_t>{9, 3});
  }

  TEST_CASE("data directory override") {
    ::setenv("SGR_DATA_DIR", "/tmp/custom-mnist", 1);
    CHECK(data::data_dir("fallback") == "/tmp/custom-mnist");
    ::unsetenv("SGR_DATA_DIR");
    CHECK(data::data_dir("fallback") == "fallback");
  }
}
