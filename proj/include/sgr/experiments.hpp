// SPDX-FileCopyrightText: Copyright (c) 2026 The sgrlab Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "sgr/attacks.hpp"
#include "sgr/data.hpp"
#include "sgr/models.hpp"
#include "sgr/training.hpp"

namespace sgr::exp {

struct KeySpec {
  const char* key;
  const char* fallback;
  const char* help;
};

/// Every recognised configuration key with its default and help text.
const std::vector<KeySpec>& known_keys();

/// Flat key = value store. Later assignments win; lookups fall back to defaults.
class Config {
 public:
  /// Lines of `key = value`; `#` starts a comment; blank lines ignored.
  void load_file(const std::string& path);
  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  /// Explicit value or the registered default.
  std::string get(const std::string& key) const;
  const std::map<std::string, std::string>& explicit_values() const { return values_; }
  /// Every known key with its effective value.
  std::map<std::string, std::string> snapshot() const;

 private:
  std::map<std::string, std::string> values_;
};

enum class Command { kTrain, kWhitebox, kTransfer, kLrcSweep, kExportCov, kTrajectory };

Command parse_command(const std::string& name);
std::string to_string(Command command);

struct Settings {
  Command command = Command::kTrain;
  std::uint64_t seed = 0;
  std::string out_dir;
  int threads = 1;
  std::string name;

  std::string dataset;
  std::string data_dir;
  std::size_t train_size = 0;
  std::size_t test_size = 0;
  std::size_t synth_classes = 0;
  std::size_t synth_dim = 0;
  std::size_t synth_per_class = 0;
  double synth_separation = 0.0;

  std::string model;
  std::vector<std::size_t> hidden;
  std::vector<std::size_t> conv_maps;
  train::TrainConfig train;
  std::string cov_preload;
  double preload_zeta = 8.0;

  std::vector<std::string> checkpoints;
  std::vector<std::string> names;
  std::vector<attacks::Kind> attacks;
  std::vector<double> eps;
  std::size_t pgd_iter = 10;
  std::size_t transfer_iter = 40;
  bool pgd_random_start = true;
  std::size_t eval_size = 0;

  std::vector<double> zetas;
  std::vector<double> lrc_eps;
  std::size_t worst_of = 20;

  std::string cov_source;
  std::size_t export_size = 0;
  std::size_t crop = 0;
  bool normalize = true;

  std::size_t sample = 0;
  attacks::Kind trajectory_attack = attacks::Kind::kPgd;
  double trajectory_eps = 32.0;
  double t_max = 5.0;
  std::size_t t_steps = 101;
};

/// Parses and validates every key for the given command, reporting all problems in one ConfigError.
Settings parse_settings(const Config& config, Command command);

struct Artifact {
  std::string path;
  std::string kind;    // checkpoint | csv
  std::string schema;  // CSV header or checkpoint format tag
};

struct Manifest {
  std::string run_id;
  std::string command;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> config;
  std::vector<Artifact> artifacts;
  std::map<std::string, std::string> results;
  std::vector<std::string> warnings;
  std::string started;
  std::string finished;
  std::string path;  // where the manifest itself was written
};

using LogFn = std::function<void(const std::string&)>;

/// Runs one command end to end: loads data, writes CSVs / checkpoints and a JSON manifest.
Manifest run(const Config& config, Command command, const LogFn& log = {});

// Building blocks used by the commands and the acceptance suite.

struct Splits {
  data::Dataset train;
  data::Dataset test;
};

Splits load_data(const Settings& settings);
std::unique_ptr<models::Classifier> build_model(const Settings& settings, const data::Dataset& train);
std::string model_name(const models::Classifier& model, const std::string& path);

/// Columns test, then one per attack (deepfool reports rho).
std::vector<double> whitebox_row(const models::Classifier& model, const ModelBatch& batch,
                                 std::span<const attacks::Kind> kinds, double eps, std::size_t pgd_iter,
                                 bool random_start, std::uint64_t seed);

/// accuracy[i][j]: model i on PGD samples crafted against model j.
std::vector<std::vector<double>> transfer_matrix(std::span<const models::Classifier* const> models,
                                                 const ModelBatch& batch, double eps, std::size_t nb_iter,
                                                 bool random_start, std::uint64_t seed);

/// Rows t, then softmax activations phi(x + t xi), t on an even grid over [-t_max, t_max].
std::vector<std::vector<double>> trajectory(const models::Classifier& model, const ModelBatch& one,
                                            const Tensor& perturbation, double t_max, std::size_t steps);

/// Sum of |p(t_{i+1}) - p(t_i)| along a column.
double total_variation(std::span<const double> values);

/// Symmetric center crop (crop x crop pixels, all channels) and optional max-abs rescaling.
cov::DenseCov crop_and_normalize(const cov::DenseCov& c, const models::ImageGeometry& geometry, std::size_t crop,
                                 bool normalize);

std::string csv_number(double v);

}  // namespace sgr::exp
