// SPDX-FileCopyrightText: Copyright (c) 2026 The sgrlab Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0
#include "sgr/experiments.hpp"

#include <fmt/format.h>

#include <Eigen/Core>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "sgr/error.hpp"

#ifndef SGR_DEFAULT_DATA_DIR
#define SGR_DEFAULT_DATA_DIR "data/mnist"
#endif

namespace sgr::exp {

namespace fs = std::filesystem;

const std::vector<KeySpec>& known_keys() {
  static const std::vector<KeySpec> keys = {
      {"seed", "0", "master seed for initialization, shuffling, augmentation and attacks"},
      {"out_dir", ".", "directory receiving checkpoints, CSVs and the manifest"},
      {"threads", "1", "worker threads for linear algebra"},
      {"name", "", "run name used for output files (default derived from the method)"},
      {"dataset", "mnist", "mnist | synthetic"},
      {"data_dir", "", "IDX directory (default $SGR_DATA_DIR, then the bundled subset)"},
      {"train_size", "10000", "training samples used (0 = all)"},
      {"test_size", "2000", "test samples used (0 = all)"},
      {"synth_classes", "3", "synthetic blobs: number of classes"},
      {"synth_dim", "16", "synthetic blobs: input dimension"},
      {"synth_per_class", "200", "synthetic blobs: samples per class (split 3:1 train/test)"},
      {"synth_separation", "4", "synthetic blobs: center spacing in noise widths"},
      {"model", "mlp", "linear | mlp | convnet"},
      {"hidden", "256,256", "MLP hidden widths"},
      {"conv_maps", "32,32,64,64,200,200,10", "convnet feature maps (last entry = classes)"},
      {"method", "clean", "clean | wdecay | adv_augment | gn | sgr"},
      {"lambda", "0", "regularization strength (noise-to-signal ratio)"},
      {"beta", "0.1", "EWMA weight of the newest batch covariance"},
      {"batch_size", "128", "minibatch size"},
      {"epochs", "10", "training epochs"},
      {"lr", "0.001", "Adam learning rate"},
      {"weight_decay", "0", "coefficient of the squared weight norm"},
      {"pert_source", "loss_grad_sign", "loss_grad | loss_grad_sign | fgsm | pgd | lrc | dataset_cov"},
      {"pert_eps", "32", "epsilon (1/255 units) of fgsm/pgd covariance sources"},
      {"pert_iter", "10", "PGD iterations of the pgd covariance source"},
      {"mix", "0.5", "adv_augment mixture weight of the attacked batch"},
      {"adv_attack", "fgsm", "adv_augment attack: rand | fgm | fgsm | pgd"},
      {"adv_eps", "32", "adv_augment epsilon in 1/255 units"},
      {"cov_update_every", "1", "covariance refresh period in steps (0 = never)"},
      {"cov_mode", "dense", "dense | radial"},
      {"cov_cutoff", "0", "radial stencil cutoff radius (0 = automatic)"},
      {"uncentered", "false", "add the uncentered-perturbation correction"},
      {"logit_form", "false", "evaluate the penalty through logit gradients"},
      {"augment", "true", "pad-4 random-crop augmentation of training images"},
      {"standardize", "per_image", "per_image | none"},
      {"data_constant", "", "override of the dataset variance constant c"},
      {"cov_preload", "none", "none | lrc | dataset: initial covariance estimate"},
      {"lrc_zeta", "8", "decay length of the lrc covariance source / preload"},
      {"max_steps", "0", "stop training after this many steps (0 = no limit)"},
      {"checkpoint", "", "checkpoint to evaluate"},
      {"checkpoints", "", "comma-separated checkpoints to evaluate"},
      {"names", "", "comma-separated display names for the checkpoints"},
      {"attacks", "rand,fgm,fgsm,pgd,deepfool", "white-box attack columns"},
      {"eps", "32", "comma-separated attack strengths in 1/255 units"},
      {"pgd_iter", "10", "PGD iterations in white-box tables"},
      {"transfer_iter", "40", "PGD iterations in transfer matrices"},
      {"pgd_random_start", "true", "PGD starts uniformly inside the epsilon ball"},
      {"eval_size", "0", "test samples evaluated (0 = all loaded)"},
      {"zetas", "1,2,4,8,16", "LRC decay lengths"},
      {"lrc_eps", "0,0.1,0.3,0.5,0.7", "LRC strengths in standardized units"},
      {"worst_of", "20", "LRC draws per sample"},
      {"cov_source", "pgd", "export-cov source: loss_grad | loss_grad_sign | fgsm | pgd | deepfool | dataset"},
      {"export_size", "1000", "training samples used to estimate exported covariances"},
      {"crop", "0", "center crop (pixels per side) of the exported dense matrix (0 = full)"},
      {"normalize", "true", "rescale the exported dense matrix to max |entry| = 1"},
      {"sample", "0", "trajectory: test sample index"},
      {"trajectory_attack", "pgd", "trajectory: attack providing the direction"},
      {"trajectory_eps", "32", "trajectory: attack epsilon in 1/255 units"},
      {"t_max", "5", "trajectory: grid covers [-t_max, t_max]"},
      {"t_steps", "101", "trajectory: grid points"},
  };
  return keys;
}

namespace {

const KeySpec* find_key(const std::string& key) {
  for (const auto& k : known_keys())
    if (key == k.key) return &k;
  return nullptr;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string normalize_key(std::string key) {
  std::replace(key.begin(), key.end(), '-', '_');
  return key;
}

}  // namespace

void Config::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path);
  std::string line;
  std::vector<std::string> problems;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      problems.push_back(fmt::format("{}:{}: expected key = value", path, lineno));
      continue;
    }
    const std::string key = normalize_key(trim(line.substr(0, eq)));
    if (find_key(key) == nullptr) {
      problems.push_back(fmt::format("{}:{}: unknown key '{}'", path, lineno, key));
      continue;
    }
    values_[key] = trim(line.substr(eq + 1));
  }
  if (!problems.empty()) {
    std::string msg = "invalid config file:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ConfigError(msg);
  }
}

void Config::set(const std::string& key, const std::string& value) {
  const std::string k = normalize_key(key);
  if (find_key(k) == nullptr) throw ConfigError("unknown configuration key '" + key + "'");
  values_[k] = value;
}

std::string Config::get(const std::string& key) const {
  const std::string k = normalize_key(key);
  auto it = values_.find(k);
  if (it != values_.end()) return it->second;
  const KeySpec* spec = find_key(k);
  if (spec == nullptr) throw ConfigError("unknown configuration key '" + key + "'");
  return spec->fallback;
}

std::map<std::string, std::string> Config::snapshot() const {
  std::map<std::string, std::string> out;
  for (const auto& k : known_keys()) out[k.key] = get(k.key);
  return out;
}

Command parse_command(const std::string& name) {
  if (name == "train") return Command::kTrain;
  if (name == "whitebox") return Command::kWhitebox;
  if (name == "transfer") return Command::kTransfer;
  if (name == "lrc-sweep" || name == "lrc_sweep") return Command::kLrcSweep;
  if (name == "export-cov" || name == "export_cov") return Command::kExportCov;
  if (name == "trajectory") return Command::kTrajectory;
  throw ConfigError("unknown command '" + name + "' (valid: train, whitebox, transfer, lrc-sweep, export-cov, trajectory)");
}

std::string to_string(Command command) {
  switch (command) {
    case Command::kTrain: return "train";
    case Command::kWhitebox: return "whitebox";
    case Command::kTransfer: return "transfer";
    case Command::kLrcSweep: return "lrc-sweep";
    case Command::kExportCov: return "export-cov";
    case Command::kTrajectory: return "trajectory";
  }
  return "?";
}

// --- settings -----------------------------------------------------------------------

namespace {

class Parser {
 public:
  explicit Parser(const Config& c) : config_(c) {}

  std::string str(const std::string& key) { return config_.get(key); }

  double real(const std::string& key) {
    const std::string v = str(key);
    try {
      std::size_t used = 0;
      const double out = std::stod(v, &used);
      if (used != v.size() || !std::isfinite(out)) throw std::invalid_argument(v);
      return out;
    } catch (const std::exception&) {
      fail(key, "expected a number, got '" + v + "'");
      return 0.0;
    }
  }

  std::uint64_t count(const std::string& key) {
    const std::string v = str(key);
    try {
      if (v.empty() || v[0] == '-') throw std::invalid_argument(v);
      std::size_t used = 0;
      const unsigned long long out = std::stoull(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return out;
    } catch (const std::exception&) {
      fail(key, "expected a nonnegative integer, got '" + v + "'");
      return 0;
    }
  }

  bool flag(const std::string& key) {
    const std::string v = str(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    fail(key, "expected true or false, got '" + v + "'");
    return false;
  }

  std::vector<std::string> list(const std::string& key) {
    std::vector<std::string> out;
    std::stringstream ss(str(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  std::vector<double> reals(const std::string& key) {
    std::vector<double> out;
    for (const auto& item : list(key)) {
      try {
        std::size_t used = 0;
        const double v = std::stod(item, &used);
        if (used != item.size() || !std::isfinite(v)) throw std::invalid_argument(item);
        out.push_back(v);
      } catch (const std::exception&) {
        fail(key, "expected numbers, got '" + item + "'");
      }
    }
    return out;
  }

  std::vector<std::size_t> counts(const std::string& key) {
    std::vector<std::size_t> out;
    for (const auto& item : list(key)) {
      try {
        std::size_t used = 0;
        if (item[0] == '-') throw std::invalid_argument(item);
        const unsigned long long v = std::stoull(item, &used);
        if (used != item.size() || v == 0) throw std::invalid_argument(item);
        out.push_back(v);
      } catch (const std::exception&) {
        fail(key, "expected positive integers, got '" + item + "'");
      }
    }
    return out;
  }

  template <typename Fn>
  auto choice(const std::string& key, Fn&& parse) -> decltype(parse(std::string())) {
    try {
      return parse(str(key));
    } catch (const ConfigError& e) {
      fail(key, e.what());
      return {};
    }
  }

  void fail(const std::string& key, const std::string& msg) { problems_.push_back(key + ": " + msg); }
  void check(bool ok, const std::string& key, const std::string& msg) {
    if (!ok) fail(key, msg);
  }

  void finish() const {
    if (problems_.empty()) return;
    std::string msg = "invalid configuration:";
    for (const auto& p : problems_) msg += "\n  " + p;
    throw ConfigError(msg);
  }

 private:
  const Config& config_;
  std::vector<std::string> problems_;
};

}  // namespace

Settings parse_settings(const Config& config, Command command) {
  Parser p(config);
  Settings s;
  s.command = command;
  s.seed = p.count("seed");
  s.out_dir = p.str("out_dir");
  s.threads = static_cast<int>(p.count("threads"));
  p.check(s.threads >= 1, "threads", "must be >= 1");
  s.name = p.str("name");

  s.dataset = p.str("dataset");
  p.check(s.dataset == "mnist" || s.dataset == "synthetic", "dataset", "expected mnist or synthetic");
  s.data_dir = p.str("data_dir");
  s.train_size = p.count("train_size");
  s.test_size = p.count("test_size");
  s.synth_classes = p.count("synth_classes");
  s.synth_dim = p.count("synth_dim");
  s.synth_per_class = p.count("synth_per_class");
  s.synth_separation = p.real("synth_separation");
  if (s.dataset == "synthetic") {
    p.check(s.synth_classes >= 2, "synth_classes", "must be >= 2");
    p.check(s.synth_dim >= 1, "synth_dim", "must be >= 1");
    p.check(s.synth_per_class >= 4, "synth_per_class", "must be >= 4");
    p.check(s.synth_separation > 0.0, "synth_separation", "must be > 0");
  }

  s.model = p.str("model");
  p.check(s.model == "linear" || s.model == "mlp" || s.model == "convnet", "model", "expected linear, mlp or convnet");
  s.hidden = p.counts("hidden");
  s.conv_maps = p.counts("conv_maps");
  if (s.model == "convnet") p.check(s.conv_maps.size() == 7, "conv_maps", "needs seven entries");

  train::TrainConfig& t = s.train;
  t.method = p.choice("method", train::parse_method);
  t.lambda = p.real("lambda");
  t.beta = p.real("beta");
  t.batch_size = p.count("batch_size");
  t.epochs = p.count("epochs");
  t.lr = p.real("lr");
  t.weight_decay = p.real("weight_decay");
  t.source = p.choice("pert_source", attacks::parse_source);
  t.mix = p.real("mix");
  t.cov_update_every = p.count("cov_update_every");
  const std::string mode = p.str("cov_mode");
  p.check(mode == "dense" || mode == "radial", "cov_mode", "expected dense or radial");
  t.cov_mode = mode == "radial" ? cov::CovMode::kRadial : cov::CovMode::kDense;
  if (const std::size_t cutoff = p.count("cov_cutoff"); cutoff > 0) t.radial_cutoff = cutoff;
  t.uncentered = p.flag("uncentered");
  t.logit_form = p.flag("logit_form");
  t.augment = p.flag("augment");
  t.standardize = p.choice("standardize", data::parse_standardize);
  if (const std::string c = p.str("data_constant"); !c.empty()) t.data_constant = p.real("data_constant");
  t.max_steps = p.count("max_steps");
  t.seed = s.seed;
  s.cov_preload = p.str("cov_preload");
  p.check(s.cov_preload == "none" || s.cov_preload == "lrc" || s.cov_preload == "dataset", "cov_preload",
          "expected none, lrc or dataset");
  s.preload_zeta = p.real("lrc_zeta");
  p.check(s.preload_zeta > 0.0, "lrc_zeta", "must be > 0");

  // The training attack doubles as the covariance source attack and the adv_augment attack.
  if (t.method == train::Method::kAdvAugment) {
    t.attack.kind = p.choice("adv_attack", attacks::parse_kind);
    t.attack.epsilon = p.real("adv_eps");
  } else {
    t.attack.kind = t.source == attacks::Source::kPgd ? attacks::Kind::kPgd : attacks::Kind::kFgsm;
    t.attack.epsilon = p.real("pert_eps");
  }
  t.attack.nb_iter = p.count("pert_iter");
  t.attack.decay_length = s.preload_zeta;
  if (command == Command::kTrain) {
    try {
      t.validate();
    } catch (const ConfigError& e) {
      std::string msg = e.what();
      const auto nl = msg.find('\n');
      std::stringstream rest(nl == std::string::npos ? msg : msg.substr(nl + 1));
      std::string line;
      while (std::getline(rest, line)) p.fail("training", trim(line));
    }
  }

  const std::string one = p.str("checkpoint");
  for (const auto& c : p.list("checkpoints")) s.checkpoints.push_back(c);
  if (!one.empty()) s.checkpoints.insert(s.checkpoints.begin(), one);
  s.names = p.list("names");
  for (const auto& a : p.list("attacks")) {
    try {
      const attacks::Kind k = attacks::parse_kind(a);
      if (k == attacks::Kind::kLrc) throw ConfigError("lrc is evaluated by lrc-sweep, not whitebox");
      s.attacks.push_back(k);
    } catch (const ConfigError& e) {
      p.fail("attacks", e.what());
    }
  }
  s.eps = p.reals("eps");
  for (double e : s.eps) p.check(e >= 0.0, "eps", "strengths must be >= 0");
  s.pgd_iter = p.count("pgd_iter");
  s.transfer_iter = p.count("transfer_iter");
  p.check(s.pgd_iter >= 1, "pgd_iter", "must be >= 1");
  p.check(s.transfer_iter >= 1, "transfer_iter", "must be >= 1");
  s.pgd_random_start = p.flag("pgd_random_start");
  s.eval_size = p.count("eval_size");
  s.zetas = p.reals("zetas");
  for (double z : s.zetas) p.check(z > 0.0, "zetas", "decay lengths must be > 0");
  s.lrc_eps = p.reals("lrc_eps");
  for (double e : s.lrc_eps) p.check(e >= 0.0, "lrc_eps", "strengths must be >= 0");
  s.worst_of = p.count("worst_of");
  p.check(s.worst_of >= 1, "worst_of", "must be >= 1");
  s.cov_source = p.str("cov_source");
  {
    static const std::vector<std::string> valid = {"loss_grad", "loss_grad_sign", "fgsm", "pgd", "deepfool", "dataset"};
    p.check(std::find(valid.begin(), valid.end(), s.cov_source) != valid.end(), "cov_source",
            "expected loss_grad, loss_grad_sign, fgsm, pgd, deepfool or dataset");
  }
  s.export_size = p.count("export_size");
  s.crop = p.count("crop");
  s.normalize = p.flag("normalize");
  s.sample = p.count("sample");
  s.trajectory_attack = p.choice("trajectory_attack", attacks::parse_kind);
  s.trajectory_eps = p.real("trajectory_eps");
  s.t_max = p.real("t_max");
  s.t_steps = p.count("t_steps");
  p.check(s.t_max > 0.0, "t_max", "must be > 0");
  p.check(s.t_steps >= 2, "t_steps", "must be >= 2");

  switch (command) {
    case Command::kTrain: break;
    case Command::kWhitebox:
      p.check(!s.checkpoints.empty(), "checkpoint", "whitebox needs at least one checkpoint");
      p.check(!s.eps.empty(), "eps", "needs at least one strength");
      break;
    case Command::kTransfer:
      p.check(s.checkpoints.size() >= 2, "checkpoints", "transfer needs at least two checkpoints");
      p.check(s.eps.size() == 1, "eps", "transfer takes exactly one strength");
      break;
    case Command::kLrcSweep:
      p.check(!s.checkpoints.empty(), "checkpoints", "lrc-sweep needs at least one checkpoint");
      p.check(!s.zetas.empty(), "zetas", "needs at least one decay length");
      p.check(!s.lrc_eps.empty(), "lrc_eps", "needs at least one strength");
      break;
    case Command::kExportCov:
      p.check(!s.checkpoints.empty() || s.cov_source == "dataset", "checkpoint",
              "export-cov needs a checkpoint unless cov_source = dataset");
      break;
    case Command::kTrajectory:
      p.check(s.checkpoints.size() == 1, "checkpoint", "trajectory needs exactly one checkpoint");
      p.check(s.trajectory_attack != attacks::Kind::kLrc, "trajectory_attack", "lrc has no single direction");
      break;
  }
  if (!s.names.empty()) {
    p.check(s.names.size() == s.checkpoints.size(), "names", "needs one name per checkpoint");
  }
  p.finish();
  return s;
}

// --- data / models --------------------------------------------------------------------

Splits load_data(const Settings& s) {
  Splits out;
  if (s.dataset == "synthetic") {
    data::Dataset all = data::synthetic_blobs(s.synth_classes, s.synth_dim, s.synth_per_class, s.synth_separation,
                                              s.seed + 7919);
    // Interleave classes 3:1 into train and test.
    std::vector<std::size_t> tr, te;
    for (std::size_t i = 0; i < all.size(); ++i) (i % 4 == 3 ? te : tr).push_back(i);
    auto pick = [&](const std::vector<std::size_t>& idx, const std::string& name) {
      data::Dataset d = all;
      d.name = name;
      d.images = Tensor(Shape{idx.size(), all.geometry.dim()});
      d.labels.clear();
      for (std::size_t k = 0; k < idx.size(); ++k) {
        std::span<const double> row = all.image(idx[k]);
        std::copy(row.begin(), row.end(), d.images.data().begin() + static_cast<std::ptrdiff_t>(k * row.size()));
        d.labels.push_back(all.labels[idx[k]]);
      }
      return d;
    };
    out.train = pick(tr, "synthetic-train");
    out.test = pick(te, "synthetic-test");
  } else {
    const std::string dir = s.data_dir.empty() ? data::data_dir(SGR_DEFAULT_DATA_DIR) : s.data_dir;
    if (!fs::is_directory(dir)) throw IoError("dataset directory not found: " + dir);
    out.train = data::load_mnist(dir, true);
    out.test = data::load_mnist(dir, false);
  }
  if (s.train_size > 0) out.train = out.train.head(s.train_size);
  if (s.test_size > 0) out.test = out.test.head(s.test_size);
  return out;
}

std::unique_ptr<models::Classifier> build_model(const Settings& s, const data::Dataset& train) {
  const std::size_t d = train.geometry.dim(), k = train.num_classes;
  std::unique_ptr<models::Classifier> model;
  if (s.model == "linear") {
    model = std::make_unique<models::LinearSoftmax>(d, k);
  } else if (s.model == "mlp") {
    std::vector<std::size_t> widths{d};
    widths.insert(widths.end(), s.hidden.begin(), s.hidden.end());
    widths.push_back(k);
    model = std::make_unique<models::Mlp>(widths);
  } else {
    std::vector<std::size_t> maps = s.conv_maps;
    maps.back() = k;
    model = std::make_unique<models::ConvNet>(train.geometry, maps);
  }
  models::initialize(*model, s.seed);
  return model;
}

std::string model_name(const models::Classifier& model, const std::string& path) {
  auto it = model.metadata().find("name");
  if (it != model.metadata().end() && !it->second.empty()) return it->second;
  return fs::path(path).stem().string();
}

std::string csv_number(double v) { return fmt::format("{}", v); }

// --- evaluations ------------------------------------------------------------------------

std::vector<double> whitebox_row(const models::Classifier& model, const ModelBatch& batch,
                                 std::span<const attacks::Kind> kinds, double eps, std::size_t pgd_iter,
                                 bool random_start, std::uint64_t seed) {
  std::vector<double> row{models::accuracy(model, batch.x, batch.labels)};
  for (attacks::Kind k : kinds) {
    attacks::AttackConfig a;
    a.kind = k;
    a.epsilon = eps;
    a.nb_iter = pgd_iter;
    a.random_start = random_start;
    a.seed = seed;
    if (k == attacks::Kind::kDeepFool) {
      row.push_back(attacks::deepfool_rho(batch, attacks::deepfool(model, batch, a.overshoot, a.max_iter).inputs));
    } else {
      row.push_back(attacks::attack_accuracy(model, batch, a));
    }
  }
  return row;
}

std::vector<std::vector<double>> transfer_matrix(std::span<const models::Classifier* const> models,
                                                 const ModelBatch& batch, double eps, std::size_t nb_iter,
                                                 bool random_start, std::uint64_t seed) {
  const std::size_t k = models.size();
  std::vector<std::vector<double>> out(k, std::vector<double>(k, 0.0));
  for (std::size_t j = 0; j < k; ++j) {
    const Tensor adv = attacks::pgd(*models[j], batch, eps / 255.0, nb_iter, eps / 5.0 / 255.0, random_start, seed);
    for (std::size_t i = 0; i < k; ++i) out[i][j] = models::accuracy(*models[i], adv, batch.labels);
  }
  return out;
}

std::vector<std::vector<double>> trajectory(const models::Classifier& model, const ModelBatch& one,
                                            const Tensor& perturbation, double t_max, std::size_t steps) {
  require(one.size() == 1 && perturbation.size() == one.dim(), "trajectory needs one sample and its perturbation");
  require(steps >= 2, "trajectory needs at least two grid points");
  const std::size_t d = one.dim();
  Tensor points(Shape{steps, d});
  std::vector<double> ts(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    // Symmetric grid built from integer offsets so the midpoint is exactly zero.
    const double t = t_max * (2.0 * static_cast<double>(s) - static_cast<double>(steps - 1)) /
                     static_cast<double>(steps - 1);
    ts[s] = t;
    for (std::size_t j = 0; j < d; ++j) points[s * d + j] = one.x[j] + t * perturbation[j];
  }
  const Tensor probs = models::probabilities(model, points);
  std::vector<std::vector<double>> rows(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    rows[s].push_back(ts[s]);
    std::span<const double> p = probs.row(s);
    rows[s].insert(rows[s].end(), p.begin(), p.end());
  }
  return rows;
}

double total_variation(std::span<const double> values) {
  double tv = 0.0;
  for (std::size_t i = 1; i < values.size(); ++i) tv += std::abs(values[i] - values[i - 1]);
  return tv;
}

cov::DenseCov crop_and_normalize(const cov::DenseCov& c, const models::ImageGeometry& g, std::size_t crop,
                                 bool normalize) {
  require(c.dim() == g.dim(), "crop_and_normalize: geometry does not match the matrix");
  std::vector<std::size_t> keep;
  if (crop == 0 || (crop >= g.height && crop >= g.width)) {
    for (std::size_t i = 0; i < c.dim(); ++i) keep.push_back(i);
  } else {
    const std::size_t ch = std::min(crop, g.height), cw = std::min(crop, g.width);
    const std::size_t y0 = (g.height - ch) / 2, x0 = (g.width - cw) / 2;
    for (std::size_t y = y0; y < y0 + ch; ++y)
      for (std::size_t x = x0; x < x0 + cw; ++x)
        for (std::size_t k = 0; k < g.channels; ++k) keep.push_back((y * g.width + x) * g.channels + k);
  }
  const std::size_t n = keep.size(), d = c.dim();
  cov::DenseCov out{Tensor(Shape{n, n})};
  double top = 0.0;
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) {
      const double v = c.matrix[keep[a] * d + keep[b]];
      out.matrix[a * n + b] = v;
      top = std::max(top, std::abs(v));
    }
  if (normalize && top > 0.0)
    for (double& v : out.matrix.data()) v /= top;
  return out;
}

// --- commands ---------------------------------------------------------------------------

namespace {

std::string now_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string run_id(const std::string& command, const std::map<std::string, std::string>& snapshot) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](const std::string& s) {
    for (unsigned char ch : s) {
      h ^= ch;
      h *= 1099511628211ull;
    }
    h ^= 0xFF;
    h *= 1099511628211ull;
  };
  mix(command);
  for (const auto& [k, v] : snapshot) {
    mix(k);
    mix(v);
  }
  return fmt::format("{}-{:016x}", command, h);
}

class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::string& header) : path_(path), out_(path), header_(header) {
    if (!out_) throw IoError("cannot write " + path);
    out_ << header << '\n';
  }
  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << '\n';
  }
  Artifact close() {
    out_.close();
    if (!out_) throw IoError("failed writing " + path_);
    return {path_, "csv", header_};
  }

 private:
  std::string path_;
  std::ofstream out_;
  std::string header_;
};

struct Loaded {
  std::vector<std::unique_ptr<models::Classifier>> models;
  std::vector<std::string> names;
  std::vector<const models::Classifier*> ptrs() const {
    std::vector<const models::Classifier*> out;
    for (const auto& m : models) out.push_back(m.get());
    return out;
  }
};

Loaded load_models(const Settings& s, const data::Dataset& reference) {
  Loaded out;
  for (std::size_t i = 0; i < s.checkpoints.size(); ++i) {
    auto model = models::load_checkpoint(s.checkpoints[i]);
    if (model->input_dim() != reference.geometry.dim()) {
      throw ContractError(fmt::format("{}: model expects {} inputs but the dataset has {}", s.checkpoints[i],
                                      model->input_dim(), reference.geometry.dim()));
    }
    if (!out.models.empty() && model->num_classes() != out.models.front()->num_classes()) {
      throw ContractError(s.checkpoints[i] + ": class count differs from the other checkpoints");
    }
    out.names.push_back(s.names.empty() ? model_name(*model, s.checkpoints[i]) : s.names[i]);
    out.models.push_back(std::move(model));
  }
  return out;
}

ModelBatch eval_batch(const Settings& s, const data::Dataset& test) {
  const data::Dataset d = s.eval_size > 0 ? test.head(s.eval_size) : test;
  return data::make_batch(d, s.train.standardize);
}

std::string default_run_name(const Settings& s) {
  if (!s.name.empty()) return s.name;
  const train::TrainConfig& t = s.train;
  switch (t.method) {
    case train::Method::kClean: return "clean";
    case train::Method::kWdecay: return "wdecay_" + csv_number(t.weight_decay);
    case train::Method::kAdvAugment: return "adv_" + attacks::to_string(t.attack.kind);
    case train::Method::kGn: return "gn_" + csv_number(t.lambda);
    case train::Method::kSgr: return "sgr_" + attacks::to_string(t.source) + "_" + csv_number(t.lambda);
  }
  return "run";
}

Tensor centered(Tensor x) {
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += x[i * d + j] / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) x[i * d + j] -= mean[j];
  return x;
}

void run_train(const Settings& s, Manifest& m, const LogFn& log) {
  Splits data = load_data(s);
  auto model = build_model(s, data.train);
  train::TrainConfig config = s.train;
  if (config.method == train::Method::kSgr && s.cov_preload != "none") {
    const Tensor inputs = data::model_inputs(data.train, config.standardize);
    const bool lrc = s.cov_preload == "lrc";
    if (config.cov_mode == cov::CovMode::kDense) {
      config.preload_dense = lrc ? cov::radial_to_dense(cov::exponential_covfun(data.train.geometry, s.preload_zeta))
                                 : train::dataset_covariance(inputs);
    } else {
      config.preload_radial = lrc ? cov::exponential_covfun(data.train.geometry, s.preload_zeta)
                                  : cov::radial_estimate(centered(inputs), data.train.geometry);
    }
  }
  const std::string name = default_run_name(s);
  model->metadata()["name"] = name;
  model->metadata()["method"] = train::to_string(config.method);
  model->metadata()["lambda"] = csv_number(config.lambda);
  model->metadata()["dataset"] = s.dataset;
  model->metadata()["seed"] = std::to_string(s.seed);

  train::TrainResult r = train::train(data.train, data.test, std::move(model), config, [&](const train::LogRow& row) {
    if (log) {
      log(fmt::format("epoch {} step {} loss {:.5f} omega {:.5f} sigma_t {:.5g} test_acc {:.4f}", row.epoch, row.step,
                      row.loss, row.omega, row.sigma_t, row.test_acc));
    }
  });
  for (const auto& w : r.warnings) {
    m.warnings.push_back(w);
    if (log) log("warning: " + w);
  }
  const std::string ckpt = (fs::path(s.out_dir) / (name + ".ckpt")).string();
  models::save_checkpoint(*r.model, ckpt);
  m.artifacts.push_back({ckpt, "checkpoint", "SGRCKPT/1"});
  const std::string log_path = (fs::path(s.out_dir) / (name + ".train_log.csv")).string();
  train::write_train_log(r.log, log_path);
  m.artifacts.push_back({log_path, "csv", "epoch,step,loss,omega,sigma_t,test_acc"});
  m.results["name"] = name;
  m.results["final_test_acc"] = csv_number(r.log.back().test_acc);
  m.results["steps"] = std::to_string(r.log.back().step);
  m.results["adam"] = "beta1=0.9 beta2=0.999 eps=1e-08";
  if (config.method == train::Method::kSgr) {
    m.results["data_constant"] = csv_number(r.data_constant);
    m.results["final_avg_diag"] = csv_number(r.log.back().avg_diag);
  }
}

void run_whitebox(const Settings& s, Manifest& m, const LogFn& log) {
  const Splits data = load_data(s);
  const Loaded loaded = load_models(s, data.test);
  const ModelBatch batch = eval_batch(s, data.test);
  std::string header = "model,eps,test";
  for (auto k : s.attacks) header += "," + std::string(k == attacks::Kind::kDeepFool ? "fool" : attacks::to_string(k));
  CsvWriter csv((fs::path(s.out_dir) / "whitebox.csv").string(), header);
  for (std::size_t i = 0; i < loaded.models.size(); ++i) {
    for (double eps : s.eps) {
      const auto row = whitebox_row(*loaded.models[i], batch, s.attacks, eps, s.pgd_iter, s.pgd_random_start, s.seed);
      std::vector<std::string> cells{loaded.names[i], csv_number(eps)};
      for (double v : row) cells.push_back(csv_number(v));
      csv.row(cells);
      if (log) log(fmt::format("{} eps {}: {}", loaded.names[i], eps, fmt::join(cells.begin() + 2, cells.end(), " ")));
    }
  }
  m.artifacts.push_back(csv.close());
}

void run_transfer(const Settings& s, Manifest& m, const LogFn& log) {
  const Splits data = load_data(s);
  const Loaded loaded = load_models(s, data.test);
  const ModelBatch batch = eval_batch(s, data.test);
  const auto ptrs = loaded.ptrs();
  const auto matrix = transfer_matrix(ptrs, batch, s.eps.front(), s.transfer_iter, s.pgd_random_start, s.seed);
  std::string header = "model";
  for (const auto& n : loaded.names) header += "," + n;
  CsvWriter csv((fs::path(s.out_dir) / "transfer.csv").string(), header);
  for (std::size_t i = 0; i < matrix.size(); ++i) {
    std::vector<std::string> cells{loaded.names[i]};
    for (double v : matrix[i]) cells.push_back(csv_number(v));
    csv.row(cells);
    if (log) log(fmt::format("{}: {}", loaded.names[i], fmt::join(cells.begin() + 1, cells.end(), " ")));
  }
  m.artifacts.push_back(csv.close());
}

void run_lrc_sweep(const Settings& s, Manifest& m, const LogFn& log) {
  const Splits data = load_data(s);
  const Loaded loaded = load_models(s, data.test);
  const ModelBatch batch = eval_batch(s, data.test);
  const auto ptrs = loaded.ptrs();
  CsvWriter csv((fs::path(s.out_dir) / "lrc_sweep.csv").string(), "model,zeta,eps,accuracy");
  std::vector<std::vector<std::string>> rows;
  for (double zeta : s.zetas) {
    const attacks::LrcSampler sampler(data.test.geometry, zeta);
    const auto acc = attacks::lrc_accuracy(ptrs, batch, sampler, s.worst_of, s.lrc_eps, s.seed);
    for (std::size_t i = 0; i < ptrs.size(); ++i)
      for (std::size_t e = 0; e < s.lrc_eps.size(); ++e)
        rows.push_back({loaded.names[i], csv_number(zeta), csv_number(s.lrc_eps[e]), csv_number(acc[i][e])});
    if (log) log(fmt::format("zeta {} done", zeta));
  }
  std::stable_sort(rows.begin(), rows.end(), [&](const auto& a, const auto& b) {
    const auto ia = std::find(loaded.names.begin(), loaded.names.end(), a[0]) - loaded.names.begin();
    const auto ib = std::find(loaded.names.begin(), loaded.names.end(), b[0]) - loaded.names.begin();
    return ia < ib;
  });
  for (const auto& r : rows) csv.row(r);
  m.artifacts.push_back(csv.close());
}

void run_export_cov(const Settings& s, Manifest& m, const LogFn& log) {
  const Splits data = load_data(s);
  const data::Dataset subset = s.export_size > 0 ? data.train.head(s.export_size) : data.train;
  const ModelBatch batch = data::make_batch(subset, s.train.standardize);
  Tensor xi;
  if (s.cov_source == "dataset") {
    xi = centered(batch.x);
  } else {
    const Loaded loaded = load_models(s, data.train);
    const models::Classifier& model = *loaded.models.front();
    const double eps = s.eps.empty() ? 32.0 : s.eps.front();
    if (s.cov_source == "deepfool") {
      xi = kernels::sub(attacks::deepfool(model, batch).inputs, batch.x);
    } else {
      attacks::SourceConfig src;
      src.source = attacks::parse_source(s.cov_source);
      src.attack.kind = src.source == attacks::Source::kPgd ? attacks::Kind::kPgd : attacks::Kind::kFgsm;
      src.attack.epsilon = eps;
      src.attack.nb_iter = s.pgd_iter;
      src.attack.random_start = s.pgd_random_start;
      src.attack.seed = s.seed;
      xi = attacks::perturbations_for_cov(model, batch, src);
    }
  }
  const cov::DenseCov dense = cov::batch_second_moment(xi);
  const cov::RadialCovFun radial = cov::radial_estimate(xi, data.train.geometry);
  const std::string dense_path = (fs::path(s.out_dir) / ("cov_" + s.cov_source + "_dense.csv")).string();
  const cov::DenseCov shown = crop_and_normalize(dense, data.train.geometry, s.crop, s.normalize);
  cov::write_dense_csv(shown, dense_path);
  std::string dense_header = "c0";
  if (shown.dim() > 1) dense_header += ",...,c" + std::to_string(shown.dim() - 1);
  m.artifacts.push_back({dense_path, "csv", dense_header});
  const std::string radial_path = (fs::path(s.out_dir) / ("cov_" + s.cov_source + "_radial.csv")).string();
  cov::write_radial_csv(radial, radial_path);
  m.artifacts.push_back({radial_path, "csv", "channel_pair,r,value,count"});
  const double decay = cov::decay_length(radial);
  m.results["decay_length"] = csv_number(decay);
  m.results["avg_diag"] = csv_number(dense.avg_diag());
  m.results["samples"] = std::to_string(batch.size());
  if (log) log(fmt::format("{} covariance: decay length {}, avg diag {}", s.cov_source, decay, dense.avg_diag()));
}

void run_trajectory(const Settings& s, Manifest& m, const LogFn& log) {
  const Splits data = load_data(s);
  const Loaded loaded = load_models(s, data.test);
  if (s.sample >= data.test.size()) {
    throw ContractError(fmt::format("sample {} is outside the test set of {} images", s.sample, data.test.size()));
  }
  const std::vector<std::size_t> idx{s.sample};
  const ModelBatch one = data::make_batch(data.test, idx, s.train.standardize);
  attacks::AttackConfig a;
  a.kind = s.trajectory_attack;
  a.epsilon = s.trajectory_eps;
  a.nb_iter = s.pgd_iter;
  a.random_start = s.pgd_random_start;
  a.seed = s.seed;
  const models::Classifier& model = *loaded.models.front();
  const Tensor adv = attacks::run_attack(model, one, a);
  const auto rows = trajectory(model, one, kernels::sub(adv, one.x), s.t_max, s.t_steps);
  std::string header = "t";
  for (std::size_t k = 0; k < model.num_classes(); ++k) header += ",p" + std::to_string(k);
  CsvWriter csv((fs::path(s.out_dir) / fmt::format("trajectory_{}.csv", s.sample)).string(), header);
  for (const auto& r : rows) {
    std::vector<std::string> cells;
    for (double v : r) cells.push_back(csv_number(v));
    csv.row(cells);
  }
  m.artifacts.push_back(csv.close());
  std::vector<double> own;
  for (const auto& r : rows) own.push_back(r[1 + one.labels.front()]);
  m.results["true_label"] = std::to_string(one.labels.front());
  m.results["true_class_total_variation"] = csv_number(total_variation(own));
  if (log) log(fmt::format("sample {} (label {}): total variation {}", s.sample, one.labels.front(), m.results["true_class_total_variation"]));
}

void write_manifest(const Manifest& m) {
  nlohmann::ordered_json j;
  j["schema"] = "sgrlab-manifest/1";
  j["run_id"] = m.run_id;
  j["command"] = m.command;
  j["seed"] = m.seed;
  j["started"] = m.started;
  j["finished"] = m.finished;
  j["config"] = m.config;
  auto& arts = j["artifacts"] = nlohmann::ordered_json::array();
  for (const auto& a : m.artifacts) arts.push_back({{"path", a.path}, {"kind", a.kind}, {"schema", a.schema}});
  j["results"] = m.results;
  j["warnings"] = m.warnings;
  std::ofstream out(m.path);
  if (!out) throw IoError("cannot write " + m.path);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + m.path);
}

}  // namespace

Manifest run(const Config& config, Command command, const LogFn& log) {
  const Settings s = parse_settings(config, command);
  Eigen::setNbThreads(s.threads);
  std::error_code ec;
  fs::create_directories(s.out_dir, ec);
  if (!fs::is_directory(s.out_dir)) throw IoError("cannot create output directory " + s.out_dir);

  Manifest m;
  m.command = to_string(command);
  m.seed = s.seed;
  m.config = config.snapshot();
  m.run_id = run_id(m.command, m.config);
  m.started = now_utc();
  switch (command) {
    case Command::kTrain: run_train(s, m, log); break;
    case Command::kWhitebox: run_whitebox(s, m, log); break;
    case Command::kTransfer: run_transfer(s, m, log); break;
    case Command::kLrcSweep: run_lrc_sweep(s, m, log); break;
    case Command::kExportCov: run_export_cov(s, m, log); break;
    case Command::kTrajectory: run_trajectory(s, m, log); break;
  }
  m.finished = now_utc();
  std::string stem = m.command;
  if (command == Command::kTrain) stem = m.results["name"];
  m.path = (fs::path(s.out_dir) / (stem + ".manifest.json")).string();
  write_manifest(m);
  return m;
}

}  // namespace sgr::exp
