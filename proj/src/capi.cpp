// SPDX-FileCopyrightText: Copyright (c) 2026 The sgrlab Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0
#include "sgr/sgr.h"

#include <cstring>
#include <new>
#include <string>

#include "sgr/data.hpp"
#include "sgr/error.hpp"
#include "sgr/experiments.hpp"
#include "sgr/models.hpp"

struct sgr_config {
  sgr::exp::Config config;
};

struct sgr_model {
  std::unique_ptr<sgr::models::Classifier> model;
};

struct sgr_dataset {
  sgr::data::Dataset dataset;
};

namespace {

thread_local std::string last_error;

template <typename Fn>
sgr_status guarded(Fn&& fn) {
  last_error.clear();
  try {
    fn();
    return SGR_OK;
  } catch (const sgr::Error& e) {
    last_error = e.what();
    return static_cast<sgr_status>(e.code());
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
    return SGR_ERR_CAPACITY;
  } catch (const std::exception& e) {
    last_error = e.what();
    return SGR_ERR_INTERNAL;
  } catch (...) {
    last_error = "unknown failure";
    return SGR_ERR_INTERNAL;
  }
}

void need(const void* p, const char* what) {
  if (p == nullptr) throw sgr::ContractError(std::string(what) + " must not be null");
}

void copy_out(const std::string& s, char* buf, std::size_t size, std::size_t* needed) {
  if (needed != nullptr) *needed = s.size() + 1;
  if (buf == nullptr && size == 0) return;
  need(buf, "buffer");
  if (size < s.size() + 1) throw sgr::CapacityError("buffer holds " + std::to_string(size) + " bytes, needs " +
                                                    std::to_string(s.size() + 1));
  std::memcpy(buf, s.c_str(), s.size() + 1);
}

sgr::exp::Command command_of(sgr_command c) {
  switch (c) {
    case SGR_CMD_TRAIN: return sgr::exp::Command::kTrain;
    case SGR_CMD_WHITEBOX: return sgr::exp::Command::kWhitebox;
    case SGR_CMD_TRANSFER: return sgr::exp::Command::kTransfer;
    case SGR_CMD_LRC_SWEEP: return sgr::exp::Command::kLrcSweep;
    case SGR_CMD_EXPORT_COV: return sgr::exp::Command::kExportCov;
    case SGR_CMD_TRAJECTORY: return sgr::exp::Command::kTrajectory;
  }
  throw sgr::ContractError("unknown command code " + std::to_string(static_cast<int>(c)));
}

}  // namespace

extern "C" {

const char* sgr_version(void) { return "1.0.0"; }

const char* sgr_status_name(sgr_status status) {
  switch (status) {
    case SGR_OK: return "ok";
    case SGR_ERR_CONTRACT: return "contract";
    case SGR_ERR_NUMERIC: return "numeric";
    case SGR_ERR_UNSUPPORTED_OP: return "unsupported_op";
    case SGR_ERR_FORMAT: return "format";
    case SGR_ERR_IO: return "io";
    case SGR_ERR_CONFIG: return "config";
    case SGR_ERR_DEGENERATE_ESTIMATE: return "degenerate_estimate";
    case SGR_ERR_CAPACITY: return "capacity";
    case SGR_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* sgr_last_error(void) { return last_error.c_str(); }

sgr_status sgr_config_create(sgr_config** out) {
  return guarded([&] {
    need(out, "out");
    *out = new sgr_config();
  });
}

void sgr_config_destroy(sgr_config* config) { delete config; }

sgr_status sgr_config_load_file(sgr_config* config, const char* path) {
  return guarded([&] {
    need(config, "config");
    need(path, "path");
    config->config.load_file(path);
  });
}

sgr_status sgr_config_set(sgr_config* config, const char* key, const char* value) {
  return guarded([&] {
    need(config, "config");
    need(key, "key");
    need(value, "value");
    config->config.set(key, value);
  });
}

sgr_status sgr_config_get(const sgr_config* config, const char* key, char* buf, size_t size, size_t* needed) {
  return guarded([&] {
    need(config, "config");
    need(key, "key");
    copy_out(config->config.get(key), buf, size, needed);
  });
}

sgr_status sgr_config_validate(const sgr_config* config, sgr_command command) {
  return guarded([&] {
    need(config, "config");
    sgr::exp::parse_settings(config->config, command_of(command));
  });
}

size_t sgr_config_key_count(void) { return sgr::exp::known_keys().size(); }

const char* sgr_config_key_name(size_t index) {
  const auto& keys = sgr::exp::known_keys();
  return index < keys.size() ? keys[index].key : nullptr;
}

const char* sgr_config_key_default(size_t index) {
  const auto& keys = sgr::exp::known_keys();
  return index < keys.size() ? keys[index].fallback : nullptr;
}

const char* sgr_config_key_help(size_t index) {
  const auto& keys = sgr::exp::known_keys();
  return index < keys.size() ? keys[index].help : nullptr;
}

sgr_status sgr_run(const sgr_config* config, sgr_command command, sgr_log_fn log, void* user, char* manifest_path,
                   size_t size) {
  return guarded([&] {
    need(config, "config");
    sgr::exp::LogFn fn;
    if (log != nullptr) fn = [log, user](const std::string& msg) { log(msg.c_str(), user); };
    const sgr::exp::Manifest m = sgr::exp::run(config->config, command_of(command), fn);
    if (manifest_path != nullptr) copy_out(m.path, manifest_path, size, nullptr);
  });
}

sgr_status sgr_model_load(const char* path, sgr_model** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    auto m = sgr::models::load_checkpoint(path);
    *out = new sgr_model{std::move(m)};
  });
}

void sgr_model_destroy(sgr_model* model) { delete model; }

sgr_status sgr_model_info(const sgr_model* model, size_t* input_dim, size_t* num_classes, size_t* parameter_count) {
  return guarded([&] {
    need(model, "model");
    if (input_dim != nullptr) *input_dim = model->model->input_dim();
    if (num_classes != nullptr) *num_classes = model->model->num_classes();
    if (parameter_count != nullptr) *parameter_count = model->model->parameter_count();
  });
}

sgr_status sgr_model_predict(const sgr_model* model, const double* x, size_t n, int32_t* labels) {
  return guarded([&] {
    need(model, "model");
    if (n == 0) return;
    need(x, "x");
    need(labels, "labels");
    const std::size_t d = model->model->input_dim();
    sgr::Tensor in(sgr::Shape{n, d});
    std::copy(x, x + n * d, in.data().begin());
    const auto pred = sgr::models::predict(*model->model, in);
    for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int32_t>(pred[i]);
  });
}

sgr_status sgr_dataset_load(const char* images_path, const char* labels_path, sgr_dataset** out) {
  return guarded([&] {
    need(images_path, "images_path");
    need(labels_path, "labels_path");
    need(out, "out");
    auto d = sgr::data::load_idx(images_path, labels_path);
    *out = new sgr_dataset{std::move(d)};
  });
}

void sgr_dataset_destroy(sgr_dataset* dataset) { delete dataset; }

sgr_status sgr_dataset_info(const sgr_dataset* dataset, size_t* count, size_t* height, size_t* width,
                            size_t* channels, size_t* num_classes) {
  return guarded([&] {
    need(dataset, "dataset");
    const auto& d = dataset->dataset;
    if (count != nullptr) *count = d.size();
    if (height != nullptr) *height = d.geometry.height;
    if (width != nullptr) *width = d.geometry.width;
    if (channels != nullptr) *channels = d.geometry.channels;
    if (num_classes != nullptr) *num_classes = d.num_classes;
  });
}

}  // extern "C"
