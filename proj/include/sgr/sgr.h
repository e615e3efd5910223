/* SPDX-FileCopyrightText: Copyright (c) 2026 The sgrlab Authors. All rights reserved.
 * SPDX-License-Identifier: Apache-2.0
 *
 * C interface of libsgr. Every function returns an sgr_status; on failure the
 * message is available from sgr_last_error() on the calling thread until the
 * next call on that thread. Handles are opaque and owned by the caller.
 */
#ifndef SGR_SGR_H
#define SGR_SGR_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(__GNUC__)
#define SGR_API __attribute__((visibility("default")))
#else
#define SGR_API
#endif

typedef enum sgr_status {
  SGR_OK = 0,
  SGR_ERR_CONTRACT = 1,
  SGR_ERR_NUMERIC = 2,
  SGR_ERR_UNSUPPORTED_OP = 3,
  SGR_ERR_FORMAT = 4,
  SGR_ERR_IO = 5,
  SGR_ERR_CONFIG = 6,
  SGR_ERR_DEGENERATE_ESTIMATE = 7,
  SGR_ERR_CAPACITY = 8,
  SGR_ERR_INTERNAL = 9
} sgr_status;

typedef enum sgr_command {
  SGR_CMD_TRAIN = 0,
  SGR_CMD_WHITEBOX = 1,
  SGR_CMD_TRANSFER = 2,
  SGR_CMD_LRC_SWEEP = 3,
  SGR_CMD_EXPORT_COV = 4,
  SGR_CMD_TRAJECTORY = 5
} sgr_command;

typedef struct sgr_config sgr_config;
typedef struct sgr_model sgr_model;
typedef struct sgr_dataset sgr_dataset;

typedef void (*sgr_log_fn)(const char* message, void* user);

SGR_API const char* sgr_version(void);
SGR_API const char* sgr_status_name(sgr_status status);
SGR_API const char* sgr_last_error(void);

/* Configuration: flat key = value store with registered defaults. */
SGR_API sgr_status sgr_config_create(sgr_config** out);
SGR_API void sgr_config_destroy(sgr_config* config);
SGR_API sgr_status sgr_config_load_file(sgr_config* config, const char* path);
SGR_API sgr_status sgr_config_set(sgr_config* config, const char* key, const char* value);
/* Copies the effective value (NUL-terminated) into buf; *needed receives the required size. */
SGR_API sgr_status sgr_config_get(const sgr_config* config, const char* key, char* buf, size_t size, size_t* needed);
SGR_API sgr_status sgr_config_validate(const sgr_config* config, sgr_command command);
SGR_API size_t sgr_config_key_count(void);
SGR_API const char* sgr_config_key_name(size_t index);
SGR_API const char* sgr_config_key_default(size_t index);
SGR_API const char* sgr_config_key_help(size_t index);

/* Runs a command end to end. The manifest path is copied into manifest_path. */
SGR_API sgr_status sgr_run(const sgr_config* config, sgr_command command, sgr_log_fn log, void* user,
                           char* manifest_path, size_t size);

/* Checkpoints. */
SGR_API sgr_status sgr_model_load(const char* path, sgr_model** out);
SGR_API void sgr_model_destroy(sgr_model* model);
SGR_API sgr_status sgr_model_info(const sgr_model* model, size_t* input_dim, size_t* num_classes,
                                  size_t* parameter_count);
/* x holds n rows of model-space inputs; labels receives n predictions. */
SGR_API sgr_status sgr_model_predict(const sgr_model* model, const double* x, size_t n, int32_t* labels);

/* IDX datasets (raw or gzip), pixels in [0, 1]. */
SGR_API sgr_status sgr_dataset_load(const char* images_path, const char* labels_path, sgr_dataset** out);
SGR_API void sgr_dataset_destroy(sgr_dataset* dataset);
SGR_API sgr_status sgr_dataset_info(const sgr_dataset* dataset, size_t* count, size_t* height, size_t* width,
                                    size_t* channels, size_t* num_classes);

#ifdef __cplusplus
}
#endif

#endif /* SGR_SGR_H */
