// SPDX-FileCopyrightText: Copyright (c) 2026 The sgrlab Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstring>
#include <string>
#include <vector>

#include "sgr/sgr.h"

TEST_SUITE("capi") {
  TEST_CASE("status names and errors") {
    CHECK(std::string(sgr_status_name(SGR_ERR_CONFIG)) == "config");
    sgr_config* c = nullptr;
    REQUIRE(sgr_config_create(&c) == SGR_OK);
    CHECK(sgr_config_set(c, "no_such_key", "1") == SGR_ERR_CONFIG);
    CHECK(std::string(sgr_last_error()).find("no_such_key") != std::string::npos);
    CHECK(sgr_config_set(nullptr, "seed", "1") == SGR_ERR_CONTRACT);
    CHECK(sgr_config_set(c, "epochs", "-1") == SGR_OK);
    CHECK(sgr_config_validate(c, SGR_CMD_TRAIN) == SGR_ERR_CONFIG);
    sgr_config_destroy(c);
  }

  TEST_CASE("config values and key registry") {
    sgr_config* c = nullptr;
    REQUIRE(sgr_config_create(&c) == SGR_OK);
    REQUIRE(sgr_config_set(c, "lambda", "0.5") == SGR_OK);
    size_t needed = 0;
    CHECK(sgr_config_get(c, "lambda", nullptr, 0, &needed) == SGR_OK);
    CHECK(needed == 4);
    char small[2];
    CHECK(sgr_config_get(c, "lambda", small, sizeof small, &needed) == SGR_ERR_CAPACITY);
    char buf[16];
    CHECK(sgr_config_get(c, "lambda", buf, sizeof buf, nullptr) == SGR_OK);
    CHECK(std::string(buf) == "0.5");
    CHECK(sgr_config_key_count() > 40);
    CHECK(sgr_config_key_name(sgr_config_key_count()) == nullptr);
    bool seen = false;
    for (size_t i = 0; i < sgr_config_key_count(); ++i) seen |= std::string(sgr_config_key_name(i)) == "pert_source";
    CHECK(seen);
    sgr_config_destroy(c);
  }

  TEST_CASE("datasets and models") {
    const std::string dir = std::string(SGR_SOURCE_DIR) + "/data/mnist/";
    sgr_dataset* d = nullptr;
    REQUIRE(sgr_dataset_load((dir + "t10k-images-idx3-ubyte.gz").c_str(), (dir + "t10k-labels-idx1-ubyte.gz").c_str(),
                             &d) == SGR_OK);
    size_t n = 0, h = 0, w = 0, ch = 0, k = 0;
    CHECK(sgr_dataset_info(d, &n, &h, &w, &ch, &k) == SGR_OK);
    CHECK(n == 2000);
    CHECK(h == 28);
    CHECK(k == 10);
    sgr_dataset_destroy(d);
    sgr_model* m = nullptr;
    CHECK(sgr_model_load("/nonexistent.ckpt", &m) == SGR_ERR_IO);
    CHECK(m == nullptr);
  }
}
