// SPDX-FileCopyrightText: Copyright (c) 2026 The sgrlab Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0
//
// sgrlab: train and attack classifiers with structured gradient regularization.
#include <CLI11.hpp>

#include <cstdio>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "sgr/sgr.h"

namespace {

struct Command {
  const char* name;
  sgr_command code;
  const char* help;
};

constexpr Command kCommands[] = {
    {"train", SGR_CMD_TRAIN, "train one classifier and write a checkpoint"},
    {"whitebox", SGR_CMD_WHITEBOX, "white-box accuracy table of one or more checkpoints"},
    {"transfer", SGR_CMD_TRANSFER, "source/target accuracy matrix under PGD transfer"},
    {"lrc-sweep", SGR_CMD_LRC_SWEEP, "worst-of-k accuracy under long-range correlated noise"},
    {"export-cov", SGR_CMD_EXPORT_COV, "estimate and export a perturbation covariance"},
    {"trajectory", SGR_CMD_TRAJECTORY, "softmax activations along an attack direction"},
};

std::string kebab(std::string key) {
  for (char& c : key)
    if (c == '_') c = '-';
  return key;
}

void print_log(const char* message, void*) {
  std::fputs(message, stderr);
  std::fputc('\n', stderr);
}

int fail(sgr_status status) {
  std::fprintf(stderr, "error (%s): %s\n", sgr_status_name(status), sgr_last_error());
  return 10 + static_cast<int>(status);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"structured gradient regularization lab"};
  app.set_version_flag("--version", sgr_version());
  app.require_subcommand(1);

  std::string config_file;
  std::map<std::string, std::string> values;
  app.add_option("--config", config_file, "key = value file; command-line options override it");
  app.add_option("--seed", values["seed"], "master seed");
  app.add_option("--out-dir", values["out_dir"], "output directory");
  app.add_option("--threads", values["threads"], "worker threads");

  std::vector<CLI::App*> subs;
  for (const Command& c : kCommands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    sub->fallthrough();
    for (std::size_t i = 0; i < sgr_config_key_count(); ++i) {
      const std::string key = sgr_config_key_name(i);
      if (key == "seed" || key == "out_dir" || key == "threads") continue;
      const std::string def = sgr_config_key_default(i);
      std::string help = sgr_config_key_help(i);
      if (!def.empty()) help += " [" + def + "]";
      sub->add_option("--" + kebab(key), values[key], help);
    }
    subs.push_back(sub);
  }

  CLI11_PARSE(app, argc, argv);

  sgr_config* raw = nullptr;
  if (sgr_status s = sgr_config_create(&raw); s != SGR_OK) return fail(s);
  std::unique_ptr<sgr_config, decltype(&sgr_config_destroy)> config(raw, &sgr_config_destroy);
  if (!config_file.empty()) {
    if (sgr_status s = sgr_config_load_file(config.get(), config_file.c_str()); s != SGR_OK) return fail(s);
  }
  // Options given on the command line override the file.
  auto given = [&](const std::string& key) {
    const std::string flag = "--" + kebab(key);
    for (CLI::App* sub : subs) {
      const CLI::Option* opt = sub->get_option_no_throw(flag);
      if (sub->parsed() && opt != nullptr && opt->count() > 0) return true;
    }
    const CLI::Option* opt = app.get_option_no_throw(flag);
    return opt != nullptr && opt->count() > 0;
  };
  for (const auto& [key, value] : values) {
    if (!given(key)) continue;
    if (sgr_status s = sgr_config_set(config.get(), key.c_str(), value.c_str()); s != SGR_OK) return fail(s);
  }

  for (std::size_t i = 0; i < subs.size(); ++i) {
    if (!subs[i]->parsed()) continue;
    char manifest[4096];
    const sgr_status s = sgr_run(config.get(), kCommands[i].code, &print_log, nullptr, manifest, sizeof manifest);
    if (s != SGR_OK) return fail(s);
    std::printf("%s\n", manifest);
  }
  return 0;
}
