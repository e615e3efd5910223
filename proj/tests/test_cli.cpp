// SPDX-FileCopyrightText: Copyright (c) 2026 The sgrlab Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "sgr/error.hpp"
#include "sgr/experiments.hpp"

using namespace sgr;
using namespace sgr::testing;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

exp::Config synthetic_config(const std::string& out) {
  exp::Config c;
  c.set("dataset", "synthetic");
  c.set("synth_dim", "16");
  c.set("synth_per_class", "40");
  c.set("epochs", "2");
  c.set("augment", "false");
  c.set("hidden", "12");
  c.set("out_dir", out);
  return c;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("config files and overrides") {
    const std::string path = temp_path("run.cfg");
    { std::ofstream(path) << "# comment\nmethod = sgr\nlambda = 1.0  # trailing\n\npert-source = loss_grad_sign\n"; }
    exp::Config c;
    c.load_file(path);
    c.set("lambda", "2");
    const auto s = exp::parse_settings(c, exp::Command::kTrain);
    CHECK(s.train.method == train::Method::kSgr);
    CHECK(s.train.lambda == 2.0);
    CHECK(s.train.source == attacks::Source::kLossGradSign);
    CHECK(c.get("beta") == "0.1");
    CHECK_THROWS_AS(c.set("no_such_key", "1"), ConfigError);
  }

  TEST_CASE("validation lists every problem") {
    exp::Config c;
    c.set("method", "bogus");
    c.set("epochs", "-3");
    c.set("attacks", "fgsm,cw");
    try {
      exp::parse_settings(c, exp::Command::kWhitebox);
      FAIL("expected a config error");
    } catch (const ConfigError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("method") != std::string::npos);
      CHECK(msg.find("epochs") != std::string::npos);
      CHECK(msg.find("cw") != std::string::npos);
      CHECK(msg.find("checkpoint") != std::string::npos);
    }
    exp::Config z;
    z.set("checkpoints", "a,b");
    z.set("zetas", "0,4");
    CHECK_THROWS_AS(exp::parse_settings(z, exp::Command::kLrcSweep), ConfigError);
  }

  TEST_CASE("missing dataset directory is an IO error") {
    exp::Config c;
    c.set("data_dir", "/nonexistent/mnist");
    c.set("out_dir", temp_path("missing_data"));
    CHECK_THROWS_AS(exp::run(c, exp::Command::kTrain), IoError);
  }

  TEST_CASE("trajectory rows") {
    Rng rng = derive_rng(1, 0);
    const models::Mlp mlp = random_mlp({6, 5, 3}, 1);
    const ModelBatch one = pixel_batch(uniform_tensor({1, 6}, rng), {1});
    const auto rows = exp::trajectory(mlp, one, random_tensor({1, 6}, rng), 5.0, 11);
    CHECK(rows.size() == 11);
    CHECK(rows.front()[0] == -5.0);
    CHECK(rows[5][0] == 0.0);
    const Tensor p0 = models::probabilities(mlp, one.x);
    for (std::size_t k = 0; k < 3; ++k) CHECK(rows[5][1 + k] == doctest::Approx(p0[k]).epsilon(1e-15));
    for (const auto& r : rows) CHECK(std::abs(r[1] + r[2] + r[3] - 1.0) < 1e-10);
    CHECK(exp::total_variation(std::vector<double>{0.0, 1.0, 0.5}) == 1.5);
  }

  TEST_CASE("crop and normalize") {
    Rng rng = derive_rng(2, 0);
    const cov::DenseCov c = cov::batch_second_moment(random_tensor({10, 36}, rng));
    const auto full = exp::crop_and_normalize(c, {6, 6, 1}, 0, true);
    CHECK(kernels::max_abs(full.matrix) == doctest::Approx(1.0).epsilon(1e-15));
    const auto crop = exp::crop_and_normalize(c, {6, 6, 1}, 2, false);
    CHECK(crop.dim() == 4);
    CHECK(crop.matrix.at(0, 0) == c.matrix.at(14, 14));
    const auto delta = exp::crop_and_normalize(cov::DenseCov::identity(9, 4.0), {3, 3, 1}, 0, true);
    CHECK(delta.matrix == cov::DenseCov::identity(9).matrix);
  }

  TEST_CASE("train, evaluate and rerun on synthetic data") {
    const std::string out = temp_path("synthetic_run");
    std::filesystem::remove_all(out);
    exp::Config clean = synthetic_config(out);
    clean.set("name", "clean");
    const auto m = exp::run(clean, exp::Command::kTrain);
    CHECK(std::filesystem::exists(out + "/clean.ckpt"));
    CHECK(m.artifacts.size() == 2);
    exp::Config sgr0 = synthetic_config(out);
    sgr0.set("name", "sgr0");
    sgr0.set("method", "sgr");
    sgr0.set("lambda", "0");
    exp::run(sgr0, exp::Command::kTrain);
    // Identical parameters; metadata (name, method) differs by design.
    const auto a = models::load_checkpoint(out + "/clean.ckpt"), b = models::load_checkpoint(out + "/sgr0.ckpt");
    CHECK(a->params() == b->params());

    exp::Config wb = synthetic_config(out);
    wb.set("checkpoints", out + "/clean.ckpt," + out + "/sgr0.ckpt");
    wb.set("eps", "0,32");
    wb.set("attacks", "rand,fgsm,pgd,deepfool");
    exp::run(wb, exp::Command::kWhitebox);
    const std::string first = slurp(out + "/whitebox.csv");
    CHECK(first.rfind("model,eps,test,rand,fgsm,pgd,fool\n", 0) == 0);
    std::istringstream lines(first);
    std::string header, row;
    std::getline(lines, header);
    std::getline(lines, row);  // clean at eps 0: rand column equals test column
    std::vector<std::string> cells;
    std::stringstream rs(row);
    for (std::string cell; std::getline(rs, cell, ',');) cells.push_back(cell);
    CHECK(cells[2] == cells[3]);
    exp::run(wb, exp::Command::kWhitebox);
    CHECK(slurp(out + "/whitebox.csv") == first);

    exp::Config tr = synthetic_config(out);
    tr.set("checkpoints", out + "/clean.ckpt," + out + "/sgr0.ckpt");
    tr.set("transfer_iter", "10");
    exp::run(tr, exp::Command::kTransfer);
    const std::string transfer = slurp(out + "/transfer.csv");
    CHECK(std::count(transfer.begin(), transfer.end(), '\n') == 3);

    exp::Config lrc = synthetic_config(out);
    lrc.set("synth_dim", "16");
    lrc.set("checkpoints", out + "/clean.ckpt");
    lrc.set("zetas", "1,2");
    lrc.set("lrc_eps", "0,0.5");
    const auto lm = exp::run(lrc, exp::Command::kLrcSweep);
    CHECK(slurp(lm.artifacts[0].path).rfind("model,zeta,eps,accuracy\n", 0) == 0);

    exp::Config tj = synthetic_config(out);
    tj.set("checkpoint", out + "/clean.ckpt");
    tj.set("sample", "3");
    const auto tm = exp::run(tj, exp::Command::kTrajectory);
    CHECK(slurp(tm.artifacts[0].path).rfind("t,p0,p1,p2\n", 0) == 0);

    exp::Config ec = synthetic_config(out);
    ec.set("checkpoint", out + "/clean.ckpt");
    ec.set("export_size", "50");
    const auto em = exp::run(ec, exp::Command::kExportCov);
    CHECK(em.artifacts.size() == 2);
    CHECK(em.results.count("decay_length") == 1);
    const std::string manifest = slurp(em.path);
    CHECK(manifest.find("\"run_id\"") != std::string::npos);
    CHECK(manifest.find(em.artifacts[0].path) != std::string::npos);
  }
}
