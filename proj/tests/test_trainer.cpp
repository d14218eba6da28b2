/* Copyright 2026 The stabn Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "stabn/errors.hpp"
#include "stabn/trainer.hpp"
#include "test_util.hpp"

using namespace stabn;
using namespace stabn::testutil;

namespace {

ModelConfig micro_config() {
  ModelConfig c;
  c.num_classes = 2;
  c.frames = 2;
  c.input_channels = 1;
  c.height = 8;
  c.width = 8;
  c.stage_channels = {2, 2};
  c.blocks_per_stage = {1, 1};
  c.split_stage = 1;
  c.dropout_rate = 0.0;
  c.batchnorm = true;
  return c;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::string tmp_path(const char* name) {
  return std::string("stabn_test_") + name;
}

}  // namespace

TEST_CASE("joint_loss: uniform logits give 2 ln K and exact additivity") {
  ForwardOutput out;
  out.att_logits = Tensor::zeros({3, 4});
  out.per_logits = Tensor::zeros({3, 4});
  LossBreakdown b = joint_loss(out, {0, 1, 2});
  CHECK(b.l_att == doctest::Approx(std::log(4.0)));
  CHECK(b.l_per == doctest::Approx(std::log(4.0)));
  CHECK(b.l_total == doctest::Approx(2.0 * std::log(4.0)));
  CHECK(b.l_total == b.l_att + b.l_per);

  std::mt19937_64 rng(5);
  out.att_logits = random_tensor({3, 4}, rng);
  out.per_logits = random_tensor({3, 4}, rng);
  b = joint_loss(out, {3, 0, 2});
  CHECK(b.l_total == b.l_att + b.l_per);

  CHECK_THROWS_AS(joint_loss(out, {0, 1, 4}), InputError);
}

TEST_CASE("joint_loss: gradient through a shared input is the sum of the parts") {
  std::mt19937_64 rng(6);
  Tensor x = random_tensor({2, 3}, rng, -1.0, 1.0, /*requires_grad=*/true);
  const std::vector<int> labels = {0, 2};

  auto make_output = [&]() {
    ForwardOutput out;
    out.att_logits = scale(x, 2.0);
    out.per_logits = add_scalar(x, 0.25);
    return out;
  };

  x.zero_grad();
  joint_loss(make_output(), labels).loss.backward();
  std::vector<double> g_total(x.grad(), x.grad() + x.numel());

  x.zero_grad();
  softmax_cross_entropy(scale(x, 2.0), labels).backward();
  std::vector<double> g_att(x.grad(), x.grad() + x.numel());
  x.zero_grad();
  softmax_cross_entropy(add_scalar(x, 0.25), labels).backward();
  std::vector<double> g_per(x.grad(), x.grad() + x.numel());

  for (int64_t i = 0; i < x.numel(); ++i) {
    CHECK(g_total[i] == doctest::Approx(g_att[i] + g_per[i]).epsilon(1e-12));
  }
}

TEST_CASE("sgd_step: plain and weight-decayed single steps") {
  StAbnModel m = build_model(micro_config(), 61);
  for (int64_t i = 0; i < m.classifier.weight.numel(); ++i) m.classifier.weight.data()[i] = 1.0;
  for (int64_t i = 0; i < m.classifier.bias.numel(); ++i) m.classifier.bias.data()[i] = 1.0;

  TrainConfig cfg;
  cfg.momentum = 0.0;

  SUBCASE("no decay: w=1, grad=1, lr=0.1 -> 0.9") {
    cfg.weight_decay = 0.0;
    SgdState st = make_sgd_state(m);
    m.zero_grads();
    add(sum(m.classifier.weight), sum(m.classifier.bias)).backward();
    sgd_step(m, st, cfg, 0.1);
    CHECK(m.classifier.weight.data()[0] == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(m.classifier.bias.data()[0] == doctest::Approx(0.9).epsilon(1e-15));
  }

  SUBCASE("decay 0.0005 applies to the weight but not the bias") {
    cfg.weight_decay = 0.0005;
    SgdState st = make_sgd_state(m);
    m.zero_grads();
    add(sum(m.classifier.weight), sum(m.classifier.bias)).backward();
    sgd_step(m, st, cfg, 0.1);
    CHECK(m.classifier.weight.data()[0] == doctest::Approx(0.89995).epsilon(1e-15));
    CHECK(m.classifier.bias.data()[0] == doctest::Approx(0.9).epsilon(1e-15));
  }
}

TEST_CASE("sgd_step: two identical grads compound through momentum") {
  StAbnModel m = build_model(micro_config(), 67);
  for (int64_t i = 0; i < m.classifier.weight.numel(); ++i) m.classifier.weight.data()[i] = 1.0;
  TrainConfig cfg;
  cfg.momentum = 0.9;
  cfg.weight_decay = 0.0;
  SgdState st = make_sgd_state(m);
  const double lr = 0.1;

  m.zero_grads();
  sum(m.classifier.weight).backward();  // grad = 1 everywhere
  sgd_step(m, st, cfg, lr);
  CHECK(m.classifier.weight.data()[0] == doctest::Approx(1.0 - lr).epsilon(1e-15));

  m.zero_grads();
  sum(m.classifier.weight).backward();
  sgd_step(m, st, cfg, lr);
  // v2 = 0.9*1 + 1 = 1.9; w2 = (1 - lr) - lr*1.9
  CHECK(m.classifier.weight.data()[0] == doctest::Approx(1.0 - lr - lr * 1.9).epsilon(1e-14));
}

TEST_CASE("sgd_step: NaN gradient aborts naming the parameter") {
  StAbnModel m = build_model(micro_config(), 71);
  m.classifier.weight.data()[0] = std::numeric_limits<double>::quiet_NaN();
  TrainConfig cfg;
  SgdState st = make_sgd_state(m);
  m.zero_grads();
  sum(mul(m.classifier.weight, m.classifier.weight)).backward();  // grad = 2w, NaN at [0]
  try {
    sgd_step(m, st, cfg, 0.1);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("classifier.weight") != std::string::npos);
  }
}

TEST_CASE("sgd_step: descent sanity at small lr on a smooth model") {
  ModelConfig mc = micro_config();
  mc.batchnorm = false;  // keep the loss landscape free of running-stat updates
  StAbnModel m = build_model(mc, 73);
  std::mt19937_64 rng(17);
  Tensor video = random_tensor({4, 1, 2, 8, 8}, rng, 0.0, 1.0);
  const std::vector<int> labels = {0, 1, 0, 1};
  std::mt19937_64 drng(0);

  const double before = joint_loss(m.forward(video, false, drng), labels).l_total;
  TrainConfig cfg;
  cfg.momentum = 0.0;
  cfg.weight_decay = 0.0;
  SgdState st = make_sgd_state(m);
  m.zero_grads();
  joint_loss(m.forward(video, true, drng), labels).loss.backward();
  sgd_step(m, st, cfg, 1e-4);
  const double after = joint_loss(m.forward(video, false, drng), labels).l_total;
  CHECK(after < before);
}

TEST_CASE("plateau scheduler: strictly worsening losses decay by exactly 1/10") {
  PlateauScheduler sched(0.01, /*patience=*/1, /*factor=*/0.1, /*min_rel_improvement=*/1e-4);
  CHECK(sched.observe(1.0) == doctest::Approx(0.01));   // first observation seeds best
  CHECK(sched.observe(2.0) == doctest::Approx(0.001));
  CHECK(sched.observe(3.0) == doctest::Approx(0.0001));
  CHECK(sched.observe(4.0) == doctest::Approx(0.00001));
}

TEST_CASE("plateau scheduler: improvement resets the stale counter") {
  PlateauScheduler sched(0.01, /*patience=*/2, 0.1, 1e-4);
  sched.observe(1.0);
  CHECK(sched.observe(1.5) == doctest::Approx(0.01));  // stale 1 of 2
  CHECK(sched.observe(0.5) == doctest::Approx(0.01));  // improved, reset
  CHECK(sched.observe(0.6) == doctest::Approx(0.01));  // stale 1
  CHECK(sched.observe(0.7) == doctest::Approx(0.001));
  // Tiny improvements below the relative threshold do not count.
  PlateauScheduler tight(0.01, 1, 0.1, 1e-4);
  tight.observe(1.0);
  CHECK(tight.observe(1.0 - 1e-6) == doctest::Approx(0.001));
}

TEST_CASE("format_epoch_record: stable field layout") {
  EpochRecord r;
  r.epoch = 3;
  r.lr = 0.01;
  r.train_l_att = 1.5;
  r.train_l_per = 0.5;
  r.train_l_total = 2.0;
  r.val_l_total = 1.75;
  r.val_top1 = 0.875;
  CHECK(format_epoch_record(r) ==
        "epoch=3 lr=0.01 train_l_att=1.5 train_l_per=0.5 train_l_total=2 "
        "val_l_total=1.75 val_top1=0.875");
}

TEST_CASE("checkpoint: save/load/save is byte-identical and forward-exact") {
  StAbnModel m = build_model(micro_config(), 79);
  SgdState st = make_sgd_state(m);
  st.velocity[0][0] = 0.125;  // non-trivial optimizer state
  Checkpoint ck = make_checkpoint(m, &st, 7, 1.25, "12345 67890");

  const std::string p1 = tmp_path("ckpt1.bin"), p2 = tmp_path("ckpt2.bin");
  save_checkpoint(p1, ck);
  Checkpoint loaded = load_checkpoint(p1);
  save_checkpoint(p2, loaded);
  CHECK(slurp(p1) == slurp(p2));
  CHECK(loaded.epoch == 7);
  CHECK(loaded.best_val_loss == 1.25);
  CHECK(loaded.rng_state == "12345 67890");

  StAbnModel rebuilt = model_from_checkpoint(loaded);
  std::mt19937_64 rng(3);
  Tensor video = random_tensor({2, 1, 2, 8, 8}, rng, 0.0, 1.0);
  std::mt19937_64 r1(0), r2(0);
  ForwardOutput a = m.forward(video, false, r1);
  ForwardOutput b = rebuilt.forward(video, false, r2);
  CHECK(max_abs_diff(a.per_logits, b.per_logits) == 0.0);
  CHECK(max_abs_diff(a.att_logits, b.att_logits) == 0.0);

  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("checkpoint: corrupted magic and truncation are format errors") {
  StAbnModel m = build_model(micro_config(), 83);
  Checkpoint ck = make_checkpoint(m, nullptr, 1, 0.5, "");
  const std::string path = tmp_path("ckpt_bad.bin");
  save_checkpoint(path, ck);

  std::string bytes = slurp(path);
  SUBCASE("magic") {
    bytes[0] = 'X';
    std::ofstream(path, std::ios::binary | std::ios::trunc) << bytes;
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  }
  SUBCASE("truncation") {
    std::ofstream(path, std::ios::binary | std::ios::trunc)
        << bytes.substr(0, bytes.size() / 2);
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  }
  SUBCASE("trailing bytes") {
    std::ofstream(path, std::ios::binary | std::ios::trunc) << bytes << "zz";
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  }
  std::remove(path.c_str());
}

TEST_CASE("train: fixed seed reproduces the log bit-for-bit") {
  SynthConfig sc;
  sc.num_classes = 2;
  sc.frames = 4;
  sc.size = 16;
  sc.shape_size = 4;
  sc.window_len = 2;
  sc.samples_train = 16;
  sc.samples_val = 8;
  sc.seed = 7;
  auto [train_set, val_set] = generate(sc);

  ModelConfig mc = micro_config();
  mc.frames = 4;
  mc.height = 16;
  mc.width = 16;
  mc.dropout_rate = 0.5;  // exercise the training-mode rng path

  TrainConfig tc;
  tc.batch_size = 8;
  tc.epochs_max = 2;
  tc.seed = 5;

  auto run = [&]() {
    StAbnModel m = build_model(mc, 91);
    std::ostringstream log;
    TrainResult r = train(m, train_set, val_set, tc, "", &log);
    CHECK(r.epochs_run == 2);
    CHECK(r.log.size() == 2);
    CHECK(r.best_val_loss <= r.log.front().val_l_total);
    return log.str();
  };
  const std::string log1 = run();
  const std::string log2 = run();
  CHECK(log1 == log2);
  CHECK(log1.find("epoch=1 lr=0.01 ") == 0);
}

TEST_CASE("train: writes the best-validation checkpoint") {
  SynthConfig sc;
  sc.num_classes = 2;
  sc.frames = 2;
  sc.size = 8;
  sc.shape_size = 3;
  sc.window_len = 2;
  sc.samples_train = 8;
  sc.samples_val = 4;
  sc.seed = 11;
  auto [train_set, val_set] = generate(sc);

  StAbnModel m = build_model(micro_config(), 97);
  TrainConfig tc;
  tc.batch_size = 4;
  tc.epochs_max = 1;
  tc.seed = 9;
  const std::string path = tmp_path("train_ckpt.bin");
  TrainResult r = train(m, train_set, val_set, tc, path, nullptr);
  Checkpoint ck = load_checkpoint(path);
  CHECK(ck.best_val_loss == r.best_val_loss);
  CHECK(ck.epoch == 1);
  StAbnModel rebuilt = model_from_checkpoint(ck);
  auto [loss_a, top1_a] = evaluate(m, val_set, 4);
  auto [loss_b, top1_b] = evaluate(rebuilt, val_set, 4);
  CHECK(loss_a == loss_b);
  CHECK(top1_a == top1_b);
  std::remove(path.c_str());
}
