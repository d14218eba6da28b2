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
#include "stabn/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "stabn/errors.hpp"
#include "stabn/eval.hpp"
#include "stabn/serialize.hpp"

namespace stabn {

namespace {

constexpr char kMagic[] = "STABN";
constexpr uint8_t kVersion = 0x01;

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string join_i64(const std::vector<int64_t>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(v[i]);
  }
  return s;
}

std::vector<int64_t> split_i64(const std::string& s) {
  std::vector<int64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoll(item));
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (lr_initial <= 0.0) throw ConfigError("lr_initial must be > 0");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0,1)");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs_max < 1) throw ConfigError("epochs_max must be >= 1");
  if (plateau_patience < 1) throw ConfigError("plateau_patience must be >= 1");
}

LossBreakdown joint_loss(const ForwardOutput& output, const std::vector<int>& labels) {
  Tensor l_att = softmax_cross_entropy(output.att_logits, labels);
  Tensor l_per = softmax_cross_entropy(output.per_logits, labels);
  LossBreakdown b;
  b.loss = add(l_att, l_per);
  b.l_att = l_att.item();
  b.l_per = l_per.item();
  b.l_total = b.loss.item();
  if (!std::isfinite(b.l_total)) {
    throw NumericalError("non-finite training loss (l_att=" + std::to_string(b.l_att) +
                         ", l_per=" + std::to_string(b.l_per) + ")");
  }
  return b;
}

SgdState make_sgd_state(StAbnModel& model) {
  SgdState st;
  for (auto& p : model.named_parameters()) {
    st.velocity.emplace_back(static_cast<size_t>(p.tensor.numel()), 0.0);
  }
  return st;
}

void sgd_step(StAbnModel& model, SgdState& state, const TrainConfig& config, double lr) {
  auto params = model.named_parameters();
  if (state.velocity.size() != params.size()) {
    throw InternalError("optimizer state does not match parameter list");
  }
  double scale = 1.0;
  if (config.clip_norm) {
    double sq = 0.0;
    for (auto& p : params) {
      const double* g = p.tensor.grad();
      if (!g) continue;
      for (int64_t i = 0; i < p.tensor.numel(); ++i) sq += g[i] * g[i];
    }
    const double norm = std::sqrt(sq);
    if (norm > *config.clip_norm) scale = *config.clip_norm / norm;
  }
  for (size_t pi = 0; pi < params.size(); ++pi) {
    ParamRef& p = params[pi];
    std::vector<double>& v = state.velocity[pi];
    double* w = p.tensor.data();
    const double* g = p.tensor.grad();
    const double wd = p.decay ? config.weight_decay : 0.0;
    for (int64_t i = 0; i < p.tensor.numel(); ++i) {
      const double gi = g ? g[i] * scale : 0.0;
      if (std::isnan(gi)) {
        throw NumericalError("NaN gradient in parameter " + p.name);
      }
      v[static_cast<size_t>(i)] = config.momentum * v[static_cast<size_t>(i)] + gi + wd * w[i];
      w[i] -= lr * v[static_cast<size_t>(i)];
    }
  }
}

double PlateauScheduler::observe(double val_loss) {
  const bool improved =
      val_loss < best_ - min_rel_ * std::abs(best_) || !std::isfinite(best_);
  if (improved) {
    best_ = val_loss;
    stale_ = 0;
  } else if (++stale_ >= patience_) {
    lr_ *= factor_;
    stale_ = 0;
  }
  return lr_;
}

std::string format_epoch_record(const EpochRecord& r) {
  std::ostringstream os;
  os << "epoch=" << r.epoch << " lr=" << fmt_double(r.lr)
     << " train_l_att=" << fmt_double(r.train_l_att)
     << " train_l_per=" << fmt_double(r.train_l_per)
     << " train_l_total=" << fmt_double(r.train_l_total)
     << " val_l_total=" << fmt_double(r.val_l_total)
     << " val_top1=" << fmt_double(r.val_top1);
  return os.str();
}

// ---------------------------------------------------------------------------
// Checkpoint I/O

namespace {

std::vector<std::pair<std::string, std::string>> model_config_kv(const ModelConfig& c) {
  return {
      {"num_classes", std::to_string(c.num_classes)},
      {"frames", std::to_string(c.frames)},
      {"input_channels", std::to_string(c.input_channels)},
      {"height", std::to_string(c.height)},
      {"width", std::to_string(c.width)},
      {"stage_channels", join_i64(c.stage_channels)},
      {"blocks_per_stage", join_i64(c.blocks_per_stage)},
      {"split_stage", std::to_string(c.split_stage)},
      {"se_reduction", std::to_string(c.se_reduction)},
      {"dropout_rate", fmt_double(c.dropout_rate)},
      {"batchnorm", c.batchnorm ? "1" : "0"},
  };
}

ModelConfig model_config_from_kv(const std::map<std::string, std::string>& kv) {
  ModelConfig c;
  try {
    c.num_classes = std::stoll(kv.at("num_classes"));
    c.frames = std::stoll(kv.at("frames"));
    c.input_channels = std::stoll(kv.at("input_channels"));
    c.height = std::stoll(kv.at("height"));
    c.width = std::stoll(kv.at("width"));
    c.stage_channels = split_i64(kv.at("stage_channels"));
    c.blocks_per_stage = split_i64(kv.at("blocks_per_stage"));
    c.split_stage = std::stoll(kv.at("split_stage"));
    c.se_reduction = std::stoll(kv.at("se_reduction"));
    c.dropout_rate = std::stod(kv.at("dropout_rate"));
    c.batchnorm = kv.at("batchnorm") == "1";
  } catch (const std::out_of_range&) {
    throw FormatError("checkpoint config block is missing required keys");
  } catch (const std::invalid_argument&) {
    throw FormatError("checkpoint config block has a malformed value");
  }
  return c;
}

}  // namespace

Checkpoint make_checkpoint(StAbnModel& model, const SgdState* opt_state, int epoch,
                           double best_val_loss, const std::string& rng_state) {
  Checkpoint ck;
  ck.model_config = model.config;
  ck.epoch = epoch;
  ck.best_val_loss = best_val_loss;
  ck.rng_state = rng_state;
  auto params = model.named_parameters();
  for (auto& p : params) {
    Tensor copy = Tensor::from_data(p.tensor.shape(),
                                    std::vector<double>(p.tensor.data(), p.tensor.data() + p.tensor.numel()));
    ck.tensors.emplace_back(p.name, copy);
  }
  for (auto& b : model.named_buffers()) {
    Tensor copy = Tensor::from_data(b.tensor.shape(),
                                    std::vector<double>(b.tensor.data(), b.tensor.data() + b.tensor.numel()));
    ck.tensors.emplace_back("buffer." + b.name, copy);
  }
  if (opt_state) {
    for (size_t i = 0; i < params.size(); ++i) {
      const auto& v = opt_state->velocity[i];
      ck.tensors.emplace_back("opt.momentum." + params[i].name,
                              Tensor::from_data({static_cast<int64_t>(v.size())},
                                                std::vector<double>(v)));
    }
  }
  return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot open " + path + " for writing");
  io::write_bytes(f, kMagic, 5);
  io::write_u8(f, kVersion);
  auto kv = model_config_kv(ckpt.model_config);
  kv.emplace_back("meta.epoch", std::to_string(ckpt.epoch));
  kv.emplace_back("meta.best_val_loss", fmt_double(ckpt.best_val_loss));
  kv.emplace_back("meta.rng_state", ckpt.rng_state);
  io::write_kv_block(f, kv);
  io::write_u32(f, static_cast<uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    io::write_tensor_record(f, name, t);
  }
  if (!f) throw FormatError("write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open checkpoint file " + path);
  io::expect_magic(f, kMagic, kVersion, "checkpoint");
  auto kv = io::read_kv_block(f);
  Checkpoint ck;
  ck.model_config = model_config_from_kv(kv);
  if (auto it = kv.find("meta.epoch"); it != kv.end()) ck.epoch = std::stoi(it->second);
  if (auto it = kv.find("meta.best_val_loss"); it != kv.end()) ck.best_val_loss = std::stod(it->second);
  if (auto it = kv.find("meta.rng_state"); it != kv.end()) ck.rng_state = it->second;
  const uint32_t count = io::read_u32(f);
  for (uint32_t i = 0; i < count; ++i) {
    ck.tensors.push_back(io::read_tensor_record(f));
  }
  // Trailing garbage is as suspicious as truncation.
  char extra;
  if (f.read(&extra, 1); f.gcount() != 0) {
    throw FormatError("checkpoint has trailing bytes: " + path);
  }
  return ck;
}

StAbnModel model_from_checkpoint(const Checkpoint& ckpt) {
  StAbnModel model = build_model(ckpt.model_config, 0);
  std::map<std::string, Tensor> stored;
  for (const auto& [name, t] : ckpt.tensors) stored[name] = t;
  auto install = [&stored](const std::string& name, Tensor& dst) {
    auto it = stored.find(name);
    if (it == stored.end()) throw FormatError("checkpoint is missing tensor " + name);
    if (it->second.shape() != dst.shape()) {
      throw FormatError("checkpoint tensor " + name + " has shape " +
                        shape_str(it->second.shape()) + ", expected " + shape_str(dst.shape()));
    }
    std::copy(it->second.data(), it->second.data() + dst.numel(), dst.data());
  };
  for (auto& p : model.named_parameters()) install(p.name, p.tensor);
  for (auto& b : model.named_buffers()) install("buffer." + b.name, b.tensor);
  return model;
}

// ---------------------------------------------------------------------------
// Training loop

std::pair<double, double> evaluate(StAbnModel& model, const VideoDataset& dataset,
                                   int64_t batch_size) {
  if (dataset.size() == 0) throw InputError("empty dataset");
  NoGradGuard ng;
  std::mt19937_64 dummy_rng(0);
  double loss_sum = 0.0;
  int64_t hits = 0;
  std::vector<int64_t> order(static_cast<size_t>(dataset.size()));
  for (int64_t i = 0; i < dataset.size(); ++i) order[static_cast<size_t>(i)] = i;
  for (int64_t start = 0; start < dataset.size(); start += batch_size) {
    const int64_t end = std::min(start + batch_size, dataset.size());
    Batch b = materialize_batch(dataset, {order.begin() + start, order.begin() + end});
    ForwardOutput out = model.forward(b.videos, /*training=*/false, dummy_rng);
    LossBreakdown lb = joint_loss(out, b.labels);
    loss_sum += lb.l_total * static_cast<double>(end - start);
    hits += topk_hits(out.per_logits, b.labels, 1);
  }
  return {loss_sum / static_cast<double>(dataset.size()),
          static_cast<double>(hits) / static_cast<double>(dataset.size())};
}

TrainResult train(StAbnModel& model, const VideoDataset& train_set,
                  const VideoDataset& val_set, const TrainConfig& config,
                  const std::string& checkpoint_path, std::ostream* log_stream) {
  config.validate();
  if (train_set.size() == 0 || val_set.size() == 0) {
    throw InputError("train and validation sets must be non-empty");
  }
  std::mt19937_64 rng(config.seed);  // dropout noise
  SgdState opt = make_sgd_state(model);
  PlateauScheduler sched(config.lr_initial, config.plateau_patience,
                         config.lr_decay_factor, config.min_rel_improvement);
  TrainResult result;
  double lr = config.lr_initial;

  for (int epoch = 1; epoch <= config.epochs_max; ++epoch) {
    const auto batches = batch_order(train_set.size(), config.batch_size,
                                     config.seed * 0x9e3779b97f4a7c15ULL + static_cast<uint64_t>(epoch));
    double sum_att = 0.0, sum_per = 0.0, sum_total = 0.0;
    for (const auto& idx : batches) {
      Batch b = materialize_batch(train_set, idx);
      ForwardOutput out = model.forward(b.videos, /*training=*/true, rng);
      LossBreakdown lb = joint_loss(out, b.labels);
      const double w = static_cast<double>(idx.size());
      sum_att += lb.l_att * w;
      sum_per += lb.l_per * w;
      sum_total += lb.l_total * w;
      model.zero_grads();
      lb.loss.backward();
      sgd_step(model, opt, config, lr);
    }

    auto [val_loss, val_top1] = evaluate(model, val_set, config.batch_size);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_l_att = sum_att / static_cast<double>(train_set.size());
    rec.train_l_per = sum_per / static_cast<double>(train_set.size());
    rec.train_l_total = sum_total / static_cast<double>(train_set.size());
    rec.val_l_total = val_loss;
    rec.val_top1 = val_top1;
    result.log.push_back(rec);
    result.epochs_run = epoch;
    result.final_val_top1 = val_top1;
    if (log_stream) (*log_stream) << format_epoch_record(rec) << "\n" << std::flush;

    if (val_loss < result.best_val_loss) {
      result.best_val_loss = val_loss;
      if (!checkpoint_path.empty()) {
        std::ostringstream rs;
        rs << rng;
        save_checkpoint(checkpoint_path,
                        make_checkpoint(model, &opt, epoch, val_loss, rs.str()));
      }
    }

    lr = sched.observe(val_loss);
    if (lr < config.min_lr) break;
    if (config.target_val_top1 > 0.0 && val_top1 >= config.target_val_top1) break;
  }
  return result;
}

}  // namespace stabn
