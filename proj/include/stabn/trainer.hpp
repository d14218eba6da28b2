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
#ifndef STABN_TRAINER_HPP_
#define STABN_TRAINER_HPP_

#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "stabn/dataset.hpp"
#include "stabn/model.hpp"

namespace stabn {

struct TrainConfig {
  double lr_initial = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  int64_t batch_size = 32;
  // Two plateau cycles at desk scale: converge, destabilize, recover after
  // the first LR decay with matured attention.
  int epochs_max = 10;
  int plateau_patience = 3;
  double lr_decay_factor = 0.1;
  double min_lr = 1e-6;
  double min_rel_improvement = 1e-4;
  // Stop once validation top-1 reaches this value (0 disables).
  double target_val_top1 = 0.0;
  std::optional<double> clip_norm;  // global grad-norm clip, off by default
  uint64_t seed = 0;

  void validate() const;
};

// Joint two-branch loss; l_total == l_att + l_per exactly.
struct LossBreakdown {
  Tensor loss;  // scalar, carries backward edges into both branches
  double l_att = 0.0;
  double l_per = 0.0;
  double l_total = 0.0;
};

LossBreakdown joint_loss(const ForwardOutput& output, const std::vector<int>& labels);

struct SgdState {
  // One velocity buffer per parameter, in named_parameters() order.
  std::vector<std::vector<double>> velocity;
};

SgdState make_sgd_state(StAbnModel& model);
// v <- momentum*v + (grad + weight_decay*w); w <- w - lr*v. Weight decay
// applies only to parameters flagged for decay (conv/linear weights).
void sgd_step(StAbnModel& model, SgdState& state, const TrainConfig& config, double lr);

// Patience-based "saturation of the validation loss": after `patience`
// observations without relative improvement the rate is multiplied by
// `factor`. The rate never increases.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr, int patience, double factor, double min_rel_improvement)
      : lr_(lr), patience_(patience), factor_(factor), min_rel_(min_rel_improvement) {}
  // Returns the learning rate to use after seeing this validation loss.
  double observe(double val_loss);
  double lr() const { return lr_; }
  double best() const { return best_; }

 private:
  double lr_;
  int patience_;
  double factor_;
  double min_rel_;
  double best_ = std::numeric_limits<double>::infinity();
  int stale_ = 0;
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_l_att = 0.0;
  double train_l_per = 0.0;
  double train_l_total = 0.0;
  double val_l_total = 0.0;
  double val_top1 = 0.0;
};

std::string format_epoch_record(const EpochRecord& r);

struct Checkpoint {
  ModelConfig model_config;
  std::vector<std::pair<std::string, Tensor>> tensors;  // params, buffers, momentum
  int epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::string rng_state;
};

Checkpoint make_checkpoint(StAbnModel& model, const SgdState* opt_state, int epoch,
                           double best_val_loss, const std::string& rng_state);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);
// Rebuilds the model topology from the stored config and installs every
// stored parameter and buffer.
StAbnModel model_from_checkpoint(const Checkpoint& ckpt);

struct TrainResult {
  std::vector<EpochRecord> log;
  double best_val_loss = std::numeric_limits<double>::infinity();
  double final_val_top1 = 0.0;
  int epochs_run = 0;
};

// Seeded-shuffle epochs with the joint two-branch loss, SGD momentum steps,
// plateau LR decay and best-validation checkpointing. `checkpoint_path`
// may be empty to skip persistence; `log_stream` may be null.
TrainResult train(StAbnModel& model, const VideoDataset& train_set,
                  const VideoDataset& val_set, const TrainConfig& config,
                  const std::string& checkpoint_path, std::ostream* log_stream);

// Validation-style evaluation: mean joint loss and top-1 over the set.
std::pair<double, double> evaluate(StAbnModel& model, const VideoDataset& dataset,
                                   int64_t batch_size);

}  // namespace stabn

#endif  // STABN_TRAINER_HPP_
