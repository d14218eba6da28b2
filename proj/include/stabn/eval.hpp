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
#ifndef STABN_EVAL_HPP_
#define STABN_EVAL_HPP_

#include <string>
#include <vector>

#include "stabn/dataset.hpp"
#include "stabn/model.hpp"

namespace stabn {

// Ties broken toward the lower class index (deterministic).
int64_t topk_hits(const Tensor& logits, const std::vector<int>& labels, int k);
double topk_accuracy(const Tensor& logits, const std::vector<int>& labels, int k);

// Elementwise 1 - m; every element must already be in [0,1].
Tensor invert_attention(const Tensor& m);

struct InversionCondition {
  bool spatial_inverted = false;
  bool temporal_inverted = false;
  double top1 = 0.0;
  double top5 = 0.0;
};

// The four conditions, in order: (no,no), (yes,no), (no,yes), (yes,yes).
struct InversionReport {
  std::vector<InversionCondition> conditions;
  int64_t sample_count = 0;
};

InversionReport run_inversion_experiment(StAbnModel& model, const VideoDataset& dataset,
                                         int64_t batch_size = 32);

// Attention localization against the synthetic ground truth, over correctly
// classified samples only.
struct LocalizationReport {
  double temporal_contrast = 0.0;  // mean M_t inside window - mean outside
  double spatial_contrast = 0.0;   // mean M_s inside bbox - mean outside
  int64_t samples_used = 0;        // correctly classified and scoreable
  int64_t samples_total = 0;
};

LocalizationReport score_localization(StAbnModel& model, const VideoDataset& dataset,
                                      int64_t batch_size = 32);

// Line-delimited key=value records.
std::string inversion_report_kv(const InversionReport& r);
std::string localization_report_kv(const LocalizationReport& r);
// Aligned four-row text table.
std::string inversion_report_table(const InversionReport& r);

}  // namespace stabn

#endif  // STABN_EVAL_HPP_
