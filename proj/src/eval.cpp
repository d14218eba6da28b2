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
#include "stabn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "stabn/errors.hpp"
#include "stabn/render.hpp"

namespace stabn {

int64_t topk_hits(const Tensor& logits, const std::vector<int>& labels, int k) {
  if (logits.ndim() != 2) throw InputError("topk expects [N,K] logits");
  const int64_t n = logits.dim(0), classes = logits.dim(1);
  if (k < 1 || k > classes) {
    throw InputError("k=" + std::to_string(k) + " out of range for " + std::to_string(classes) + " classes");
  }
  if (static_cast<int64_t>(labels.size()) != n) throw InputError("label count mismatch");
  int64_t hits = 0;
  std::vector<int> idx(static_cast<size_t>(classes));
  for (int64_t i = 0; i < n; ++i) {
    const double* row = logits.data() + i * classes;
    std::iota(idx.begin(), idx.end(), 0);
    // Descending by logit; ties go to the lower class index.
    std::stable_sort(idx.begin(), idx.end(),
                     [row](int a, int b) { return row[a] > row[b]; });
    const int y = labels[static_cast<size_t>(i)];
    for (int j = 0; j < k; ++j) {
      if (idx[static_cast<size_t>(j)] == y) { ++hits; break; }
    }
  }
  return hits;
}

double topk_accuracy(const Tensor& logits, const std::vector<int>& labels, int k) {
  if (logits.dim(0) == 0) throw InputError("empty batch");
  return static_cast<double>(topk_hits(logits, labels, k)) /
         static_cast<double>(logits.dim(0));
}

Tensor invert_attention(const Tensor& m) {
  if (!m.defined()) throw InputError("invert_attention: undefined tensor");
  for (int64_t i = 0; i < m.numel(); ++i) {
    if (m.data()[i] < 0.0 || m.data()[i] > 1.0) {
      throw InputError("attention value " + std::to_string(m.data()[i]) + " outside [0,1]");
    }
  }
  return add_scalar(scale(m, -1.0), 1.0);
}

InversionReport run_inversion_experiment(StAbnModel& model, const VideoDataset& dataset,
                                         int64_t batch_size) {
  if (dataset.size() == 0) throw InputError("empty dataset");
  NoGradGuard ng;
  std::mt19937_64 dummy_rng(0);
  const int k5 = static_cast<int>(std::min<int64_t>(5, model.config.num_classes));
  InversionReport report;
  report.sample_count = dataset.size();
  const bool flags[4][2] = {{false, false}, {true, false}, {false, true}, {true, true}};
  for (const auto& f : flags) {
    AttentionOverride ov;
    ov.spatial = f[0] ? AttentionOverride::Mode::Inverted : AttentionOverride::Mode::AsComputed;
    ov.temporal = f[1] ? AttentionOverride::Mode::Inverted : AttentionOverride::Mode::AsComputed;
    int64_t hits1 = 0, hits5 = 0;
    for (int64_t start = 0; start < dataset.size(); start += batch_size) {
      const int64_t end = std::min(start + batch_size, dataset.size());
      std::vector<int64_t> idx(static_cast<size_t>(end - start));
      std::iota(idx.begin(), idx.end(), start);
      Batch b = materialize_batch(dataset, idx);
      ForwardOutput out = model.forward_with_override(b.videos, ov, dummy_rng);
      hits1 += topk_hits(out.per_logits, b.labels, 1);
      hits5 += topk_hits(out.per_logits, b.labels, k5);
    }
    InversionCondition cond;
    cond.spatial_inverted = f[0];
    cond.temporal_inverted = f[1];
    cond.top1 = static_cast<double>(hits1) / static_cast<double>(dataset.size());
    cond.top5 = static_cast<double>(hits5) / static_cast<double>(dataset.size());
    report.conditions.push_back(cond);
  }
  return report;
}

LocalizationReport score_localization(StAbnModel& model, const VideoDataset& dataset,
                                      int64_t batch_size) {
  if (dataset.size() == 0) throw InputError("empty dataset");
  for (const auto& s : dataset.samples) {
    if (s.bbox.empty() || s.window_len <= 0) {
      throw InputError("dataset lacks window/bbox metadata; localization needs synthetic ground truth");
    }
  }
  NoGradGuard ng;
  std::mt19937_64 dummy_rng(0);
  const int t_count = dataset.config.frames;
  const int size = dataset.config.size;
  double sum_temporal = 0.0, sum_spatial = 0.0;
  int64_t used_temporal = 0, used_spatial = 0, used = 0;
  for (int64_t start = 0; start < dataset.size(); start += batch_size) {
    const int64_t end = std::min(start + batch_size, dataset.size());
    std::vector<int64_t> idx(static_cast<size_t>(end - start));
    std::iota(idx.begin(), idx.end(), start);
    Batch b = materialize_batch(dataset, idx);
    ForwardOutput out = model.forward(b.videos, /*training=*/false, dummy_rng);
    const Tensor& mt = out.attention.temporal;                    // [N,T]
    const Tensor& ms = out.attention.spatial;                     // [N,1,T,H',W']
    const int hp = static_cast<int>(ms.dim(3)), wp = static_cast<int>(ms.dim(4));
    for (int64_t i = 0; i < end - start; ++i) {
      const VideoSample& s = dataset.samples[static_cast<size_t>(idx[static_cast<size_t>(i)])];
      // Correctly classified only (top-1 of the perception branch).
      const double* row = out.per_logits.data() + i * model.config.num_classes;
      int argmax = 0;
      for (int64_t c = 1; c < model.config.num_classes; ++c) {
        if (row[c] > row[argmax]) argmax = static_cast<int>(c);
      }
      if (argmax != s.label) continue;
      ++used;

      // Temporal: window mean minus outside mean, when both exist.
      if (s.window_len < t_count) {
        double in_sum = 0.0, out_sum = 0.0;
        for (int t = 0; t < t_count; ++t) {
          const double v = mt.data()[i * t_count + t];
          if (t >= s.t0 && t < s.t0 + s.window_len) in_sum += v; else out_sum += v;
        }
        sum_temporal += in_sum / s.window_len - out_sum / (t_count - s.window_len);
        ++used_temporal;
      }

      // Spatial: per frame, mean attention inside the shape bbox minus mean
      // outside, after upsampling M_s to the input resolution.
      double frame_contrast = 0.0;
      int frames_scored = 0;
      for (int t = 0; t < t_count; ++t) {
        const double* att = ms.data() + (i * t_count + t) * hp * wp;
        const std::vector<double> up = bilinear_upsample(
            std::vector<double>(att, att + hp * wp), hp, wp, size, size);
        const auto& bb = s.bbox[static_cast<size_t>(t)];
        double in_sum = 0.0, out_sum = 0.0;
        int64_t in_n = 0, out_n = 0;
        for (int y = 0; y < size; ++y) {
          for (int x = 0; x < size; ++x) {
            const bool inside = x >= bb[0] && x < bb[2] && y >= bb[1] && y < bb[3];
            const double v = up[static_cast<size_t>(y) * size + x];
            if (inside) { in_sum += v; ++in_n; } else { out_sum += v; ++out_n; }
          }
        }
        if (in_n > 0 && out_n > 0) {
          frame_contrast += in_sum / in_n - out_sum / out_n;
          ++frames_scored;
        }
      }
      if (frames_scored > 0) {
        sum_spatial += frame_contrast / frames_scored;
        ++used_spatial;
      }
    }
  }
  LocalizationReport r;
  r.samples_total = dataset.size();
  r.samples_used = used;
  r.temporal_contrast = used_temporal > 0 ? sum_temporal / used_temporal : 0.0;
  r.spatial_contrast = used_spatial > 0 ? sum_spatial / used_spatial : 0.0;
  return r;
}

namespace {
std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}
}  // namespace

std::string inversion_report_kv(const InversionReport& r) {
  std::string out;
  for (const auto& c : r.conditions) {
    out += "spatial_inverted=" + std::string(c.spatial_inverted ? "1" : "0") +
           " temporal_inverted=" + std::string(c.temporal_inverted ? "1" : "0") +
           " top1=" + pct(c.top1) + " top5=" + pct(c.top5) + "\n";
  }
  out += "samples=" + std::to_string(r.sample_count) + "\n";
  return out;
}

std::string localization_report_kv(const LocalizationReport& r) {
  return "temporal_contrast=" + pct(r.temporal_contrast) +
         " spatial_contrast=" + pct(r.spatial_contrast) +
         " samples_used=" + std::to_string(r.samples_used) +
         " samples_total=" + std::to_string(r.samples_total) + "\n";
}

std::string inversion_report_table(const InversionReport& r) {
  std::ostringstream os;
  os << "Spatial   Temporal  Top-1    Top-5\n";
  for (const auto& c : r.conditions) {
    char line[80];
    std::snprintf(line, sizeof(line), "%-9s %-9s %-8s %-8s\n",
                  c.spatial_inverted ? "inv" : "-", c.temporal_inverted ? "inv" : "-",
                  pct(c.top1).c_str(), pct(c.top5).c_str());
    os << line;
  }
  return os.str();
}

}  // namespace stabn
