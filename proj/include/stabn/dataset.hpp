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
#ifndef STABN_DATASET_HPP_
#define STABN_DATASET_HPP_

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "stabn/tensor.hpp"

namespace stabn {

// Moving-square videos: a bright square holds still, slides one pixel per
// frame in the class direction during a random window, then holds again.
// Class is determined solely by the motion direction inside the window.
struct SynthConfig {
  int num_classes = 4;  // 0 up, 1 down, 2 left, 3 right (2 = up/down only)
  int frames = 8;
  int size = 32;  // H = W
  int channels = 1;
  // Difficulty defaults are tuned so the desk-scale network must localize
  // evidence in space and time: a small square, a short motion window and
  // heavy pixel noise make the attention maps causally load-bearing.
  int shape_size = 4;
  int window_len = 3;  // frames of motion, window [t0, t0+L)
  double noise_std = 0.4;
  int samples_train = 2000;
  int samples_val = 400;
  uint64_t seed = 42;

  void validate() const;
};

struct VideoSample {
  std::vector<float> video;  // [C,T,H,W], values in [0,1]
  int label = 0;
  int t0 = 0;        // first frame of the action window
  int window_len = 0;
  std::vector<std::array<uint16_t, 4>> bbox;  // per frame: x0,y0,x1,y1 (exclusive)
};

struct VideoDataset {
  SynthConfig config;
  std::vector<VideoSample> samples;

  int64_t size() const { return static_cast<int64_t>(samples.size()); }
  int64_t frame_count() const { return config.frames; }
};

std::pair<VideoDataset, VideoDataset> generate(const SynthConfig& config);

// Binary format: "STVID" + version + config kv block + sample records +
// trailing CRC32 over everything after the version byte.
void save_dataset(const std::string& path, const VideoDataset& dataset);
VideoDataset load_dataset(const std::string& path);
uint32_t dataset_checksum(const std::string& path);

struct Batch {
  Tensor videos;  // [N,C,T,H,W] as f64
  std::vector<int> labels;
  std::vector<int64_t> indices;  // dataset indices of this batch
};

// Seeded Fisher-Yates order over the dataset; the final short batch is
// emitted. Returns the batches' index lists.
std::vector<std::vector<int64_t>> batch_order(int64_t dataset_size,
                                              int64_t batch_size,
                                              uint64_t shuffle_seed);
Batch materialize_batch(const VideoDataset& dataset,
                        const std::vector<int64_t>& indices);

}  // namespace stabn

#endif  // STABN_DATASET_HPP_
