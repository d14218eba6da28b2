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
#ifndef STABN_MODEL_HPP_
#define STABN_MODEL_HPP_

#include <optional>
#include <string>
#include <vector>

#include "stabn/ops.hpp"
#include "stabn/tensor.hpp"

namespace stabn {

struct ModelConfig {
  int64_t num_classes = 4;
  int64_t frames = 8;
  int64_t input_channels = 1;
  int64_t height = 32;
  int64_t width = 32;
  std::vector<int64_t> stage_channels = {16, 32, 64};
  std::vector<int64_t> blocks_per_stage = {1, 1, 1};
  // Index of the stage where the network forks into branches. The extractor
  // holds the stem and every stage before this index; the ST attention
  // branch trunk and the perception branch both replicate the stages from
  // this index on.
  int64_t split_stage = 2;
  int64_t se_reduction = 2;
  double dropout_rate = 0.5;
  bool batchnorm = true;

  void validate() const;  // throws ConfigError listing every violation
  // Spatial stride accumulated through the stem and the extractor stages.
  int64_t stride_at_split() const;
};

// Spatial attention M_s (per-frame map) and temporal attention M_t
// (per-frame scalar), both sigmoid outputs in (0,1).
struct AttentionPair {
  Tensor spatial;   // [N,1,T,H',W']
  Tensor temporal;  // [N,T]
};

struct ForwardOutput {
  Tensor att_logits;  // [N,K]
  Tensor per_logits;  // [N,K]
  AttentionPair attention;
};

// Per-attention transform applied between the heads and the fusion step.
struct AttentionOverride {
  enum class Mode { AsComputed, Inverted, Constant };
  Mode spatial = Mode::AsComputed;
  Mode temporal = Mode::AsComputed;
  double spatial_constant = 0.5;
  double temporal_constant = 0.5;
};

namespace layers {

struct Conv3d {
  ConvSpec spec;
  Tensor weight;
  Tensor bias;  // undefined when spec.bias == false
  Tensor forward(const Tensor& x) const { return conv3d(x, spec, weight, bias); }
};

struct Conv2d {
  ConvSpec spec;
  Tensor weight;  // [Cout,C,kH,kW]
  Tensor bias;
  Tensor forward(const Tensor& x) const { return conv2d(x, spec, weight, bias); }
};

struct Linear {
  Tensor weight;  // [Dout,Din]
  Tensor bias;
  Tensor forward(const Tensor& x) const { return linear(x, weight, bias); }
};

// Two 3x3x3 convs with pre-activation-free ResNet wiring: conv-bn-relu,
// conv-bn, skip (identity or 1x1x1 projection), relu. Strides apply only
// spatially; the temporal extent is always preserved.
struct ResidualBlock {
  Conv3d conv1, conv2;
  std::optional<BatchNormState> bn1, bn2, bn_proj;
  std::optional<Conv3d> proj;
  Tensor forward(const Tensor& x, bool training);
};

}  // namespace layers

// Named reference to one trainable parameter. `decay` marks conv/linear
// weights, the only tensors weight decay applies to.
struct ParamRef {
  std::string name;
  Tensor tensor;
  bool decay = false;
};

struct StAbnModel {
  ModelConfig config;

  layers::Conv3d stem;
  std::optional<BatchNormState> stem_bn;
  std::vector<layers::ResidualBlock> extractor;

  std::vector<layers::ResidualBlock> branch_trunk;  // first block stride 1
  layers::Conv3d att_conv1;  // C_trunk -> K, 1x1x1; output shared by both heads
  layers::Conv3d att_conv2;  // K -> K, 1x1x1
  layers::Conv3d spatial_conv;    // K -> 1, 1x1x1
  layers::Conv3d temporal_conv;   // K -> 1, 1x3x3 spatial pad 1
  layers::Conv2d temporal_mix;    // T -> T, 1x1
  layers::Linear temporal_fc1;    // T -> ceil(T/r)
  layers::Linear temporal_fc2;    // ceil(T/r) -> T
  layers::Conv3d fusion_conv;     // 2C -> C, 1x1x1

  std::vector<layers::ResidualBlock> perception;
  layers::Linear classifier;  // C_last -> K

  // Deterministic, checkpoint-stable ordering.
  std::vector<ParamRef> named_parameters();
  // Batchnorm running statistics (state, not parameters).
  std::vector<ParamRef> named_buffers();
  int64_t parameter_count();
  void zero_grads();

  Tensor extract_features(const Tensor& video, bool training);
  // Returns (att_logits, shared K-channel maps feeding both heads).
  std::pair<Tensor, Tensor> attention_branch_forward(const Tensor& features,
                                                     bool training,
                                                     std::mt19937_64& rng);
  Tensor spatial_attention(const Tensor& shared_k_maps);
  Tensor temporal_attention(const Tensor& shared_k_maps);
  Tensor fuse_attention(const Tensor& features, const Tensor& spatial,
                        const Tensor& temporal);
  Tensor perception_forward(const Tensor& fused, bool training,
                            std::mt19937_64& rng);

  ForwardOutput forward(const Tensor& video, bool training,
                        std::mt19937_64& rng);
  ForwardOutput forward_with_override(const Tensor& video,
                                      const AttentionOverride& override,
                                      std::mt19937_64& rng);
  ForwardOutput forward_with_override(const Tensor& video,
                                      const AttentionOverride& override,
                                      std::mt19937_64& rng, bool training);
};

StAbnModel build_model(const ModelConfig& config, uint64_t seed);

}  // namespace stabn

#endif  // STABN_MODEL_HPP_
