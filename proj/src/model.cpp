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
#include "stabn/model.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "stabn/errors.hpp"

namespace stabn {

void ModelConfig::validate() const {
  std::vector<std::string> problems;
  if (num_classes < 2) problems.push_back("num_classes must be >= 2");
  if (frames < 2) problems.push_back("frames must be >= 2");
  if (input_channels < 1) problems.push_back("input_channels must be >= 1");
  if (stage_channels.empty()) problems.push_back("stage_channels must be non-empty");
  for (int64_t c : stage_channels) {
    if (c < 1) problems.push_back("stage channel counts must be >= 1");
  }
  if (blocks_per_stage.size() != stage_channels.size()) {
    problems.push_back("blocks_per_stage must match stage_channels in length");
  }
  for (int64_t b : blocks_per_stage) {
    if (b < 1) problems.push_back("blocks per stage must be >= 1");
  }
  if (split_stage < 0 || split_stage >= static_cast<int64_t>(stage_channels.size())) {
    problems.push_back("split_stage " + std::to_string(split_stage) +
                       " must be < stage count " + std::to_string(stage_channels.size()));
  }
  if (se_reduction < 1) problems.push_back("se_reduction must be >= 1");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
    problems.push_back("dropout_rate must be in [0,1)");
  }
  if (problems.empty()) {
    const int64_t s = stride_at_split();
    if (height % s != 0 || width % s != 0) {
      problems.push_back("input size " + std::to_string(height) + "x" + std::to_string(width) +
                         " must be divisible by the cumulative stride " + std::to_string(s));
    }
    if (height / s < 1 || width / s < 1) problems.push_back("input too small for the configured strides");
  }
  if (!problems.empty()) {
    std::ostringstream os;
    os << "invalid model config:";
    for (const auto& p : problems) os << "\n  - " << p;
    throw ConfigError(os.str());
  }
}

int64_t ModelConfig::stride_at_split() const {
  // Stem downsamples 2x spatially; every extractor stage after the first
  // downsamples 2x more. Temporal extent is never reduced.
  int64_t s = 2;
  for (int64_t i = 1; i < split_stage; ++i) s *= 2;
  return s;
}

namespace layers {

Tensor ResidualBlock::forward(const Tensor& x, bool training) {
  Tensor h = conv1.forward(x);
  if (bn1) h = batchnorm(h, *bn1, training);
  h = relu(h);
  h = conv2.forward(h);
  if (bn2) h = batchnorm(h, *bn2, training);
  Tensor skip = x;
  if (proj) {
    skip = proj->forward(x);
    if (bn_proj) skip = batchnorm(skip, *bn_proj, training);
  }
  return relu(add(h, skip));
}

}  // namespace layers

namespace {

class Builder {
 public:
  explicit Builder(uint64_t seed) : rng_(seed), normal_(0.0, 1.0) {}

  Tensor he_conv(const Shape& shape) {
    int64_t fan_in = 1;
    for (size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
    return draw(shape, std::sqrt(2.0 / static_cast<double>(fan_in)));
  }

  layers::Conv3d conv3d_layer(int64_t cin, int64_t cout, std::array<int64_t, 3> k,
                              std::array<int64_t, 3> s, std::array<int64_t, 3> p,
                              bool bias) {
    layers::Conv3d l;
    l.spec = ConvSpec{cout, cin, k, s, p, bias};
    l.weight = he_conv({cout, cin, k[0], k[1], k[2]});
    if (bias) l.bias = Tensor::zeros({cout}, true);
    return l;
  }

  layers::Conv2d conv2d_layer(int64_t cin, int64_t cout, int64_t k) {
    layers::Conv2d l;
    l.spec = ConvSpec{cout, cin, {1, k, k}, {1, 1, 1}, {0, 0, 0}, true};
    l.weight = he_conv({cout, cin, k, k});
    l.bias = Tensor::zeros({cout}, true);
    return l;
  }

  layers::Linear linear_layer(int64_t din, int64_t dout) {
    layers::Linear l;
    l.weight = draw({dout, din}, std::sqrt(2.0 / static_cast<double>(din)));
    l.bias = Tensor::zeros({dout}, true);
    return l;
  }

  layers::ResidualBlock block(int64_t cin, int64_t cout, int64_t spatial_stride,
                              bool use_bn) {
    layers::ResidualBlock b;
    const std::array<int64_t, 3> k333 = {3, 3, 3};
    const std::array<int64_t, 3> p111 = {1, 1, 1};
    b.conv1 = conv3d_layer(cin, cout, k333, {1, spatial_stride, spatial_stride}, p111, !use_bn);
    b.conv2 = conv3d_layer(cout, cout, k333, {1, 1, 1}, p111, !use_bn);
    if (use_bn) {
      b.bn1 = make_batchnorm(cout);
      b.bn2 = make_batchnorm(cout);
    }
    if (cin != cout || spatial_stride != 1) {
      b.proj = conv3d_layer(cin, cout, {1, 1, 1}, {1, spatial_stride, spatial_stride}, {0, 0, 0}, !use_bn);
      if (use_bn) b.bn_proj = make_batchnorm(cout);
    }
    return b;
  }

 private:
  Tensor draw(const Shape& shape, double std) {
    Tensor t = Tensor::zeros(shape, true);
    for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = normal_(rng_) * std;
    return t;
  }

  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_;
};

std::vector<layers::ResidualBlock> build_stages(Builder& b, const ModelConfig& cfg,
                                                int64_t first_stage, int64_t last_stage,
                                                int64_t in_channels, bool force_stride1_first) {
  std::vector<layers::ResidualBlock> blocks;
  int64_t cin = in_channels;
  for (int64_t s = first_stage; s < last_stage; ++s) {
    const int64_t cout = cfg.stage_channels[static_cast<size_t>(s)];
    for (int64_t i = 0; i < cfg.blocks_per_stage[static_cast<size_t>(s)]; ++i) {
      int64_t stride = (i == 0 && s > 0) ? 2 : 1;
      if (force_stride1_first && i == 0) stride = 1;
      blocks.push_back(b.block(cin, cout, stride, cfg.batchnorm));
      cin = cout;
    }
  }
  return blocks;
}

int64_t ceil_div(int64_t a, int64_t b) { return (a + b - 1) / b; }

void collect_block(std::vector<ParamRef>& out, const std::string& prefix,
                   layers::ResidualBlock& b) {
  out.push_back({prefix + ".conv1.weight", b.conv1.weight, true});
  if (b.conv1.bias.defined()) out.push_back({prefix + ".conv1.bias", b.conv1.bias, false});
  if (b.bn1) {
    out.push_back({prefix + ".bn1.gamma", b.bn1->gamma, false});
    out.push_back({prefix + ".bn1.beta", b.bn1->beta, false});
  }
  out.push_back({prefix + ".conv2.weight", b.conv2.weight, true});
  if (b.conv2.bias.defined()) out.push_back({prefix + ".conv2.bias", b.conv2.bias, false});
  if (b.bn2) {
    out.push_back({prefix + ".bn2.gamma", b.bn2->gamma, false});
    out.push_back({prefix + ".bn2.beta", b.bn2->beta, false});
  }
  if (b.proj) {
    out.push_back({prefix + ".proj.weight", b.proj->weight, true});
    if (b.proj->bias.defined()) out.push_back({prefix + ".proj.bias", b.proj->bias, false});
    if (b.bn_proj) {
      out.push_back({prefix + ".bn_proj.gamma", b.bn_proj->gamma, false});
      out.push_back({prefix + ".bn_proj.beta", b.bn_proj->beta, false});
    }
  }
}

void collect_block_buffers(std::vector<ParamRef>& out, const std::string& prefix,
                           layers::ResidualBlock& b) {
  if (b.bn1) {
    out.push_back({prefix + ".bn1.running_mean", b.bn1->running_mean, false});
    out.push_back({prefix + ".bn1.running_var", b.bn1->running_var, false});
  }
  if (b.bn2) {
    out.push_back({prefix + ".bn2.running_mean", b.bn2->running_mean, false});
    out.push_back({prefix + ".bn2.running_var", b.bn2->running_var, false});
  }
  if (b.bn_proj) {
    out.push_back({prefix + ".bn_proj.running_mean", b.bn_proj->running_mean, false});
    out.push_back({prefix + ".bn_proj.running_var", b.bn_proj->running_var, false});
  }
}

}  // namespace

StAbnModel build_model(const ModelConfig& config, uint64_t seed) {
  config.validate();
  Builder b(seed);
  StAbnModel m;
  m.config = config;

  const int64_t c0 = config.stage_channels[0];
  m.stem = b.conv3d_layer(config.input_channels, c0, {3, 3, 3}, {1, 2, 2}, {1, 1, 1}, !config.batchnorm);
  if (config.batchnorm) m.stem_bn = make_batchnorm(c0);
  m.extractor = build_stages(b, config, 0, config.split_stage, c0, false);

  const int64_t c_f = config.split_stage > 0
                          ? config.stage_channels[static_cast<size_t>(config.split_stage - 1)]
                          : c0;
  const int64_t n_stages = static_cast<int64_t>(config.stage_channels.size());
  m.branch_trunk = build_stages(b, config, config.split_stage, n_stages, c_f, true);

  const int64_t c_trunk = config.stage_channels.back();
  const int64_t k = config.num_classes;
  const int64_t t = config.frames;
  m.att_conv1 = b.conv3d_layer(c_trunk, k, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, true);
  m.att_conv2 = b.conv3d_layer(k, k, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, true);
  m.spatial_conv = b.conv3d_layer(k, 1, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, true);
  m.temporal_conv = b.conv3d_layer(k, 1, {1, 3, 3}, {1, 1, 1}, {0, 1, 1}, true);
  m.temporal_mix = b.conv2d_layer(t, t, 1);
  const int64_t t_mid = ceil_div(t, config.se_reduction);
  m.temporal_fc1 = b.linear_layer(t, t_mid);
  m.temporal_fc2 = b.linear_layer(t_mid, t);
  m.fusion_conv = b.conv3d_layer(2 * c_f, c_f, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, true);

  m.perception = build_stages(b, config, config.split_stage, n_stages, c_f, false);
  m.classifier = b.linear_layer(config.stage_channels.back(), k);
  return m;
}

std::vector<ParamRef> StAbnModel::named_parameters() {
  std::vector<ParamRef> out;
  out.push_back({"stem.weight", stem.weight, true});
  if (stem.bias.defined()) out.push_back({"stem.bias", stem.bias, false});
  if (stem_bn) {
    out.push_back({"stem_bn.gamma", stem_bn->gamma, false});
    out.push_back({"stem_bn.beta", stem_bn->beta, false});
  }
  for (size_t i = 0; i < extractor.size(); ++i) {
    collect_block(out, "extractor." + std::to_string(i), extractor[i]);
  }
  for (size_t i = 0; i < branch_trunk.size(); ++i) {
    collect_block(out, "trunk." + std::to_string(i), branch_trunk[i]);
  }
  auto conv = [&out](const std::string& n, layers::Conv3d& c) {
    out.push_back({n + ".weight", c.weight, true});
    if (c.bias.defined()) out.push_back({n + ".bias", c.bias, false});
  };
  conv("att_conv1", att_conv1);
  conv("att_conv2", att_conv2);
  conv("spatial_conv", spatial_conv);
  conv("temporal_conv", temporal_conv);
  out.push_back({"temporal_mix.weight", temporal_mix.weight, true});
  out.push_back({"temporal_mix.bias", temporal_mix.bias, false});
  out.push_back({"temporal_fc1.weight", temporal_fc1.weight, true});
  out.push_back({"temporal_fc1.bias", temporal_fc1.bias, false});
  out.push_back({"temporal_fc2.weight", temporal_fc2.weight, true});
  out.push_back({"temporal_fc2.bias", temporal_fc2.bias, false});
  conv("fusion_conv", fusion_conv);
  for (size_t i = 0; i < perception.size(); ++i) {
    collect_block(out, "perception." + std::to_string(i), perception[i]);
  }
  out.push_back({"classifier.weight", classifier.weight, true});
  out.push_back({"classifier.bias", classifier.bias, false});
  return out;
}

std::vector<ParamRef> StAbnModel::named_buffers() {
  std::vector<ParamRef> out;
  if (stem_bn) {
    out.push_back({"stem_bn.running_mean", stem_bn->running_mean, false});
    out.push_back({"stem_bn.running_var", stem_bn->running_var, false});
  }
  for (size_t i = 0; i < extractor.size(); ++i) {
    collect_block_buffers(out, "extractor." + std::to_string(i), extractor[i]);
  }
  for (size_t i = 0; i < branch_trunk.size(); ++i) {
    collect_block_buffers(out, "trunk." + std::to_string(i), branch_trunk[i]);
  }
  for (size_t i = 0; i < perception.size(); ++i) {
    collect_block_buffers(out, "perception." + std::to_string(i), perception[i]);
  }
  return out;
}

int64_t StAbnModel::parameter_count() {
  int64_t n = 0;
  for (auto& p : named_parameters()) n += p.tensor.numel();
  return n;
}

void StAbnModel::zero_grads() {
  for (auto& p : named_parameters()) p.tensor.zero_grad();
}

Tensor StAbnModel::extract_features(const Tensor& video, bool training) {
  Tensor h = stem.forward(video);
  if (stem_bn) h = batchnorm(h, *stem_bn, training);
  h = relu(h);
  for (auto& blk : extractor) h = blk.forward(h, training);
  return h;
}

std::pair<Tensor, Tensor> StAbnModel::attention_branch_forward(
    const Tensor& features, bool training, std::mt19937_64& rng) {
  Tensor h = features;
  for (auto& blk : branch_trunk) h = blk.forward(h, training);
  h = dropout(h, config.dropout_rate, training, rng);
  Tensor shared = att_conv1.forward(h);
  Tensor att_logits = gap3d(att_conv2.forward(shared));
  return {att_logits, shared};
}

Tensor StAbnModel::spatial_attention(const Tensor& shared_k_maps) {
  return sigmoid(spatial_conv.forward(shared_k_maps));
}

Tensor StAbnModel::temporal_attention(const Tensor& shared_k_maps) {
  Tensor h = temporal_conv.forward(shared_k_maps);  // [N,1,T,H',W']
  h = reshape(h, {h.dim(0), h.dim(2), h.dim(3), h.dim(4)});
  h = temporal_mix.forward(h);   // frame axis as channels, [N,T,H',W']
  h = gap2d_spatial(h);          // [N,T]
  h = relu(temporal_fc1.forward(h));
  return sigmoid(temporal_fc2.forward(h));
}

Tensor StAbnModel::fuse_attention(const Tensor& features, const Tensor& spatial,
                                  const Tensor& temporal) {
  if (features.ndim() != 5 || spatial.ndim() != 5 || temporal.ndim() != 2 ||
      spatial.dim(0) != features.dim(0) || spatial.dim(2) != features.dim(2) ||
      spatial.dim(3) != features.dim(3) || spatial.dim(4) != features.dim(4) ||
      temporal.dim(0) != features.dim(0) || temporal.dim(1) != features.dim(2)) {
    throw InternalError("fuse_attention wiring mismatch: f=" + shape_str(features.shape()) +
                        " M_s=" + shape_str(spatial.shape()) +
                        " M_t=" + shape_str(temporal.shape()));
  }
  // f_s' = (1 + M_s) * f, broadcast over channels.
  Tensor f_s = add(features, mul(spatial, features));
  // f_t' = M_t * f, broadcast over channels and space.
  Tensor m_t = reshape(temporal, {temporal.dim(0), 1, temporal.dim(1), 1, 1});
  Tensor f_t = mul(m_t, features);
  Tensor cat = concat({f_s, f_t}, 1);
  return fusion_conv.forward(cat);
}

Tensor StAbnModel::perception_forward(const Tensor& fused, bool training,
                                      std::mt19937_64& rng) {
  Tensor h = fused;
  for (auto& blk : perception) h = blk.forward(h, training);
  h = gap3d(h);
  h = dropout(h, config.dropout_rate, training, rng);
  return classifier.forward(h);
}

ForwardOutput StAbnModel::forward(const Tensor& video, bool training,
                                  std::mt19937_64& rng) {
  return forward_with_override(video, AttentionOverride{}, rng, training);
}

namespace {

Tensor apply_override(const Tensor& m, AttentionOverride::Mode mode, double constant) {
  switch (mode) {
    case AttentionOverride::Mode::AsComputed:
      return m;
    case AttentionOverride::Mode::Inverted:
      return add_scalar(scale(m, -1.0), 1.0);
    case AttentionOverride::Mode::Constant:
      if (constant < 0.0 || constant > 1.0) {
        throw InputError("attention override constant must be in [0,1], got " + std::to_string(constant));
      }
      return Tensor::full(m.shape(), constant);
  }
  throw InternalError("unreachable override mode");
}

}  // namespace

ForwardOutput StAbnModel::forward_with_override(const Tensor& video,
                                                const AttentionOverride& override,
                                                std::mt19937_64& rng) {
  return forward_with_override(video, override, rng, false);
}

ForwardOutput StAbnModel::forward_with_override(const Tensor& video,
                                                const AttentionOverride& override,
                                                std::mt19937_64& rng,
                                                bool training) {
  const Shape expect = {video.defined() && video.ndim() == 5 ? video.dim(0) : 1,
                        config.input_channels, config.frames, config.height, config.width};
  if (!video.defined() || video.ndim() != 5 || video.shape() != expect) {
    throw InputError("video shape " + (video.defined() ? shape_str(video.shape()) : "<undefined>") +
                     " does not match configured " + shape_str(expect));
  }
  Tensor f = extract_features(video, training);
  auto [att_logits, shared] = attention_branch_forward(f, training, rng);
  AttentionPair att;
  att.spatial = spatial_attention(shared);
  att.temporal = temporal_attention(shared);
  Tensor m_s = apply_override(att.spatial, override.spatial, override.spatial_constant);
  Tensor m_t = apply_override(att.temporal, override.temporal, override.temporal_constant);
  Tensor fused = fuse_attention(f, m_s, m_t);
  Tensor per_logits = perception_forward(fused, training, rng);
  return {att_logits, per_logits, att};
}

}  // namespace stabn
