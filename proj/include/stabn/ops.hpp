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
#ifndef STABN_OPS_HPP_
#define STABN_OPS_HPP_

#include <array>
#include <random>
#include <vector>

#include "stabn/tensor.hpp"

namespace stabn {

// Convolution layer geometry. Convolution here is cross-correlation with
// zero padding (no kernel flip). For 2D convolutions the temporal entries
// must be kT=1, sT=1, pT=0.
struct ConvSpec {
  int64_t out_channels = 1;
  int64_t in_channels = 1;
  std::array<int64_t, 3> kernel = {1, 1, 1};   // kT, kH, kW
  std::array<int64_t, 3> stride = {1, 1, 1};   // sT, sH, sW
  std::array<int64_t, 3> padding = {0, 0, 0};  // pT, pH, pW
  bool bias = true;

  void validate() const;
  // floor((in + 2p - k) / s) + 1 per axis; throws ConfigError if any
  // output extent would be < 1.
  std::array<int64_t, 3> out_extents(int64_t t, int64_t h, int64_t w) const;
};

// x: [N,C,T,H,W], weights: [Cout,C,kT,kH,kW], bias: [Cout] or undefined.
Tensor conv3d(const Tensor& x, const ConvSpec& spec, const Tensor& weights,
              const Tensor& bias);
// x: [N,C,H,W], weights: [Cout,C,kH,kW], bias: [Cout] or undefined.
Tensor conv2d(const Tensor& x, const ConvSpec& spec, const Tensor& weights,
              const Tensor& bias);
// x: [N,D], weights: [Dout,D], bias: [Dout] or undefined.
Tensor linear(const Tensor& x, const Tensor& weights, const Tensor& bias);

Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);

// [N,C,T,H,W] -> [N,C], mean over T,H,W.
Tensor gap3d(const Tensor& x);
// [N,T,H,W] -> [N,T], mean over H,W only.
Tensor gap2d_spatial(const Tensor& x);

// Mean over the batch of -log softmax(logits)[label]; max-stabilized.
Tensor softmax_cross_entropy(const Tensor& logits,
                             const std::vector<int>& labels);

// Inverted dropout: training zeroes with probability `rate` and scales
// survivors by 1/(1-rate); inference is the identity.
Tensor dropout(const Tensor& x, double rate, bool training,
               std::mt19937_64& rng);

// Learned per-channel scale/shift plus running statistics. Channel axis is
// axis 1; statistics reduce over all other axes.
struct BatchNormState {
  Tensor gamma;         // [C]
  Tensor beta;          // [C]
  Tensor running_mean;  // [C], mutated by training-mode forward
  Tensor running_var;   // [C]
  double momentum = 0.9;
  double eps = 1e-5;
};
BatchNormState make_batchnorm(int64_t channels);
Tensor batchnorm(const Tensor& x, BatchNormState& state, bool training);

// Elementwise with numpy-style broadcasting (size-1 axes stretch);
// gradients reduce over broadcast axes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);

// Sum of all elements as a scalar [1] tensor.
Tensor sum(const Tensor& x);

// Concatenate along `axis`; all other extents must agree.
Tensor concat(const std::vector<Tensor>& parts, int axis);

// Same data, new shape (numel must match). Gradient passes through.
Tensor reshape(const Tensor& x, Shape new_shape);

}  // namespace stabn

#endif  // STABN_OPS_HPP_
