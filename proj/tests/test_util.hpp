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
#ifndef STABN_TESTS_TEST_UTIL_HPP_
#define STABN_TESTS_TEST_UTIL_HPP_

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "stabn/ops.hpp"
#include "stabn/tensor.hpp"

namespace stabn::testutil {

inline Tensor random_tensor(const Shape& shape, std::mt19937_64& rng,
                            double lo = -1.0, double hi = 1.0,
                            bool requires_grad = false) {
  Tensor t = Tensor::zeros(shape, requires_grad);
  std::uniform_real_distribution<double> d(lo, hi);
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = d(rng);
  return t;
}

// Direct-loop convolution oracle, independent of the im2col path.
inline Tensor naive_conv3d(const Tensor& x, const ConvSpec& s, const Tensor& w,
                           const Tensor& bias) {
  const int64_t n = x.dim(0), cin = x.dim(1), t = x.dim(2), h = x.dim(3), ww = x.dim(4);
  const auto [to, ho, wo] = s.out_extents(t, h, ww);
  Tensor out = Tensor::zeros({n, s.out_channels, to, ho, wo});
  for (int64_t b = 0; b < n; ++b)
    for (int64_t co = 0; co < s.out_channels; ++co)
      for (int64_t ot = 0; ot < to; ++ot)
        for (int64_t oh = 0; oh < ho; ++oh)
          for (int64_t ow = 0; ow < wo; ++ow) {
            double acc = bias.defined() ? bias.data()[co] : 0.0;
            for (int64_t ci = 0; ci < cin; ++ci)
              for (int64_t kt = 0; kt < s.kernel[0]; ++kt)
                for (int64_t kh = 0; kh < s.kernel[1]; ++kh)
                  for (int64_t kw = 0; kw < s.kernel[2]; ++kw) {
                    const int64_t it = ot * s.stride[0] - s.padding[0] + kt;
                    const int64_t ih = oh * s.stride[1] - s.padding[1] + kh;
                    const int64_t iw = ow * s.stride[2] - s.padding[2] + kw;
                    if (it < 0 || it >= t || ih < 0 || ih >= h || iw < 0 || iw >= ww) continue;
                    const double xv = x.data()[(((b * cin + ci) * t + it) * h + ih) * ww + iw];
                    const double wv = w.data()[(((co * cin + ci) * s.kernel[0] + kt) * s.kernel[1] + kh) * s.kernel[2] + kw];
                    acc += xv * wv;
                  }
            out.data()[(((b * s.out_channels + co) * to + ot) * ho + oh) * wo + ow] = acc;
          }
  return out;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

// Central-difference check of every element of every listed parameter
// against the gradient recorded by one backward pass. `loss_fn` must build
// a fresh graph per call and be deterministic. Returns the max relative
// error, scaled by max(1, |fd|, |grad|).
inline double gradcheck(const std::function<Tensor()>& loss_fn,
                        std::vector<Tensor> params, double h = 1e-5) {
  for (Tensor& p : params) p.zero_grad();
  Tensor loss = loss_fn();
  loss.backward();
  std::vector<std::vector<double>> grads;
  for (Tensor& p : params) {
    const double* g = p.grad();
    grads.emplace_back(p.numel(), 0.0);
    if (g) std::copy(g, g + p.numel(), grads.back().begin());
  }
  double worst = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi];
    for (int64_t i = 0; i < p.numel(); ++i) {
      const double orig = p.data()[i];
      p.data()[i] = orig + h;
      const double lp = loss_fn().item();
      p.data()[i] = orig - h;
      const double lm = loss_fn().item();
      p.data()[i] = orig;
      const double fd = (lp - lm) / (2.0 * h);
      const double g = grads[pi][static_cast<size_t>(i)];
      const double rel = std::abs(fd - g) / std::max({1.0, std::abs(fd), std::abs(g)});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace stabn::testutil

#endif  // STABN_TESTS_TEST_UTIL_HPP_
