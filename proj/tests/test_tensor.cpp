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
#include <random>

#include "stabn/errors.hpp"
#include "stabn/ops.hpp"
#include "stabn/tensor.hpp"
#include "test_util.hpp"

using namespace stabn;
using namespace stabn::testutil;

TEST_CASE("conv3d: single multiply and identity kernel") {
  Tensor x = Tensor::from_data({1, 1, 1, 1, 1}, {2.0});
  Tensor w = Tensor::from_data({1, 1, 1, 1, 1}, {3.0});
  ConvSpec spec{1, 1, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, false};
  Tensor y = conv3d(x, spec, w, Tensor());
  CHECK(y.item() == doctest::Approx(6.0));

  std::mt19937_64 rng(1);
  Tensor x2 = random_tensor({2, 1, 3, 4, 5}, rng);
  Tensor id = Tensor::from_data({1, 1, 1, 1, 1}, {1.0});
  Tensor y2 = conv3d(x2, spec, id, Tensor());
  CHECK(max_abs_diff(x2, y2) == 0.0);
}

TEST_CASE("conv3d matches the direct-loop oracle") {
  std::mt19937_64 rng(42);
  ConvSpec spec{2, 2, {2, 2, 2}, {1, 1, 1}, {0, 0, 0}, true};
  Tensor x = random_tensor({1, 2, 3, 4, 4}, rng);
  Tensor w = random_tensor({2, 2, 2, 2, 2}, rng);
  Tensor b = random_tensor({2}, rng);
  CHECK(max_abs_diff(conv3d(x, spec, w, b), naive_conv3d(x, spec, w, b)) < 1e-12);

  // Strided + padded case.
  ConvSpec spec2{3, 2, {3, 3, 3}, {1, 2, 2}, {1, 1, 1}, true};
  Tensor x2 = random_tensor({2, 2, 4, 6, 6}, rng);
  Tensor w2 = random_tensor({3, 2, 3, 3, 3}, rng);
  Tensor b2 = random_tensor({3}, rng);
  CHECK(max_abs_diff(conv3d(x2, spec2, w2, b2), naive_conv3d(x2, spec2, w2, b2)) < 1e-12);
}

TEST_CASE("conv3d rejects mismatched shapes with the offending dimension") {
  std::mt19937_64 rng(3);
  ConvSpec spec{2, 3, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, false};
  Tensor x = random_tensor({1, 2, 2, 2, 2}, rng);  // 2 channels, spec wants 3
  Tensor w = random_tensor({2, 3, 1, 1, 1}, rng);
  CHECK_THROWS_WITH_AS(conv3d(x, spec, w, Tensor()),
                       doctest::Contains("channel mismatch"), ConfigError);
}

TEST_CASE("conv2d: scalar case, identity, oracle") {
  Tensor x = Tensor::from_data({1, 1, 1, 1}, {5.0});
  Tensor w = Tensor::from_data({1, 1, 1, 1}, {2.0});
  ConvSpec spec{1, 1, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, false};
  CHECK(conv2d(x, spec, w, Tensor()).item() == doctest::Approx(10.0));

  std::mt19937_64 rng(7);
  Tensor x2 = random_tensor({2, 1, 5, 4}, rng);
  Tensor id = Tensor::from_data({1, 1, 1, 1}, {1.0});
  CHECK(max_abs_diff(conv2d(x2, spec, id, Tensor()), x2) == 0.0);

  ConvSpec spec2{2, 3, {1, 3, 3}, {1, 2, 2}, {0, 1, 1}, true};
  Tensor x3 = random_tensor({2, 3, 6, 6}, rng);
  Tensor w3 = random_tensor({2, 3, 3, 3}, rng);
  Tensor b3 = random_tensor({2}, rng);
  // 2D oracle via the 3D one with a unit temporal axis.
  Tensor x3d = reshape(x3, {2, 3, 1, 6, 6});
  Tensor w3d = reshape(w3, {2, 3, 1, 3, 3});
  Tensor want = naive_conv3d(x3d, spec2, w3d, b3);
  Tensor got = conv2d(x3, spec2, w3, b3);
  CHECK(got.shape() == Shape{2, 2, 3, 3});
  double m = 0.0;
  for (int64_t i = 0; i < got.numel(); ++i) m = std::max(m, std::abs(got.data()[i] - want.data()[i]));
  CHECK(m < 1e-12);
}

TEST_CASE("linear: identity, hand case, dot-product oracle") {
  Tensor x = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor id = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  Tensor zb = Tensor::zeros({2});
  CHECK(max_abs_diff(linear(x, id, zb), x) == 0.0);

  Tensor x2 = Tensor::from_data({1, 2}, {1, 2});
  Tensor w2 = Tensor::from_data({1, 2}, {3, 4});
  Tensor b2 = Tensor::from_data({1}, {1});
  CHECK(linear(x2, w2, b2).item() == doctest::Approx(12.0));

  std::mt19937_64 rng(9);
  Tensor x3 = random_tensor({3, 5}, rng);
  Tensor w3 = random_tensor({4, 5}, rng);
  Tensor b3 = random_tensor({4}, rng);
  Tensor y = linear(x3, w3, b3);
  for (int64_t i = 0; i < 3; ++i) {
    for (int64_t o = 0; o < 4; ++o) {
      double dot = b3.data()[o];
      for (int64_t j = 0; j < 5; ++j) dot += x3.data()[i * 5 + j] * w3.data()[o * 5 + j];
      CHECK(std::abs(y.data()[i * 4 + o] - dot) < 1e-12);
    }
  }

  Tensor bad_w = Tensor::zeros({4, 6});
  CHECK_THROWS_AS(linear(x3, bad_w, Tensor()), ConfigError);
}

TEST_CASE("sigmoid and relu point values and symmetry") {
  Tensor z = Tensor::from_data({1}, {0.0});
  CHECK(sigmoid(z).item() == doctest::Approx(0.5));
  Tensor neg = Tensor::from_data({1}, {-3.0});
  Tensor pos = Tensor::from_data({1}, {3.0});
  CHECK(relu(neg).item() == 0.0);
  CHECK(relu(pos).item() == 3.0);

  std::mt19937_64 rng(11);
  Tensor x = random_tensor({100}, rng, -5.0, 5.0);
  Tensor s1 = sigmoid(x);
  Tensor s2 = sigmoid(scale(x, -1.0));
  for (int64_t i = 0; i < x.numel(); ++i) {
    CHECK(s1.data()[i] > 0.0);
    CHECK(s1.data()[i] < 1.0);
    CHECK(s1.data()[i] + s2.data()[i] == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("gap3d: constants, mean, finite differences") {
  Tensor c = Tensor::full({2, 3, 2, 2, 2}, 7.5);
  Tensor g = gap3d(c);
  for (int64_t i = 0; i < g.numel(); ++i) CHECK(g.data()[i] == doctest::Approx(7.5));

  Tensor v = Tensor::from_data({1, 1, 1, 2, 2}, {1, 2, 3, 4});
  CHECK(gap3d(v).item() == doctest::Approx(2.5));

  std::mt19937_64 rng(13);
  Tensor x = random_tensor({2, 2, 2, 3, 3}, rng, -1, 1, true);
  Tensor wsum = random_tensor({2, 2}, rng);
  auto loss = [&] { return sum(mul(gap3d(x), wsum)); };
  CHECK(gradcheck(loss, {x}) < 1e-6);
}

TEST_CASE("gap2d_spatial: constants, mean, finite differences") {
  Tensor c = Tensor::full({2, 4, 3, 3}, -2.0);
  Tensor g = gap2d_spatial(c);
  CHECK(g.shape() == Shape{2, 4});
  for (int64_t i = 0; i < g.numel(); ++i) CHECK(g.data()[i] == doctest::Approx(-2.0));

  Tensor v = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  CHECK(gap2d_spatial(v).item() == doctest::Approx(2.5));

  std::mt19937_64 rng(17);
  Tensor x = random_tensor({2, 3, 2, 2}, rng, -1, 1, true);
  Tensor wsum = random_tensor({2, 3}, rng);
  auto loss = [&] { return sum(mul(gap2d_spatial(x), wsum)); };
  CHECK(gradcheck(loss, {x}) < 1e-6);
}

TEST_CASE("softmax cross entropy values and gradient") {
  Tensor uniform = Tensor::zeros({1, 4});
  CHECK(softmax_cross_entropy(uniform, {2}).item() == doctest::Approx(std::log(4.0)));

  Tensor dominant = Tensor::from_data({1, 3}, {1000.0, 0.0, 0.0});
  CHECK(softmax_cross_entropy(dominant, {0}).item() == doctest::Approx(0.0));

  CHECK_THROWS_AS(softmax_cross_entropy(uniform, {4}), InputError);
  CHECK_THROWS_AS(softmax_cross_entropy(uniform, {-1}), InputError);

  std::mt19937_64 rng(19);
  Tensor logits = random_tensor({3, 5}, rng, -2, 2, true);
  std::vector<int> labels = {4, 0, 2};
  auto loss = [&] { return softmax_cross_entropy(logits, labels); };
  CHECK(gradcheck(loss, {logits}) < 1e-6);
}

TEST_CASE("dropout: identity modes and survivor scaling") {
  std::mt19937_64 rng(23);
  Tensor x = random_tensor({100}, rng);
  std::mt19937_64 drop_rng(5);
  Tensor same = dropout(x, 0.0, true, drop_rng);
  CHECK(max_abs_diff(same, x) == 0.0);
  Tensor same2 = dropout(x, 0.5, false, drop_rng);
  CHECK(max_abs_diff(same2, x) == 0.0);

  Tensor ones = Tensor::full({100000}, 1.0);
  Tensor dropped = dropout(ones, 0.5, true, drop_rng);
  double mean = 0.0;
  for (int64_t i = 0; i < dropped.numel(); ++i) mean += dropped.data()[i];
  mean /= static_cast<double>(dropped.numel());
  CHECK(std::abs(mean - 1.0) < 0.02);

  CHECK_THROWS_AS(dropout(x, 1.0, true, drop_rng), InputError);
}

TEST_CASE("batchnorm: standardization, identity, gradient") {
  std::mt19937_64 rng(29);
  Tensor x = random_tensor({4, 3, 2, 2, 2}, rng, -3, 3, true);
  BatchNormState st = make_batchnorm(3);
  Tensor y = batchnorm(x, st, true);
  // gamma=1, beta=0: per-channel mean ~0, variance ~1.
  const int64_t m = 2 * 2 * 2;
  for (int64_t c = 0; c < 3; ++c) {
    double mean = 0.0, var = 0.0;
    for (int64_t n = 0; n < 4; ++n)
      for (int64_t j = 0; j < m; ++j) mean += y.data()[(n * 3 + c) * m + j];
    mean /= 4 * m;
    for (int64_t n = 0; n < 4; ++n)
      for (int64_t j = 0; j < m; ++j) {
        const double d = y.data()[(n * 3 + c) * m + j] - mean;
        var += d * d;
      }
    var /= 4 * m;
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }

  // Unit-variance zero-mean input passes through nearly unchanged.
  std::vector<double> vals;
  for (int i = 0; i < 64; ++i) vals.push_back((i % 2 == 0) ? 1.0 : -1.0);
  Tensor pm = Tensor::from_data({8, 2, 4}, std::vector<double>(vals.begin(), vals.begin() + 64));
  BatchNormState st2 = make_batchnorm(2);
  Tensor y2 = batchnorm(pm, st2, true);
  CHECK(max_abs_diff(y2, pm) < 1e-4);

  BatchNormState st3 = make_batchnorm(3);
  Tensor wsum = random_tensor(x.shape(), rng);
  auto loss = [&] { return sum(mul(batchnorm(x, st3, true), wsum)); };
  CHECK(gradcheck(loss, {x, st3.gamma, st3.beta}, 1e-5) < 1e-5);
}

TEST_CASE("backward: leaf gradients, shared subgraphs") {
  Tensor x = Tensor::from_data({3}, {1, 2, 3});
  Tensor w = Tensor::from_data({3}, {0.5, -1, 2}, true);
  sum(mul(w, x)).backward();
  REQUIRE(w.grad() != nullptr);
  for (int64_t i = 0; i < 3; ++i) CHECK(w.grad()[i] == doctest::Approx(x.data()[i]));

  // Two consumers of one tensor: gradients sum over both paths.
  Tensor a = Tensor::from_data({2}, {1.0, -2.0}, true);
  Tensor b = Tensor::from_data({2}, {3.0, 4.0});
  Tensor via_mul = mul(a, b);
  Tensor via_add = add(a, b);
  sum(add(via_mul, via_add)).backward();
  for (int64_t i = 0; i < 2; ++i) {
    CHECK(a.grad()[i] == doctest::Approx(b.data()[i] + 1.0));
  }

  Tensor non_scalar = Tensor::zeros({2}, true);
  CHECK_THROWS_AS(non_scalar.backward(), InputError);
}

TEST_CASE("broadcasting add/mul semantics and gradients") {
  std::mt19937_64 rng(31);
  Tensor f = random_tensor({2, 3, 4, 2, 2}, rng);
  Tensor mt = random_tensor({1, 1, 4, 1, 1}, rng);
  Tensor weighted = mul(f, mt);
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t t = 0; t < 4; ++t)
        for (int64_t j = 0; j < 4; ++j) {
          const int64_t i = (((n * 3 + c) * 4 + t) * 4) + j;
          CHECK(weighted.data()[i] == doctest::Approx(f.data()[i] * mt.data()[t]));
        }

  Tensor zero = Tensor::zeros(f.shape());
  CHECK(max_abs_diff(add(f, zero), f) == 0.0);

  Tensor a = random_tensor({2, 1, 3}, rng, -1, 1, true);
  Tensor b = random_tensor({2, 4, 1}, rng, -1, 1, true);
  Tensor wsum = random_tensor({2, 4, 3}, rng);
  auto loss = [&] { return sum(mul(mul(a, b), wsum)); };
  CHECK(gradcheck(loss, {a, b}) < 1e-6);

  Tensor bad = Tensor::zeros({3, 2});
  CHECK_THROWS_AS(add(a, bad), ConfigError);
}

TEST_CASE("sub, scale, add_scalar, concat, reshape, sum backward") {
  std::mt19937_64 rng(37);
  Tensor a = random_tensor({2, 3}, rng, -1, 1, true);
  Tensor b = random_tensor({2, 3}, rng, -1, 1, true);
  Tensor c = random_tensor({2, 2}, rng, -1, 1, true);
  Tensor wsum = random_tensor({2, 5}, rng);
  auto loss = [&] {
    Tensor cat = concat({sub(a, b), add_scalar(scale(c, 2.0), 1.0)}, 1);
    return sum(mul(reshape(cat, {2, 5}), wsum));
  };
  CHECK(gradcheck(loss, {a, b, c}) < 1e-6);
}

TEST_CASE("randomized ops are reproducible under a fixed seed") {
  auto run = [] {
    std::mt19937_64 rng(123);
    Tensor x = random_tensor({64}, rng, -1, 1);
    std::mt19937_64 drop(99);
    return dropout(x, 0.3, true, drop);
  };
  Tensor r1 = run();
  Tensor r2 = run();
  CHECK(max_abs_diff(r1, r2) == 0.0);
}

TEST_CASE("no-grad mode records no edges") {
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  NoGradGuard ng;
  Tensor y = sum(mul(x, x));
  CHECK_FALSE(y.requires_grad());
}
