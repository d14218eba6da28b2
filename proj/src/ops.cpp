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
#include "stabn/ops.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstring>

#include "stabn/errors.hpp"

namespace stabn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ColMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;
using RowMap = Eigen::Map<RowMat>;
using ConstRowMap = Eigen::Map<const RowMat>;
using ColMap = Eigen::Map<ColMat>;

Tensor make_result(Shape shape, std::vector<Tensor> parents,
                   std::function<void(detail::Node&)> backward_fn) {
  bool rg = false;
  if (grad_enabled()) {
    for (const Tensor& p : parents) {
      if (p.defined() && p.requires_grad()) rg = true;
    }
  }
  Tensor out = Tensor::zeros(std::move(shape), rg);
  if (rg) {
    auto n = out.node();
    for (const Tensor& p : parents) {
      if (p.defined()) n->parents.push_back(p.node());
    }
    n->backward_fn = std::move(backward_fn);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Convolution (im2col + GEMM)

struct ConvDims {
  int64_t n, cin, t, h, w;
  int64_t cout, to, ho, wo;
  int64_t ck;  // cin * kT * kH * kW
  int64_t p;   // to * ho * wo
};

ConvDims conv_dims(const Tensor& x, const ConvSpec& spec, const Tensor& w,
                   const Tensor& bias) {
  spec.validate();
  if (x.ndim() != 5) {
    throw ConfigError("conv3d input must be 5-d [N,C,T,H,W], got " + shape_str(x.shape()));
  }
  ConvDims d;
  d.n = x.dim(0); d.cin = x.dim(1); d.t = x.dim(2); d.h = x.dim(3); d.w = x.dim(4);
  if (d.cin != spec.in_channels) {
    throw ConfigError("conv input channel mismatch: tensor has " + std::to_string(d.cin) +
                      ", spec expects " + std::to_string(spec.in_channels));
  }
  Shape expect_w = {spec.out_channels, spec.in_channels, spec.kernel[0], spec.kernel[1], spec.kernel[2]};
  if (w.shape() != expect_w) {
    throw ConfigError("conv weight shape " + shape_str(w.shape()) + " does not match spec " + shape_str(expect_w));
  }
  if (spec.bias != bias.defined()) {
    throw ConfigError(spec.bias ? "conv spec requires a bias tensor" : "conv spec forbids a bias tensor");
  }
  if (bias.defined() && bias.shape() != Shape{spec.out_channels}) {
    throw ConfigError("conv bias shape " + shape_str(bias.shape()) + " must be [" + std::to_string(spec.out_channels) + "]");
  }
  auto [to, ho, wo] = spec.out_extents(d.t, d.h, d.w);
  d.cout = spec.out_channels; d.to = to; d.ho = ho; d.wo = wo;
  d.ck = d.cin * spec.kernel[0] * spec.kernel[1] * spec.kernel[2];
  d.p = d.to * d.ho * d.wo;
  return d;
}

// col is CK x P row-major: row = (c, kt, kh, kw), column = output location
// ((to*Ho)+ho)*Wo+wo. Row-major keeps the innermost walk over output
// locations contiguous in both col and (for unit width stride) the input
// row, so the hot loops reduce to memcpy/span operations.
void im2col(const double* xn, const ConvSpec& s, const ConvDims& d, double* col) {
  const int64_t kT = s.kernel[0], kH = s.kernel[1], kW = s.kernel[2];
  const int64_t sT = s.stride[0], sH = s.stride[1], sW = s.stride[2];
  double* c = col;
  for (int64_t ci = 0; ci < d.cin; ++ci) {
    const double* xc = xn + ci * d.t * d.h * d.w;
    for (int64_t it = 0; it < kT; ++it) {
      for (int64_t ih = 0; ih < kH; ++ih) {
        for (int64_t iw = 0; iw < kW; ++iw) {
          const int64_t wbase = iw - s.padding[2];
          for (int64_t to = 0; to < d.to; ++to) {
            const int64_t t = to * sT - s.padding[0] + it;
            if (t < 0 || t >= d.t) {
              std::memset(c, 0, sizeof(double) * static_cast<size_t>(d.ho * d.wo));
              c += d.ho * d.wo;
              continue;
            }
            for (int64_t ho = 0; ho < d.ho; ++ho) {
              const int64_t h = ho * sH - s.padding[1] + ih;
              if (h < 0 || h >= d.h) {
                std::memset(c, 0, sizeof(double) * static_cast<size_t>(d.wo));
                c += d.wo;
                continue;
              }
              const double* row = xc + (t * d.h + h) * d.w;
              if (sW == 1) {
                const int64_t lo = std::max<int64_t>(0, -wbase);
                const int64_t hi = std::max(lo, std::min(d.wo, d.w - wbase));
                for (int64_t i = 0; i < lo; ++i) c[i] = 0.0;
                if (hi > lo) {
                  std::memcpy(c + lo, row + wbase + lo, sizeof(double) * static_cast<size_t>(hi - lo));
                }
                for (int64_t i = hi; i < d.wo; ++i) c[i] = 0.0;
              } else {
                for (int64_t wo = 0; wo < d.wo; ++wo) {
                  const int64_t ww = wbase + wo * sW;
                  c[wo] = (ww >= 0 && ww < d.w) ? row[ww] : 0.0;
                }
              }
              c += d.wo;
            }
          }
        }
      }
    }
  }
}

void col2im_accum(const double* col, const ConvSpec& s, const ConvDims& d, double* gxn) {
  const int64_t kT = s.kernel[0], kH = s.kernel[1], kW = s.kernel[2];
  const int64_t sT = s.stride[0], sH = s.stride[1], sW = s.stride[2];
  const double* c = col;
  for (int64_t ci = 0; ci < d.cin; ++ci) {
    double* gc = gxn + ci * d.t * d.h * d.w;
    for (int64_t it = 0; it < kT; ++it) {
      for (int64_t ih = 0; ih < kH; ++ih) {
        for (int64_t iw = 0; iw < kW; ++iw) {
          const int64_t wbase = iw - s.padding[2];
          for (int64_t to = 0; to < d.to; ++to) {
            const int64_t t = to * sT - s.padding[0] + it;
            if (t < 0 || t >= d.t) { c += d.ho * d.wo; continue; }
            for (int64_t ho = 0; ho < d.ho; ++ho) {
              const int64_t h = ho * sH - s.padding[1] + ih;
              if (h < 0 || h >= d.h) { c += d.wo; continue; }
              double* row = gc + (t * d.h + h) * d.w;
              if (sW == 1) {
                const int64_t lo = std::max<int64_t>(0, -wbase);
                const int64_t hi = std::max(lo, std::min(d.wo, d.w - wbase));
                for (int64_t wo = lo; wo < hi; ++wo) row[wbase + wo] += c[wo];
              } else {
                for (int64_t wo = 0; wo < d.wo; ++wo) {
                  const int64_t ww = wbase + wo * sW;
                  if (ww >= 0 && ww < d.w) row[ww] += c[wo];
                }
              }
              c += d.wo;
            }
          }
        }
      }
    }
  }
}

}  // namespace

void ConvSpec::validate() const {
  if (out_channels < 1 || in_channels < 1) {
    throw ConfigError("conv channels must be >= 1");
  }
  for (int i = 0; i < 3; ++i) {
    if (kernel[i] < 1) throw ConfigError("conv kernel extent " + std::to_string(i) + " must be >= 1");
    if (stride[i] < 1) throw ConfigError("conv stride " + std::to_string(i) + " must be >= 1");
    if (padding[i] < 0) throw ConfigError("conv padding " + std::to_string(i) + " must be >= 0");
  }
}

std::array<int64_t, 3> ConvSpec::out_extents(int64_t t, int64_t h, int64_t w) const {
  std::array<int64_t, 3> in = {t, h, w};
  std::array<int64_t, 3> out;
  static const char* names[3] = {"T", "H", "W"};
  for (int i = 0; i < 3; ++i) {
    out[i] = (in[i] + 2 * padding[i] - kernel[i]) / stride[i] + 1;
    if (in[i] + 2 * padding[i] < kernel[i] || out[i] < 1) {
      throw ConfigError(std::string("conv output extent on axis ") + names[i] +
                        " would be < 1 (in=" + std::to_string(in[i]) +
                        ", k=" + std::to_string(kernel[i]) +
                        ", s=" + std::to_string(stride[i]) +
                        ", p=" + std::to_string(padding[i]) + ")");
    }
  }
  return out;
}

Tensor conv3d(const Tensor& x, const ConvSpec& spec, const Tensor& weights,
              const Tensor& bias) {
  const ConvDims d = conv_dims(x, spec, weights, bias);
  Tensor out = make_result(
      {d.n, d.cout, d.to, d.ho, d.wo}, {x, weights, bias},
      [x, weights, bias, spec, d](detail::Node& self) {
        auto xn = x.node();
        auto wn = weights.node();
        ConstRowMap wmat(wn->data.data(), d.cout, d.ck);
        detail::AlignedVec col(static_cast<size_t>(d.ck * d.p));
        detail::AlignedVec gcol;
        const bool need_gx = xn->requires_grad;
        const bool need_gw = wn->requires_grad;
        if (need_gx) { gcol.resize(col.size()); xn->ensure_grad(); }
        if (need_gw) wn->ensure_grad();
        detail::Node* bn = nullptr;
        if (bias.defined() && bias.requires_grad()) { bn = bias.node().get(); bn->ensure_grad(); }
        for (int64_t n = 0; n < d.n; ++n) {
          ConstRowMap gout(self.grad.data() + n * d.cout * d.p, d.cout, d.p);
          if (need_gw || need_gx) {
            if (need_gw) {
              im2col(xn->data.data() + n * d.cin * d.t * d.h * d.w, spec, d, col.data());
              ConstRowMap colmap(col.data(), d.ck, d.p);
              RowMap gw(wn->grad.data(), d.cout, d.ck);
              gw.noalias() += gout * colmap.transpose();
            }
            if (need_gx) {
              RowMap gcolmap(gcol.data(), d.ck, d.p);
              gcolmap.noalias() = wmat.transpose() * gout;
              col2im_accum(gcol.data(), spec, d, xn->grad.data() + n * d.cin * d.t * d.h * d.w);
            }
          }
          if (bn) {
            Eigen::Map<Eigen::VectorXd> gb(bn->grad.data(), d.cout);
            gb.noalias() += gout.rowwise().sum();
          }
        }
      });
  // Forward pass.
  ConstRowMap wmat(weights.data(), d.cout, d.ck);
  detail::AlignedVec col(static_cast<size_t>(d.ck * d.p));
  for (int64_t n = 0; n < d.n; ++n) {
    im2col(x.data() + n * d.cin * d.t * d.h * d.w, spec, d, col.data());
    ConstRowMap colmap(col.data(), d.ck, d.p);
    RowMap o(out.data() + n * d.cout * d.p, d.cout, d.p);
    o.noalias() = wmat * colmap;
    if (bias.defined()) {
      Eigen::Map<const Eigen::VectorXd> b(bias.data(), d.cout);
      o.colwise() += b;
    }
  }
  return out;
}

Tensor conv2d(const Tensor& x, const ConvSpec& spec, const Tensor& weights,
              const Tensor& bias) {
  if (x.ndim() != 4) {
    throw ConfigError("conv2d input must be 4-d [N,C,H,W], got " + shape_str(x.shape()));
  }
  if (spec.kernel[0] != 1 || spec.stride[0] != 1 || spec.padding[0] != 0) {
    throw ConfigError("conv2d spec must have kT=1, sT=1, pT=0");
  }
  if (weights.ndim() != 4) {
    throw ConfigError("conv2d weights must be 4-d [Cout,C,kH,kW], got " + shape_str(weights.shape()));
  }
  Tensor x5 = reshape(x, {x.dim(0), x.dim(1), 1, x.dim(2), x.dim(3)});
  Tensor w5 = reshape(weights, {weights.dim(0), weights.dim(1), 1, weights.dim(2), weights.dim(3)});
  Tensor out5 = conv3d(x5, spec, w5, bias);
  return reshape(out5, {out5.dim(0), out5.dim(1), out5.dim(3), out5.dim(4)});
}

Tensor linear(const Tensor& x, const Tensor& weights, const Tensor& bias) {
  if (x.ndim() != 2 || weights.ndim() != 2) {
    throw ConfigError("linear expects 2-d input and weights, got " +
                      shape_str(x.shape()) + " and " + shape_str(weights.shape()));
  }
  const int64_t n = x.dim(0), din = x.dim(1);
  const int64_t dout = weights.dim(0);
  if (weights.dim(1) != din) {
    throw ConfigError("linear inner dimension mismatch: input " + std::to_string(din) +
                      " vs weights " + std::to_string(weights.dim(1)));
  }
  if (bias.defined() && bias.shape() != Shape{dout}) {
    throw ConfigError("linear bias shape " + shape_str(bias.shape()) + " must be [" + std::to_string(dout) + "]");
  }
  Tensor out = make_result(
      {n, dout}, {x, weights, bias},
      [x, weights, bias, n, din, dout](detail::Node& self) {
        ConstRowMap go(self.grad.data(), n, dout);
        auto xn = x.node();
        auto wn = weights.node();
        if (xn->requires_grad) {
          xn->ensure_grad();
          RowMap gx(xn->grad.data(), n, din);
          gx.noalias() += go * ConstRowMap(wn->data.data(), dout, din);
        }
        if (wn->requires_grad) {
          wn->ensure_grad();
          RowMap gw(wn->grad.data(), dout, din);
          gw.noalias() += go.transpose() * ConstRowMap(xn->data.data(), n, din);
        }
        if (bias.defined() && bias.requires_grad()) {
          auto bnode = bias.node();
          bnode->ensure_grad();
          Eigen::Map<Eigen::RowVectorXd> gb(bnode->grad.data(), dout);
          gb.noalias() += go.colwise().sum();
        }
      });
  RowMap o(out.data(), n, dout);
  o.noalias() = ConstRowMap(x.data(), n, din) * ConstRowMap(weights.data(), dout, din).transpose();
  if (bias.defined()) {
    o.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data(), dout);
  }
  return out;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out = make_result(x.shape(), {x}, [x](detail::Node& self) {
    auto xn = x.node();
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (size_t i = 0; i < self.data.size(); ++i) {
      const double y = self.data[i];
      xn->grad[i] += self.grad[i] * y * (1.0 - y);
    }
  });
  const double* in = x.data();
  double* o = out.data();
  for (int64_t i = 0; i < x.numel(); ++i) o[i] = 1.0 / (1.0 + std::exp(-in[i]));
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = make_result(x.shape(), {x}, [x](detail::Node& self) {
    auto xn = x.node();
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (size_t i = 0; i < self.data.size(); ++i) {
      if (xn->data[i] > 0.0) xn->grad[i] += self.grad[i];
    }
  });
  const double* in = x.data();
  double* o = out.data();
  for (int64_t i = 0; i < x.numel(); ++i) o[i] = in[i] > 0.0 ? in[i] : 0.0;
  return out;
}

Tensor gap3d(const Tensor& x) {
  if (x.ndim() != 5) {
    throw ConfigError("gap3d expects [N,C,T,H,W], got " + shape_str(x.shape()));
  }
  const int64_t n = x.dim(0), c = x.dim(1);
  const int64_t m = x.dim(2) * x.dim(3) * x.dim(4);
  Tensor out = make_result({n, c}, {x}, [x, n, c, m](detail::Node& self) {
    auto xn = x.node();
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    const double inv = 1.0 / static_cast<double>(m);
    for (int64_t i = 0; i < n * c; ++i) {
      const double g = self.grad[static_cast<size_t>(i)] * inv;
      double* gx = xn->grad.data() + i * m;
      for (int64_t j = 0; j < m; ++j) gx[j] += g;
    }
  });
  const double* in = x.data();
  double* o = out.data();
  for (int64_t i = 0; i < n * c; ++i) {
    double s = 0.0;
    const double* p = in + i * m;
    for (int64_t j = 0; j < m; ++j) s += p[j];
    o[i] = s / static_cast<double>(m);
  }
  return out;
}

Tensor gap2d_spatial(const Tensor& x) {
  if (x.ndim() != 4) {
    throw ConfigError("gap2d_spatial expects [N,T,H,W], got " + shape_str(x.shape()));
  }
  const int64_t n = x.dim(0), t = x.dim(1);
  const int64_t m = x.dim(2) * x.dim(3);
  Tensor out = make_result({n, t}, {x}, [x, n, t, m](detail::Node& self) {
    auto xn = x.node();
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    const double inv = 1.0 / static_cast<double>(m);
    for (int64_t i = 0; i < n * t; ++i) {
      const double g = self.grad[static_cast<size_t>(i)] * inv;
      double* gx = xn->grad.data() + i * m;
      for (int64_t j = 0; j < m; ++j) gx[j] += g;
    }
  });
  const double* in = x.data();
  double* o = out.data();
  for (int64_t i = 0; i < n * t; ++i) {
    double s = 0.0;
    const double* p = in + i * m;
    for (int64_t j = 0; j < m; ++j) s += p[j];
    o[i] = s / static_cast<double>(m);
  }
  return out;
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.ndim() != 2) {
    throw ConfigError("softmax_cross_entropy expects [N,K] logits, got " + shape_str(logits.shape()));
  }
  const int64_t n = logits.dim(0), k = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != n) {
    throw InputError("label count " + std::to_string(labels.size()) + " does not match batch " + std::to_string(n));
  }
  for (int64_t i = 0; i < n; ++i) {
    if (labels[static_cast<size_t>(i)] < 0 || labels[static_cast<size_t>(i)] >= k) {
      throw InputError("label " + std::to_string(labels[static_cast<size_t>(i)]) +
                       " out of range [0," + std::to_string(k) + ") at sample " + std::to_string(i));
    }
  }
  // probs are shared between forward and backward.
  auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(n * k));
  Tensor out = make_result({1}, {logits}, [logits, labels, probs, n, k](detail::Node& self) {
    auto ln = logits.node();
    if (!ln->requires_grad) return;
    ln->ensure_grad();
    const double g = self.grad[0] / static_cast<double>(n);
    for (int64_t i = 0; i < n; ++i) {
      const double* p = probs->data() + i * k;
      double* gl = ln->grad.data() + i * k;
      const int y = labels[static_cast<size_t>(i)];
      for (int64_t j = 0; j < k; ++j) {
        gl[j] += g * (p[j] - (j == y ? 1.0 : 0.0));
      }
    }
  });
  const double* in = logits.data();
  double loss = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double* row = in + i * k;
    double mx = row[0];
    for (int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int64_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    const double logz = std::log(z) + mx;
    double* p = probs->data() + i * k;
    for (int64_t j = 0; j < k; ++j) p[j] = std::exp(row[j] - logz);
    loss -= row[labels[static_cast<size_t>(i)]] - logz;
  }
  out.data()[0] = loss / static_cast<double>(n);
  return out;
}

Tensor dropout(const Tensor& x, double rate, bool training, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw InputError("dropout rate must be in [0,1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  auto mask = std::make_shared<std::vector<double>>(static_cast<size_t>(x.numel()));
  const double keep_scale = 1.0 / (1.0 - rate);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double& m : *mask) m = (u(rng) < rate) ? 0.0 : keep_scale;
  Tensor out = make_result(x.shape(), {x}, [x, mask](detail::Node& self) {
    auto xn = x.node();
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      xn->grad[i] += self.grad[i] * (*mask)[i];
    }
  });
  const double* in = x.data();
  double* o = out.data();
  for (int64_t i = 0; i < x.numel(); ++i) o[i] = in[i] * (*mask)[static_cast<size_t>(i)];
  return out;
}

BatchNormState make_batchnorm(int64_t channels) {
  BatchNormState st;
  st.gamma = Tensor::full({channels}, 1.0, true);
  st.beta = Tensor::zeros({channels}, true);
  st.running_mean = Tensor::zeros({channels});
  st.running_var = Tensor::full({channels}, 1.0);
  return st;
}

Tensor batchnorm(const Tensor& x, BatchNormState& state, bool training) {
  if (x.ndim() < 2) {
    throw ConfigError("batchnorm expects at least [N,C], got " + shape_str(x.shape()));
  }
  const int64_t n = x.dim(0), c = x.dim(1);
  if (state.gamma.dim(0) != c) {
    throw ConfigError("batchnorm channel mismatch: input has " + std::to_string(c) +
                      " channels, state has " + std::to_string(state.gamma.dim(0)));
  }
  int64_t m = 1;
  for (int i = 2; i < x.ndim(); ++i) m *= x.dim(i);
  const int64_t count = n * m;

  std::vector<double> mean(static_cast<size_t>(c)), var(static_cast<size_t>(c));
  if (training) {
    for (int64_t ci = 0; ci < c; ++ci) {
      double s = 0.0;
      for (int64_t b = 0; b < n; ++b) {
        const double* p = x.data() + (b * c + ci) * m;
        for (int64_t j = 0; j < m; ++j) s += p[j];
      }
      const double mu = s / static_cast<double>(count);
      double v = 0.0;
      for (int64_t b = 0; b < n; ++b) {
        const double* p = x.data() + (b * c + ci) * m;
        for (int64_t j = 0; j < m; ++j) v += (p[j] - mu) * (p[j] - mu);
      }
      mean[static_cast<size_t>(ci)] = mu;
      var[static_cast<size_t>(ci)] = v / static_cast<double>(count);
      state.running_mean.data()[ci] = state.momentum * state.running_mean.data()[ci] + (1.0 - state.momentum) * mu;
      state.running_var.data()[ci] = state.momentum * state.running_var.data()[ci] + (1.0 - state.momentum) * var[static_cast<size_t>(ci)];
    }
  } else {
    for (int64_t ci = 0; ci < c; ++ci) {
      mean[static_cast<size_t>(ci)] = state.running_mean.data()[ci];
      var[static_cast<size_t>(ci)] = state.running_var.data()[ci];
    }
  }

  auto xhat = std::make_shared<std::vector<double>>(static_cast<size_t>(x.numel()));
  std::vector<double> invstd(static_cast<size_t>(c));
  for (int64_t ci = 0; ci < c; ++ci) {
    invstd[static_cast<size_t>(ci)] = 1.0 / std::sqrt(var[static_cast<size_t>(ci)] + state.eps);
  }
  Tensor gamma = state.gamma, beta = state.beta;
  auto invstd_sh = std::make_shared<std::vector<double>>(invstd);
  Tensor out = make_result(
      x.shape(), {x, gamma, beta},
      [x, gamma, beta, xhat, invstd_sh, n, c, m, training](detail::Node& self) {
        const int64_t count = n * m;
        auto gn = gamma.node();
        auto bn = beta.node();
        auto xn = x.node();
        if (gn->requires_grad) gn->ensure_grad();
        if (bn->requires_grad) bn->ensure_grad();
        if (xn->requires_grad) xn->ensure_grad();
        for (int64_t ci = 0; ci < c; ++ci) {
          double sum_gy = 0.0, sum_gy_xhat = 0.0;
          for (int64_t b = 0; b < n; ++b) {
            const int64_t off = (b * c + ci) * m;
            for (int64_t j = 0; j < m; ++j) {
              const double gy = self.grad[static_cast<size_t>(off + j)];
              sum_gy += gy;
              sum_gy_xhat += gy * (*xhat)[static_cast<size_t>(off + j)];
            }
          }
          if (gn->requires_grad) gn->grad[static_cast<size_t>(ci)] += sum_gy_xhat;
          if (bn->requires_grad) bn->grad[static_cast<size_t>(ci)] += sum_gy;
          if (!xn->requires_grad) continue;
          const double g = gn->data[static_cast<size_t>(ci)];
          const double is = (*invstd_sh)[static_cast<size_t>(ci)];
          if (training) {
            const double mean_gy = sum_gy / static_cast<double>(count);
            const double mean_gy_xhat = sum_gy_xhat / static_cast<double>(count);
            for (int64_t b = 0; b < n; ++b) {
              const int64_t off = (b * c + ci) * m;
              for (int64_t j = 0; j < m; ++j) {
                const size_t idx = static_cast<size_t>(off + j);
                const double gy = self.grad[idx];
                xn->grad[idx] += g * is * (gy - mean_gy - (*xhat)[idx] * mean_gy_xhat);
              }
            }
          } else {
            for (int64_t b = 0; b < n; ++b) {
              const int64_t off = (b * c + ci) * m;
              for (int64_t j = 0; j < m; ++j) {
                const size_t idx = static_cast<size_t>(off + j);
                xn->grad[idx] += g * is * self.grad[idx];
              }
            }
          }
        }
      });
  double* o = out.data();
  const double* in = x.data();
  for (int64_t b = 0; b < n; ++b) {
    for (int64_t ci = 0; ci < c; ++ci) {
      const int64_t off = (b * c + ci) * m;
      const double mu = mean[static_cast<size_t>(ci)];
      const double is = invstd[static_cast<size_t>(ci)];
      const double g = gamma.data()[ci], bt = beta.data()[ci];
      for (int64_t j = 0; j < m; ++j) {
        const double xh = (in[off + j] - mu) * is;
        (*xhat)[static_cast<size_t>(off + j)] = xh;
        o[off + j] = g * xh + bt;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Broadcasting elementwise ops

namespace {

struct BroadcastPlan {
  Shape out_shape;
  std::vector<int64_t> out_stride;  // row-major strides of the output
  std::vector<int64_t> sa, sb;      // input strides, 0 on broadcast axes
};

BroadcastPlan broadcast_plan(const Shape& a, const Shape& b) {
  const size_t nd = std::max(a.size(), b.size());
  BroadcastPlan p;
  p.out_shape.resize(nd);
  p.sa.assign(nd, 0);
  p.sb.assign(nd, 0);
  // Right-align.
  std::vector<int64_t> ea(nd, 1), eb(nd, 1);
  for (size_t i = 0; i < a.size(); ++i) ea[nd - a.size() + i] = a[i];
  for (size_t i = 0; i < b.size(); ++i) eb[nd - b.size() + i] = b[i];
  for (size_t i = 0; i < nd; ++i) {
    if (ea[i] != eb[i] && ea[i] != 1 && eb[i] != 1) {
      throw ConfigError("shapes " + shape_str(a) + " and " + shape_str(b) + " are not broadcast-compatible");
    }
    p.out_shape[i] = std::max(ea[i], eb[i]);
  }
  int64_t sta = 1, stb = 1, sto = 1;
  p.out_stride.assign(nd, 0);
  for (size_t i = nd; i-- > 0;) {
    p.out_stride[i] = sto;
    if (ea[i] != 1) p.sa[i] = sta;
    if (eb[i] != 1) p.sb[i] = stb;
    sto *= p.out_shape[i];
    sta *= ea[i];
    stb *= eb[i];
  }
  return p;
}

inline void offsets_for(const BroadcastPlan& p, int64_t lin, int64_t* oa, int64_t* ob) {
  int64_t a = 0, b = 0;
  for (size_t d = 0; d < p.out_shape.size(); ++d) {
    const int64_t idx = (lin / p.out_stride[d]) % p.out_shape[d];
    a += idx * p.sa[d];
    b += idx * p.sb[d];
  }
  *oa = a;
  *ob = b;
}

enum class EwKind { Add, Sub, Mul };

Tensor elementwise(const Tensor& a, const Tensor& b, EwKind kind) {
  auto plan = std::make_shared<BroadcastPlan>(broadcast_plan(a.shape(), b.shape()));
  const int64_t total = shape_numel(plan->out_shape);
  const bool same = a.shape() == b.shape();
  Tensor out = make_result(
      plan->out_shape, {a, b}, [a, b, plan, kind, total, same](detail::Node& self) {
        auto an = a.node();
        auto bn = b.node();
        const bool ga = an->requires_grad, gb = bn->requires_grad;
        if (ga) an->ensure_grad();
        if (gb) bn->ensure_grad();
        if (same) {
          for (int64_t i = 0; i < total; ++i) {
            const double g = self.grad[static_cast<size_t>(i)];
            switch (kind) {
              case EwKind::Add:
                if (ga) an->grad[static_cast<size_t>(i)] += g;
                if (gb) bn->grad[static_cast<size_t>(i)] += g;
                break;
              case EwKind::Sub:
                if (ga) an->grad[static_cast<size_t>(i)] += g;
                if (gb) bn->grad[static_cast<size_t>(i)] -= g;
                break;
              case EwKind::Mul:
                if (ga) an->grad[static_cast<size_t>(i)] += g * bn->data[static_cast<size_t>(i)];
                if (gb) bn->grad[static_cast<size_t>(i)] += g * an->data[static_cast<size_t>(i)];
                break;
            }
          }
          return;
        }
        for (int64_t i = 0; i < total; ++i) {
          int64_t oa, ob;
          offsets_for(*plan, i, &oa, &ob);
          const double g = self.grad[static_cast<size_t>(i)];
          switch (kind) {
            case EwKind::Add:
              if (ga) an->grad[static_cast<size_t>(oa)] += g;
              if (gb) bn->grad[static_cast<size_t>(ob)] += g;
              break;
            case EwKind::Sub:
              if (ga) an->grad[static_cast<size_t>(oa)] += g;
              if (gb) bn->grad[static_cast<size_t>(ob)] -= g;
              break;
            case EwKind::Mul:
              if (ga) an->grad[static_cast<size_t>(oa)] += g * bn->data[static_cast<size_t>(ob)];
              if (gb) bn->grad[static_cast<size_t>(ob)] += g * an->data[static_cast<size_t>(oa)];
              break;
          }
        }
      });
  double* o = out.data();
  const double* pa = a.data();
  const double* pb = b.data();
  if (same) {
    for (int64_t i = 0; i < total; ++i) {
      switch (kind) {
        case EwKind::Add: o[i] = pa[i] + pb[i]; break;
        case EwKind::Sub: o[i] = pa[i] - pb[i]; break;
        case EwKind::Mul: o[i] = pa[i] * pb[i]; break;
      }
    }
    return out;
  }
  for (int64_t i = 0; i < total; ++i) {
    int64_t oa, ob;
    offsets_for(*plan, i, &oa, &ob);
    switch (kind) {
      case EwKind::Add: o[i] = pa[oa] + pb[ob]; break;
      case EwKind::Sub: o[i] = pa[oa] - pb[ob]; break;
      case EwKind::Mul: o[i] = pa[oa] * pb[ob]; break;
    }
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(a, b, EwKind::Add); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(a, b, EwKind::Sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(a, b, EwKind::Mul); }

Tensor scale(const Tensor& x, double s) {
  Tensor out = make_result(x.shape(), {x}, [x, s](detail::Node& self) {
    auto xn = x.node();
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i] * s;
  });
  const double* in = x.data();
  double* o = out.data();
  for (int64_t i = 0; i < x.numel(); ++i) o[i] = in[i] * s;
  return out;
}

Tensor add_scalar(const Tensor& x, double s) {
  Tensor out = make_result(x.shape(), {x}, [x](detail::Node& self) {
    auto xn = x.node();
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
  });
  const double* in = x.data();
  double* o = out.data();
  for (int64_t i = 0; i < x.numel(); ++i) o[i] = in[i] + s;
  return out;
}

Tensor sum(const Tensor& x) {
  Tensor out = make_result({1}, {x}, [x](detail::Node& self) {
    auto xn = x.node();
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    const double g = self.grad[0];
    for (double& gi : xn->grad) gi += g;
  });
  double s = 0.0;
  const double* in = x.data();
  for (int64_t i = 0; i < x.numel(); ++i) s += in[i];
  out.data()[0] = s;
  return out;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw InputError("concat requires at least one tensor");
  const Shape& s0 = parts[0].shape();
  const int nd = parts[0].ndim();
  if (axis < 0 || axis >= nd) throw InputError("concat axis out of range");
  Shape out_shape = s0;
  int64_t cat = 0;
  for (const Tensor& t : parts) {
    if (t.ndim() != nd) throw ConfigError("concat rank mismatch");
    for (int d = 0; d < nd; ++d) {
      if (d != axis && t.dim(d) != s0[static_cast<size_t>(d)]) {
        throw ConfigError("concat extent mismatch on axis " + std::to_string(d));
      }
    }
    cat += t.dim(axis);
  }
  out_shape[static_cast<size_t>(axis)] = cat;
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= s0[static_cast<size_t>(d)];
  for (int d = axis + 1; d < nd; ++d) inner *= s0[static_cast<size_t>(d)];

  Tensor out = make_result(out_shape, parts, [parts, axis, outer, inner, cat](detail::Node& self) {
    const int64_t row = cat * inner;
    int64_t off = 0;
    for (const Tensor& t : parts) {
      const int64_t block = t.dim(axis) * inner;
      auto tn = t.node();
      if (tn->requires_grad) {
        tn->ensure_grad();
        for (int64_t u = 0; u < outer; ++u) {
          const double* g = self.grad.data() + u * row + off;
          double* gt = tn->grad.data() + u * block;
          for (int64_t j = 0; j < block; ++j) gt[j] += g[j];
        }
      }
      off += block;
    }
  });
  const int64_t row = cat * inner;
  int64_t off = 0;
  for (const Tensor& t : parts) {
    const int64_t block = t.dim(axis) * inner;
    for (int64_t u = 0; u < outer; ++u) {
      std::memcpy(out.data() + u * row + off, t.data() + u * block,
                  static_cast<size_t>(block) * sizeof(double));
    }
    off += block;
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.numel()) {
    throw ConfigError("reshape from " + shape_str(x.shape()) + " to " + shape_str(new_shape) + " changes element count");
  }
  Tensor out = make_result(std::move(new_shape), {x}, [x](detail::Node& self) {
    auto xn = x.node();
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
  });
  std::memcpy(out.data(), x.data(), static_cast<size_t>(x.numel()) * sizeof(double));
  return out;
}

}  // namespace stabn
