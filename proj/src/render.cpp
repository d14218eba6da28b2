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
#include "stabn/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "stabn/errors.hpp"

namespace stabn {

std::array<uint8_t, 3> colormap_jet(double v) {
  v = std::clamp(v, 0.0, 1.0);
  double r, g, b;
  if (v < 1.0 / 3.0) {
    const double s = v * 3.0;
    r = 0.0; g = s; b = 1.0;
  } else if (v < 2.0 / 3.0) {
    const double s = (v - 1.0 / 3.0) * 3.0;
    r = s; g = 1.0; b = 1.0 - s;
  } else {
    const double s = (v - 2.0 / 3.0) * 3.0;
    r = 1.0; g = 1.0 - s; b = 0.0;
  }
  auto q = [](double x) { return static_cast<uint8_t>(std::lround(x * 255.0)); };
  return {q(r), q(g), q(b)};
}

std::vector<double> bilinear_upsample(const std::vector<double>& src, int hs, int ws,
                                      int hd, int wd) {
  if (hs < 1 || ws < 1 || hd < 1 || wd < 1 ||
      static_cast<size_t>(hs) * ws != src.size()) {
    throw InputError("bilinear_upsample: bad extents");
  }
  std::vector<double> dst(static_cast<size_t>(hd) * wd);
  const double sy = hd > 1 ? static_cast<double>(hs - 1) / (hd - 1) : 0.0;
  const double sx = wd > 1 ? static_cast<double>(ws - 1) / (wd - 1) : 0.0;
  for (int y = 0; y < hd; ++y) {
    const double fy = y * sy;
    const int y0 = std::min(static_cast<int>(fy), hs - 1);
    const int y1 = std::min(y0 + 1, hs - 1);
    const double wy = fy - y0;
    for (int x = 0; x < wd; ++x) {
      const double fx = x * sx;
      const int x0 = std::min(static_cast<int>(fx), ws - 1);
      const int x1 = std::min(x0 + 1, ws - 1);
      const double wx = fx - x0;
      const double top = src[static_cast<size_t>(y0) * ws + x0] * (1 - wx) +
                         src[static_cast<size_t>(y0) * ws + x1] * wx;
      const double bot = src[static_cast<size_t>(y1) * ws + x0] * (1 - wx) +
                         src[static_cast<size_t>(y1) * ws + x1] * wx;
      dst[static_cast<size_t>(y) * wd + x] = top * (1 - wy) + bot * wy;
    }
  }
  return dst;
}

std::vector<Raster> render_spatial(const VideoSample& video, const SynthConfig& config,
                                   const AttentionPair& attention, double alpha) {
  if (alpha < 0.0 || alpha > 1.0) {
    throw InputError("overlay alpha must be in [0,1], got " + std::to_string(alpha));
  }
  const Tensor& ms = attention.spatial;  // [N,1,T,H',W']; render sample 0
  if (!ms.defined() || ms.ndim() != 5 || ms.dim(2) != config.frames) {
    throw InputError("spatial attention frame count does not match the video");
  }
  const int t_count = config.frames, s = config.size;
  const int hp = static_cast<int>(ms.dim(3)), wp = static_cast<int>(ms.dim(4));
  std::vector<Raster> out;
  out.reserve(static_cast<size_t>(t_count));
  for (int t = 0; t < t_count; ++t) {
    std::vector<double> att(static_cast<size_t>(hp) * wp);
    const double* src = ms.data() + static_cast<int64_t>(t) * hp * wp;
    std::copy(src, src + att.size(), att.begin());
    const std::vector<double> up = bilinear_upsample(att, hp, wp, s, s);
    Raster r;
    r.width = s;
    r.height = s;
    r.rgb.resize(static_cast<size_t>(s) * s * 3);
    const float* frame = video.video.data() + static_cast<size_t>(t) * s * s;  // channel 0
    for (int i = 0; i < s * s; ++i) {
      const double gray = std::clamp(static_cast<double>(frame[i]), 0.0, 1.0) * 255.0;
      const auto heat = colormap_jet(up[static_cast<size_t>(i)]);
      for (int c = 0; c < 3; ++c) {
        const double v = (1.0 - alpha) * gray + alpha * heat[static_cast<size_t>(c)];
        r.rgb[static_cast<size_t>(i) * 3 + c] = static_cast<uint8_t>(std::lround(v));
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<Raster> render_temporal(const AttentionPair& attention, int swatch_size) {
  const Tensor& mt = attention.temporal;  // [N,T]; sample 0
  if (!mt.defined() || mt.ndim() != 2) throw InputError("temporal attention must be [N,T]");
  std::vector<Raster> out;
  for (int64_t t = 0; t < mt.dim(1); ++t) {
    const auto color = colormap_jet(mt.data()[t]);
    Raster r;
    r.width = swatch_size;
    r.height = swatch_size;
    r.rgb.resize(static_cast<size_t>(swatch_size) * swatch_size * 3);
    for (size_t i = 0; i < r.rgb.size(); i += 3) {
      r.rgb[i] = color[0];
      r.rgb[i + 1] = color[1];
      r.rgb[i + 2] = color[2];
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::string temporal_csv(const AttentionPair& attention) {
  const Tensor& mt = attention.temporal;
  if (!mt.defined() || mt.ndim() != 2) throw InputError("temporal attention must be [N,T]");
  std::string out = "frame,weight\n";
  char buf[48];
  for (int64_t t = 0; t < mt.dim(1); ++t) {
    std::snprintf(buf, sizeof(buf), "%lld,%.6f\n", static_cast<long long>(t), mt.data()[t]);
    out += buf;
  }
  return out;
}

Raster contact_sheet(const std::vector<Raster>& frames, const std::vector<Raster>& swatches) {
  if (frames.empty() || frames.size() != swatches.size()) {
    throw InputError("contact_sheet needs one swatch per frame");
  }
  const int fw = frames[0].width, fh = frames[0].height;
  const int strip = swatches[0].height;
  Raster sheet;
  sheet.width = fw * static_cast<int>(frames.size());
  sheet.height = strip + fh;
  sheet.rgb.assign(static_cast<size_t>(sheet.width) * sheet.height * 3, 255);
  for (size_t t = 0; t < frames.size(); ++t) {
    const int x_off = static_cast<int>(t) * fw;
    // Swatch stretched to the frame width.
    for (int y = 0; y < strip; ++y) {
      for (int x = 0; x < fw; ++x) {
        const uint8_t* src = swatches[t].rgb.data();
        std::copy(src, src + 3, sheet.rgb.data() + 3 * (static_cast<size_t>(y) * sheet.width + x_off + x));
      }
    }
    for (int y = 0; y < fh; ++y) {
      const uint8_t* src = frames[t].rgb.data() + 3 * static_cast<size_t>(y) * fw;
      std::copy(src, src + 3 * static_cast<size_t>(fw),
                sheet.rgb.data() + 3 * (static_cast<size_t>(strip + y) * sheet.width + x_off));
    }
  }
  return sheet;
}

void write_ppm(const std::string& path, const Raster& raster) {
  if (raster.width < 1 || raster.height < 1 ||
      raster.rgb.size() != static_cast<size_t>(raster.width) * raster.height * 3) {
    throw InputError("write_ppm: raster dimensions are invalid");
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot open " + path + " for writing");
  f << "P6\n" << raster.width << " " << raster.height << "\n255\n";
  f.write(reinterpret_cast<const char*>(raster.rgb.data()),
          static_cast<std::streamsize>(raster.rgb.size()));
  if (!f) throw FormatError("write failed for " + path);
}

Raster read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  f >> magic >> w >> h >> maxval;
  if (magic != "P6" || w < 1 || h < 1 || maxval != 255) {
    throw FormatError("not a supported P6 file: " + path);
  }
  f.get();  // single whitespace after maxval
  Raster r;
  r.width = w;
  r.height = h;
  r.rgb.resize(static_cast<size_t>(w) * h * 3);
  f.read(reinterpret_cast<char*>(r.rgb.data()), static_cast<std::streamsize>(r.rgb.size()));
  if (static_cast<size_t>(f.gcount()) != r.rgb.size()) {
    throw FormatError("P6 payload truncated: " + path);
  }
  return r;
}

}  // namespace stabn
