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
#ifndef STABN_RENDER_HPP_
#define STABN_RENDER_HPP_

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "stabn/dataset.hpp"
#include "stabn/model.hpp"

namespace stabn {

// 8-bit RGB raster, row-major, 3 bytes per pixel.
struct Raster {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> rgb;

  uint8_t* pixel(int x, int y) { return rgb.data() + 3 * (static_cast<size_t>(y) * width + x); }
};

// Piecewise-linear blue -> cyan -> yellow -> red over [0,1]:
//   [0,1/3]   (0,0,255)   -> (0,255,255)
//   [1/3,2/3] (0,255,255) -> (255,255,0)
//   [2/3,1]   (255,255,0) -> (255,0,0)
// Rounded to the nearest integer; inputs are clamped to [0,1].
std::array<uint8_t, 3> colormap_jet(double v);

// Bilinear upsample (corner-aligned); a constant map stays constant and the
// output never leaves the input's value range.
std::vector<double> bilinear_upsample(const std::vector<double>& src, int hs, int ws,
                                      int hd, int wd);

// Per-frame spatial-attention heatmaps alpha-blended over the grayscale
// frame (channel 0), upsampled to the input resolution.
std::vector<Raster> render_spatial(const VideoSample& video, const SynthConfig& config,
                                   const AttentionPair& attention, double alpha);

// One solid swatch per frame, colored by temporal attention.
std::vector<Raster> render_temporal(const AttentionPair& attention, int swatch_size = 16);
// CSV: header "frame,weight", weights with 6 decimal digits.
std::string temporal_csv(const AttentionPair& attention);

// Frames side by side with the temporal swatches as a top strip.
Raster contact_sheet(const std::vector<Raster>& frames, const std::vector<Raster>& swatches);

// Binary P6: "P6\n<w> <h>\n255\n" then RGB bytes row-major.
void write_ppm(const std::string& path, const Raster& raster);
Raster read_ppm(const std::string& path);

}  // namespace stabn

#endif  // STABN_RENDER_HPP_
