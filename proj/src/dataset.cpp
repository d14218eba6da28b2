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
#include "stabn/dataset.hpp"

#include <zlib.h>

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>

#include "stabn/errors.hpp"
#include "stabn/serialize.hpp"

namespace stabn {

namespace {

constexpr char kMagic[] = "STVID";
constexpr uint8_t kVersion = 0x01;

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct Direction { int dx, dy; };

Direction class_direction(int label) {
  switch (label) {
    case 0: return {0, -1};  // up
    case 1: return {0, 1};   // down
    case 2: return {-1, 0};  // left
    case 3: return {1, 0};   // right
  }
  throw InternalError("unsupported class label " + std::to_string(label));
}

VideoSample generate_sample(const SynthConfig& cfg, uint64_t global_index, int label) {
  std::mt19937_64 rng(splitmix64(cfg.seed ^ splitmix64(global_index)));
  const int T = cfg.frames, S = cfg.size, sq = cfg.shape_size, L = cfg.window_len;
  const Direction dir = class_direction(label);
  std::uniform_int_distribution<int> t0_dist(0, T - L);
  std::uniform_int_distribution<int> pos_dist(0, S - sq);

  VideoSample sample;
  sample.label = label;
  sample.t0 = t0_dist(rng);
  sample.window_len = L;

  // Place the square so the whole trajectory stays inside the frame.
  const int travel = L - 1;
  int x0 = -1, y0 = -1;
  bool placed = false;
  for (int attempt = 0; attempt < 100; ++attempt) {
    x0 = pos_dist(rng);
    y0 = pos_dist(rng);
    const int xe = x0 + dir.dx * travel;
    const int ye = y0 + dir.dy * travel;
    if (xe >= 0 && xe + sq <= S && ye >= 0 && ye + sq <= S) { placed = true; break; }
  }
  if (!placed) {
    throw InputError("could not place shape inside the frame after 100 attempts; "
                     "reduce window_len or shape_size");
  }

  sample.video.assign(static_cast<size_t>(cfg.channels) * T * S * S, 0.0f);
  sample.bbox.resize(static_cast<size_t>(T));
  for (int t = 0; t < T; ++t) {
    const int off = std::clamp(t - sample.t0, 0, travel);
    const int x = x0 + dir.dx * off;
    const int y = y0 + dir.dy * off;
    sample.bbox[static_cast<size_t>(t)] = {static_cast<uint16_t>(x), static_cast<uint16_t>(y),
                                           static_cast<uint16_t>(x + sq), static_cast<uint16_t>(y + sq)};
    for (int c = 0; c < cfg.channels; ++c) {
      float* frame = sample.video.data() + (static_cast<size_t>(c) * T + t) * S * S;
      for (int yy = y; yy < y + sq; ++yy) {
        for (int xx = x; xx < x + sq; ++xx) frame[yy * S + xx] = 1.0f;
      }
    }
  }
  if (cfg.noise_std > 0.0) {
    std::normal_distribution<float> noise(0.0f, static_cast<float>(cfg.noise_std));
    for (float& v : sample.video) {
      v = std::clamp(v + noise(rng), 0.0f, 1.0f);
    }
  }
  return sample;
}

}  // namespace

void SynthConfig::validate() const {
  if (num_classes != 2 && num_classes != 4) {
    throw ConfigError("num_classes must be 2 or 4, got " + std::to_string(num_classes));
  }
  if (frames < 1) throw ConfigError("frames must be >= 1");
  if (size < 2) throw ConfigError("size must be >= 2");
  if (channels < 1) throw ConfigError("channels must be >= 1");
  if (shape_size < 1 || shape_size >= size) {
    throw ConfigError("shape_size must be in [1, size)");
  }
  if (window_len < 1 || window_len > frames) {
    throw ConfigError("window_len must be in [1, frames]");
  }
  if (noise_std < 0.0) throw ConfigError("noise_std must be >= 0");
  if (samples_train < 0 || samples_val < 0) throw ConfigError("sample counts must be >= 0");
}

std::pair<VideoDataset, VideoDataset> generate(const SynthConfig& config) {
  config.validate();
  VideoDataset train, val;
  train.config = config;
  val.config = config;
  train.samples.reserve(static_cast<size_t>(config.samples_train));
  val.samples.reserve(static_cast<size_t>(config.samples_val));
  for (int i = 0; i < config.samples_train; ++i) {
    train.samples.push_back(generate_sample(config, static_cast<uint64_t>(i), i % config.num_classes));
  }
  for (int i = 0; i < config.samples_val; ++i) {
    const uint64_t gi = static_cast<uint64_t>(config.samples_train + i);
    val.samples.push_back(generate_sample(config, gi, i % config.num_classes));
  }
  return {std::move(train), std::move(val)};
}

namespace {

std::vector<std::pair<std::string, std::string>> config_kv(const SynthConfig& c) {
  return {
      {"num_classes", std::to_string(c.num_classes)},
      {"frames", std::to_string(c.frames)},
      {"size", std::to_string(c.size)},
      {"channels", std::to_string(c.channels)},
      {"shape_size", std::to_string(c.shape_size)},
      {"window_len", std::to_string(c.window_len)},
      {"noise_std", std::to_string(c.noise_std)},
      {"samples_train", std::to_string(c.samples_train)},
      {"samples_val", std::to_string(c.samples_val)},
      {"seed", std::to_string(c.seed)},
  };
}

SynthConfig config_from_kv(const std::map<std::string, std::string>& kv) {
  SynthConfig c;
  try {
    c.num_classes = std::stoi(kv.at("num_classes"));
    c.frames = std::stoi(kv.at("frames"));
    c.size = std::stoi(kv.at("size"));
    c.channels = std::stoi(kv.at("channels"));
    c.shape_size = std::stoi(kv.at("shape_size"));
    c.window_len = std::stoi(kv.at("window_len"));
    c.noise_std = std::stod(kv.at("noise_std"));
    c.samples_train = std::stoi(kv.at("samples_train"));
    c.samples_val = std::stoi(kv.at("samples_val"));
    c.seed = std::stoull(kv.at("seed"));
  } catch (const std::out_of_range&) {
    throw FormatError("dataset config block is missing required keys");
  } catch (const std::invalid_argument&) {
    throw FormatError("dataset config block has a malformed value");
  }
  return c;
}

}  // namespace

void save_dataset(const std::string& path, const VideoDataset& dataset) {
  std::ostringstream body(std::ios::binary);
  io::write_kv_block(body, config_kv(dataset.config));
  io::write_u32(body, static_cast<uint32_t>(dataset.samples.size()));
  for (const VideoSample& s : dataset.samples) {
    io::write_u16(body, static_cast<uint16_t>(s.label));
    io::write_u16(body, static_cast<uint16_t>(s.t0));
    io::write_u16(body, static_cast<uint16_t>(s.window_len));
    for (const auto& bb : s.bbox) {
      for (uint16_t v : bb) io::write_u16(body, v);
    }
    io::write_bytes(body, s.video.data(), s.video.size() * sizeof(float));
  }
  const std::string b = body.str();
  const uint32_t crc = static_cast<uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(b.data()), static_cast<uInt>(b.size())));
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot open " + path + " for writing");
  io::write_bytes(f, kMagic, 5);
  io::write_u8(f, kVersion);
  io::write_bytes(f, b.data(), b.size());
  io::write_u32(f, crc);
  if (!f) throw FormatError("write failed for " + path);
}

VideoDataset load_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open dataset file " + path);
  io::expect_magic(f, kMagic, kVersion, "dataset");
  std::string rest((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (rest.size() < 4) throw FormatError("dataset file truncated: " + path);
  const std::string body = rest.substr(0, rest.size() - 4);
  std::istringstream tail(rest.substr(rest.size() - 4), std::ios::binary);
  const uint32_t stored_crc = io::read_u32(tail);
  const uint32_t crc = static_cast<uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size())));
  if (crc != stored_crc) {
    throw FormatError("dataset checksum mismatch in " + path + " (file corrupt or truncated)");
  }
  std::istringstream is(body, std::ios::binary);
  VideoDataset ds;
  ds.config = config_from_kv(io::read_kv_block(is));
  const uint32_t count = io::read_u32(is);
  const size_t pixels = static_cast<size_t>(ds.config.channels) * ds.config.frames *
                        ds.config.size * ds.config.size;
  ds.samples.resize(count);
  for (uint32_t i = 0; i < count; ++i) {
    VideoSample& s = ds.samples[i];
    s.label = io::read_u16(is);
    s.t0 = io::read_u16(is);
    s.window_len = io::read_u16(is);
    s.bbox.resize(static_cast<size_t>(ds.config.frames));
    for (auto& bb : s.bbox) {
      for (uint16_t& v : bb) v = io::read_u16(is);
    }
    s.video.resize(pixels);
    io::read_bytes(is, s.video.data(), pixels * sizeof(float));
  }
  return ds;
}

uint32_t dataset_checksum(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open dataset file " + path);
  std::string all((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (all.size() < 10) throw FormatError("dataset file truncated: " + path);
  std::istringstream tail(all.substr(all.size() - 4), std::ios::binary);
  return io::read_u32(tail);
}

std::vector<std::vector<int64_t>> batch_order(int64_t dataset_size, int64_t batch_size,
                                              uint64_t shuffle_seed) {
  if (batch_size < 1) throw InputError("batch_size must be >= 1");
  std::vector<int64_t> order(static_cast<size_t>(dataset_size));
  for (int64_t i = 0; i < dataset_size; ++i) order[static_cast<size_t>(i)] = i;
  std::mt19937_64 rng(shuffle_seed);
  for (int64_t i = dataset_size - 1; i > 0; --i) {
    std::uniform_int_distribution<int64_t> d(0, i);
    std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(d(rng))]);
  }
  std::vector<std::vector<int64_t>> batches;
  for (int64_t start = 0; start < dataset_size; start += batch_size) {
    const int64_t end = std::min(start + batch_size, dataset_size);
    batches.emplace_back(order.begin() + start, order.begin() + end);
  }
  return batches;
}

Batch materialize_batch(const VideoDataset& dataset, const std::vector<int64_t>& indices) {
  if (indices.empty()) throw InputError("empty batch");
  const auto& c = dataset.config;
  const int64_t n = static_cast<int64_t>(indices.size());
  Batch b;
  b.indices = indices;
  b.videos = Tensor::zeros({n, c.channels, c.frames, c.size, c.size});
  const int64_t pixels = static_cast<int64_t>(c.channels) * c.frames * c.size * c.size;
  for (int64_t i = 0; i < n; ++i) {
    const int64_t idx = indices[static_cast<size_t>(i)];
    if (idx < 0 || idx >= dataset.size()) {
      throw InputError("sample index " + std::to_string(idx) + " out of range");
    }
    const VideoSample& s = dataset.samples[static_cast<size_t>(idx)];
    double* dst = b.videos.data() + i * pixels;
    for (int64_t j = 0; j < pixels; ++j) dst[j] = static_cast<double>(s.video[static_cast<size_t>(j)]);
    b.labels.push_back(s.label);
  }
  return b;
}

}  // namespace stabn
