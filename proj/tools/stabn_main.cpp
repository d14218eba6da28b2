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
//
// stabn: generate synthetic video data, train the two-branch attention
// network, evaluate it (including the four attention-inversion conditions),
// and export attention visualizations.
//
// Exit codes: 0 success, 1 usage/configuration, 2 data/format, 3 numerical.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "stabn/dataset.hpp"
#include "stabn/errors.hpp"
#include "stabn/eval.hpp"
#include "stabn/model.hpp"
#include "stabn/render.hpp"
#include "stabn/trainer.hpp"

namespace fs = std::filesystem;
using namespace stabn;

namespace {

// Every tunable of a run, merged from (defaults <- config file <- flags).
struct RunConfig {
  SynthConfig synth;
  ModelConfig model;
  TrainConfig train;
  std::string stage_channels = "16,32,64";
  std::string blocks_per_stage = "1,1,1";
};

std::vector<int64_t> parse_i64_list(const std::string& s) {
  std::vector<int64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoll(item));
    } catch (const std::exception&) {
      throw ConfigError("malformed integer list: " + s);
    }
  }
  if (out.empty()) throw ConfigError("empty integer list");
  return out;
}

// The config-file schema: one key = value per line, '#' comments. Unknown
// keys are rejected so typos fail loudly instead of silently using defaults.
void apply_key(RunConfig& c, const std::string& key, const std::string& value) {
  auto as_i = [&] { return std::stoll(value); };
  auto as_d = [&] { return std::stod(value); };
  try {
    if (key == "classes") {
      c.synth.num_classes = static_cast<int>(as_i());
      c.model.num_classes = as_i();
    } else if (key == "frames") {
      c.synth.frames = static_cast<int>(as_i());
      c.model.frames = as_i();
    } else if (key == "size") {
      c.synth.size = static_cast<int>(as_i());
      c.model.height = as_i();
      c.model.width = as_i();
    } else if (key == "channels") {
      c.synth.channels = static_cast<int>(as_i());
      c.model.input_channels = as_i();
    } else if (key == "shape_size") c.synth.shape_size = static_cast<int>(as_i());
    else if (key == "window_len") c.synth.window_len = static_cast<int>(as_i());
    else if (key == "noise_std") c.synth.noise_std = as_d();
    else if (key == "train_samples") c.synth.samples_train = static_cast<int>(as_i());
    else if (key == "val_samples") c.synth.samples_val = static_cast<int>(as_i());
    else if (key == "seed") { c.synth.seed = std::stoull(value); c.train.seed = std::stoull(value); }
    else if (key == "stage_channels") c.stage_channels = value;
    else if (key == "blocks_per_stage") c.blocks_per_stage = value;
    else if (key == "split_stage") c.model.split_stage = as_i();
    else if (key == "se_reduction") c.model.se_reduction = as_i();
    else if (key == "dropout") c.model.dropout_rate = as_d();
    else if (key == "batchnorm") c.model.batchnorm = value == "1" || value == "true";
    else if (key == "lr") c.train.lr_initial = as_d();
    else if (key == "momentum") c.train.momentum = as_d();
    else if (key == "weight_decay") c.train.weight_decay = as_d();
    else if (key == "batch_size") c.train.batch_size = as_i();
    else if (key == "epochs") c.train.epochs_max = static_cast<int>(as_i());
    else if (key == "plateau_patience") c.train.plateau_patience = static_cast<int>(as_i());
    else if (key == "min_lr") c.train.min_lr = as_d();
    else if (key == "target_top1") c.train.target_val_top1 = as_d();
    else throw ConfigError("unknown config key: " + key);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    throw ConfigError("malformed value for config key " + key + ": " + value);
  }
}

void load_config_file(RunConfig& c, const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    if (trim(line).empty()) continue;
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
    }
    apply_key(c, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string merged_config_text(const RunConfig& c) {
  std::ostringstream os;
  os << "classes = " << c.synth.num_classes << "\n"
     << "frames = " << c.synth.frames << "\n"
     << "size = " << c.synth.size << "\n"
     << "channels = " << c.synth.channels << "\n"
     << "shape_size = " << c.synth.shape_size << "\n"
     << "window_len = " << c.synth.window_len << "\n"
     << "noise_std = " << fmt_g(c.synth.noise_std) << "\n"
     << "train_samples = " << c.synth.samples_train << "\n"
     << "val_samples = " << c.synth.samples_val << "\n"
     << "seed = " << c.synth.seed << "\n"
     << "stage_channels = " << c.stage_channels << "\n"
     << "blocks_per_stage = " << c.blocks_per_stage << "\n"
     << "split_stage = " << c.model.split_stage << "\n"
     << "se_reduction = " << c.model.se_reduction << "\n"
     << "dropout = " << fmt_g(c.model.dropout_rate) << "\n"
     << "batchnorm = " << (c.model.batchnorm ? 1 : 0) << "\n"
     << "lr = " << fmt_g(c.train.lr_initial) << "\n"
     << "momentum = " << fmt_g(c.train.momentum) << "\n"
     << "weight_decay = " << fmt_g(c.train.weight_decay) << "\n"
     << "batch_size = " << c.train.batch_size << "\n"
     << "epochs = " << c.train.epochs_max << "\n"
     << "plateau_patience = " << c.train.plateau_patience << "\n"
     << "min_lr = " << fmt_g(c.train.min_lr) << "\n"
     << "target_top1 = " << fmt_g(c.train.target_val_top1) << "\n";
  return os.str();
}

void finalize_model_config(RunConfig& c) {
  c.model.stage_channels = parse_i64_list(c.stage_channels);
  c.model.blocks_per_stage = parse_i64_list(c.blocks_per_stage);
  if (c.model.split_stage == 2 &&
      static_cast<int64_t>(c.model.stage_channels.size()) <= 2) {
    // Default split of a shorter-than-default backbone: fork before the
    // last stage.
    c.model.split_stage = static_cast<int64_t>(c.model.stage_channels.size()) - 1;
  }
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot open " + path + " for writing");
  f << text;
  if (!f) throw FormatError("write failed for " + path);
}

// ---------------------------------------------------------------------------

int cmd_gen(const RunConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  auto [train_set, val_set] = generate(cfg.synth);
  const std::string train_path = (fs::path(out_dir) / "train.stvid").string();
  const std::string val_path = (fs::path(out_dir) / "val.stvid").string();
  save_dataset(train_path, train_set);
  save_dataset(val_path, val_set);
  write_text((fs::path(out_dir) / "gen_config.txt").string(), merged_config_text(cfg));

  auto histogram = [](const VideoDataset& ds) {
    std::map<int, int64_t> h;
    for (const auto& s : ds.samples) ++h[s.label];
    std::string out;
    for (const auto& [label, count] : h) {
      out += " class" + std::to_string(label) + "=" + std::to_string(count);
    }
    return out;
  };
  std::cout << "wrote " << train_path << " samples=" << train_set.size()
            << histogram(train_set) << " checksum=" << dataset_checksum(train_path) << "\n";
  std::cout << "wrote " << val_path << " samples=" << val_set.size()
            << histogram(val_set) << " checksum=" << dataset_checksum(val_path) << "\n";
  return 0;
}

int cmd_train(RunConfig& cfg, const std::string& data_dir, const std::string& out_dir) {
  finalize_model_config(cfg);
  const VideoDataset train_set = load_dataset((fs::path(data_dir) / "train.stvid").string());
  const VideoDataset val_set = load_dataset((fs::path(data_dir) / "val.stvid").string());
  cfg.model.num_classes = train_set.config.num_classes;
  cfg.model.frames = train_set.config.frames;
  cfg.model.input_channels = train_set.config.channels;
  cfg.model.height = train_set.config.size;
  cfg.model.width = train_set.config.size;
  cfg.model.validate();
  cfg.train.validate();

  fs::create_directories(out_dir);
  write_text((fs::path(out_dir) / "run_config.txt").string(), merged_config_text(cfg));

  StAbnModel model = build_model(cfg.model, cfg.train.seed);
  std::cout << "model parameters: " << model.parameter_count() << "\n";

  const std::string ckpt_path = (fs::path(out_dir) / "checkpoint.bin").string();
  const std::string log_path = (fs::path(out_dir) / "train.log").string();
  std::ofstream log_file(log_path, std::ios::trunc);
  if (!log_file) throw FormatError("cannot open " + log_path + " for writing");

  std::ostringstream tee;
  TrainResult result = train(model, train_set, val_set, cfg.train, ckpt_path, &tee);
  log_file << tee.str();
  std::cout << tee.str();
  std::cout << "best_val_loss=" << fmt_g(result.best_val_loss)
            << " final_val_top1=" << fmt_g(result.final_val_top1)
            << " epochs=" << result.epochs_run << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path,
             const std::string& invert, int64_t batch_size) {
  StAbnModel model = model_from_checkpoint(load_checkpoint(ckpt_path));
  const VideoDataset ds = load_dataset(data_path);

  if (invert == "all") {
    const InversionReport report = run_inversion_experiment(model, ds, batch_size);
    std::cout << inversion_report_table(report);
    std::cout << inversion_report_kv(report);
  } else {
    AttentionOverride ov;
    if (invert == "spatial" || invert == "both") ov.spatial = AttentionOverride::Mode::Inverted;
    if (invert == "temporal" || invert == "both") ov.temporal = AttentionOverride::Mode::Inverted;
    if (invert != "none" && invert != "spatial" && invert != "temporal" && invert != "both") {
      throw ConfigError("--invert must be one of none|spatial|temporal|both|all");
    }
    NoGradGuard ng;
    std::mt19937_64 rng(0);
    int64_t hits1 = 0;
    double loss_sum = 0.0;
    const int k5 = static_cast<int>(std::min<int64_t>(5, model.config.num_classes));
    int64_t hits5 = 0;
    for (int64_t start = 0; start < ds.size(); start += batch_size) {
      const int64_t end = std::min(start + batch_size, ds.size());
      std::vector<int64_t> idx(static_cast<size_t>(end - start));
      for (int64_t i = start; i < end; ++i) idx[static_cast<size_t>(i - start)] = i;
      Batch b = materialize_batch(ds, idx);
      ForwardOutput out = model.forward_with_override(b.videos, ov, rng);
      loss_sum += joint_loss(out, b.labels).l_total * static_cast<double>(end - start);
      hits1 += topk_hits(out.per_logits, b.labels, 1);
      hits5 += topk_hits(out.per_logits, b.labels, k5);
    }
    const double n = static_cast<double>(ds.size());
    std::cout << "invert=" << invert << " val_l_total=" << fmt_g(loss_sum / n)
              << " top1=" << fmt_g(static_cast<double>(hits1) / n)
              << " top5=" << fmt_g(static_cast<double>(hits5) / n) << "\n";
  }

  // Localization against the synthetic ground truth rides along whenever the
  // dataset carries window/bbox metadata.
  bool has_metadata = true;
  for (const auto& s : ds.samples) {
    if (s.bbox.empty() || s.window_len <= 0) { has_metadata = false; break; }
  }
  if (has_metadata) {
    std::cout << localization_report_kv(score_localization(model, ds, batch_size));
  }
  return 0;
}

int cmd_explain(const std::string& ckpt_path, const std::string& data_path,
                int64_t index, const std::string& out_dir, double alpha) {
  StAbnModel model = model_from_checkpoint(load_checkpoint(ckpt_path));
  const VideoDataset ds = load_dataset(data_path);
  if (index < 0 || index >= ds.size()) {
    throw InputError("--index " + std::to_string(index) + " out of range for " +
                     std::to_string(ds.size()) + " samples");
  }
  fs::create_directories(out_dir);

  NoGradGuard ng;
  std::mt19937_64 rng(0);
  Batch b = materialize_batch(ds, {index});
  ForwardOutput out = model.forward(b.videos, /*training=*/false, rng);

  const VideoSample& sample = ds.samples[static_cast<size_t>(index)];
  const std::vector<Raster> frames = render_spatial(sample, ds.config, out.attention, alpha);
  const std::vector<Raster> swatches = render_temporal(out.attention);
  for (size_t t = 0; t < frames.size(); ++t) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%02zu.ppm", t);
    write_ppm((fs::path(out_dir) / name).string(), frames[t]);
  }
  write_ppm((fs::path(out_dir) / "sheet.ppm").string(), contact_sheet(frames, swatches));
  write_text((fs::path(out_dir) / "temporal.csv").string(), temporal_csv(out.attention));
  std::cout << "wrote " << frames.size() << " frame overlays, sheet.ppm and temporal.csv to "
            << out_dir << " (sample " << index << ", label " << sample.label << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatio-temporal attention network on synthetic moving-square videos"};
  app.require_subcommand(1);

  RunConfig cfg;
  std::string config_file;

  // Pre-scan for --config so file values become the defaults that explicit
  // flags then override.
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--config") config_file = argv[i + 1];
  }
  try {
    if (!config_file.empty()) load_config_file(cfg, config_file);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  std::string out_dir = "out";
  std::string data_dir = "data";
  std::string data_path;
  std::string ckpt_path;
  std::string invert = "none";
  int64_t index = 0;
  double alpha = 0.5;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_file, "key = value config file");
  };
  auto add_data_flags = [&](CLI::App* sub) {
    sub->add_option("--classes", cfg.synth.num_classes, "number of motion classes (2 or 4)");
    sub->add_option("--frames", cfg.synth.frames, "frames per video");
    sub->add_option("--size", cfg.synth.size, "frame height = width");
    sub->add_option("--shape-size", cfg.synth.shape_size, "moving square side length");
    sub->add_option("--window", cfg.synth.window_len, "motion window length in frames");
    sub->add_option("--noise", cfg.synth.noise_std, "background noise std");
    sub->add_option("--train", cfg.synth.samples_train, "training sample count");
    sub->add_option("--val", cfg.synth.samples_val, "validation sample count");
    sub->add_option("--seed", cfg.synth.seed, "generation seed");
  };

  CLI::App* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  add_common(gen);
  add_data_flags(gen);
  gen->add_option("--out", out_dir, "output directory")->required();

  CLI::App* tr = app.add_subcommand("train", "train on a generated dataset");
  add_common(tr);
  tr->add_option("--data", data_dir, "directory with train.stvid and val.stvid")->required();
  tr->add_option("--out", out_dir, "output directory for checkpoint and log")->required();
  tr->add_option("--stages", cfg.stage_channels, "stage channel list, e.g. 16,32,64");
  tr->add_option("--blocks", cfg.blocks_per_stage, "blocks per stage, e.g. 1,1,1");
  tr->add_option("--split-stage", cfg.model.split_stage, "stage index where the branches fork");
  tr->add_option("--dropout", cfg.model.dropout_rate, "branch dropout rate");
  tr->add_option("--lr", cfg.train.lr_initial, "initial learning rate");
  tr->add_option("--momentum", cfg.train.momentum, "SGD momentum");
  tr->add_option("--weight-decay", cfg.train.weight_decay, "L2 on conv/linear weights");
  tr->add_option("--batch", cfg.train.batch_size, "batch size");
  tr->add_option("--epochs", cfg.train.epochs_max, "maximum epochs");
  tr->add_option("--patience", cfg.train.plateau_patience, "plateau patience in epochs");
  tr->add_option("--target-top1", cfg.train.target_val_top1,
                 "stop once validation top-1 reaches this (0 = run to epochs/min-lr)");
  tr->add_option("--seed", cfg.train.seed, "training seed");

  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(ev);
  ev->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  ev->add_option("--data", data_path, "dataset file (.stvid)")->required();
  ev->add_option("--invert", invert, "none|spatial|temporal|both|all")
      ->check(CLI::IsMember({"none", "spatial", "temporal", "both", "all"}));
  ev->add_option("--batch", cfg.train.batch_size, "batch size");

  CLI::App* ex = app.add_subcommand("explain", "export attention visualizations");
  add_common(ex);
  ex->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  ex->add_option("--data", data_path, "dataset file (.stvid)")->required();
  ex->add_option("--index", index, "sample index");
  ex->add_option("--out", out_dir, "output directory")->required();
  ex->add_option("--alpha", alpha, "heatmap overlay alpha in [0,1]");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) {
      cfg.synth.validate();
      return cmd_gen(cfg, out_dir);
    }
    if (tr->parsed()) return cmd_train(cfg, data_dir, out_dir);
    if (ev->parsed()) return cmd_eval(ckpt_path, data_path, invert, cfg.train.batch_size);
    if (ex->parsed()) return cmd_explain(ckpt_path, data_path, index, out_dir, alpha);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
  return 1;
}
