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
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <fstream>
#include <limits>
#include <sstream>

#include "stabn/dataset.hpp"
#include "stabn/errors.hpp"
#include "stabn/eval.hpp"
#include "stabn/model.hpp"
#include "stabn/render.hpp"
#include "stabn/trainer.hpp"

namespace py = pybind11;
using namespace stabn;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  Shape shape(a.ndim());
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<size_t>(i)] = a.shape(i);
  std::vector<double> data(a.data(), a.data() + a.size());
  return Tensor::from_data(std::move(shape), std::move(data));
}

py::array_t<double> array_from_tensor(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::copy(t.data(), t.data() + t.numel(), out.mutable_data());
  return out;
}

ModelConfig model_config_from_kwargs(int64_t num_classes, int64_t frames,
                                     int64_t input_channels, int64_t size,
                                     const std::vector<int64_t>& stage_channels,
                                     const std::vector<int64_t>& blocks_per_stage,
                                     int64_t split_stage, double dropout, bool batchnorm) {
  ModelConfig c;
  c.num_classes = num_classes;
  c.frames = frames;
  c.input_channels = input_channels;
  c.height = size;
  c.width = size;
  c.stage_channels = stage_channels;
  c.blocks_per_stage = blocks_per_stage;
  c.split_stage = split_stage;
  c.dropout_rate = dropout;
  c.batchnorm = batchnorm;
  return c;
}

}  // namespace

PYBIND11_MODULE(_stabn, m) {
  m.doc() = "Spatio-temporal attention network: core operations";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_IOError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  // --- datasets ------------------------------------------------------------
  py::class_<VideoDataset>(m, "Dataset")
      .def_property_readonly("size", &VideoDataset::size)
      .def_property_readonly("frames", [](const VideoDataset& d) { return d.config.frames; })
      .def_property_readonly("num_classes",
                             [](const VideoDataset& d) { return d.config.num_classes; })
      .def("labels",
           [](const VideoDataset& d) {
             std::vector<int> out;
             out.reserve(d.samples.size());
             for (const auto& s : d.samples) out.push_back(s.label);
             return out;
           })
      .def("video",
           [](const VideoDataset& d, int64_t index) {
             if (index < 0 || index >= d.size()) throw InputError("sample index out of range");
             const auto& s = d.samples[static_cast<size_t>(index)];
             py::array_t<float> out({static_cast<py::ssize_t>(d.config.channels),
                                     static_cast<py::ssize_t>(d.config.frames),
                                     static_cast<py::ssize_t>(d.config.size),
                                     static_cast<py::ssize_t>(d.config.size)});
             std::copy(s.video.begin(), s.video.end(), out.mutable_data());
             return out;
           },
           py::arg("index"))
      .def("save",
           [](const VideoDataset& d, const std::string& path) { save_dataset(path, d); },
           py::arg("path"))
      .def("__len__", &VideoDataset::size);

  m.def(
      "generate_dataset",
      [](int num_classes, int frames, int size, int shape_size, int window_len,
         double noise_std, int samples_train, int samples_val, uint64_t seed) {
        SynthConfig c;
        c.num_classes = num_classes;
        c.frames = frames;
        c.size = size;
        c.shape_size = shape_size;
        c.window_len = window_len;
        c.noise_std = noise_std;
        c.samples_train = samples_train;
        c.samples_val = samples_val;
        c.seed = seed;
        auto [train, val] = generate(c);
        return py::make_tuple(train, val);
      },
      py::arg("num_classes") = 4, py::arg("frames") = 8, py::arg("size") = 32,
      py::arg("shape_size") = 4, py::arg("window_len") = 3, py::arg("noise_std") = 0.4,
      py::arg("samples_train") = 2000, py::arg("samples_val") = 400, py::arg("seed") = 42,
      "Generate deterministic moving-square train/val datasets.");
  m.def("save_dataset", &save_dataset, py::arg("path"), py::arg("dataset"));
  m.def("load_dataset", &load_dataset, py::arg("path"));
  m.def("dataset_checksum", &dataset_checksum, py::arg("path"));

  // --- model ---------------------------------------------------------------
  py::class_<StAbnModel>(m, "Model")
      .def_property_readonly("parameter_count",
                             [](StAbnModel& s) { return s.parameter_count(); })
      .def("forward",
           [](StAbnModel& s, const py::array_t<double, py::array::c_style | py::array::forcecast>& video) {
             NoGradGuard ng;
             std::mt19937_64 rng(0);
             ForwardOutput out = s.forward(tensor_from_array(video), false, rng);
             py::dict d;
             d["per_logits"] = array_from_tensor(out.per_logits);
             d["att_logits"] = array_from_tensor(out.att_logits);
             d["spatial_attention"] = array_from_tensor(out.attention.spatial);
             d["temporal_attention"] = array_from_tensor(out.attention.temporal);
             return d;
           },
           py::arg("video"), "Inference forward pass on a [N,C,T,H,W] array.")
      .def("forward_inverted",
           [](StAbnModel& s, const py::array_t<double, py::array::c_style | py::array::forcecast>& video,
              bool invert_spatial, bool invert_temporal) {
             NoGradGuard ng;
             std::mt19937_64 rng(0);
             AttentionOverride ov;
             if (invert_spatial) ov.spatial = AttentionOverride::Mode::Inverted;
             if (invert_temporal) ov.temporal = AttentionOverride::Mode::Inverted;
             ForwardOutput out = s.forward_with_override(tensor_from_array(video), ov, rng);
             return array_from_tensor(out.per_logits);
           },
           py::arg("video"), py::arg("invert_spatial"), py::arg("invert_temporal"),
           "Perception logits with the selected attentions replaced by 1 - M.");

  m.def("build_model", [](int64_t num_classes, int64_t frames, int64_t input_channels,
                          int64_t size, const std::vector<int64_t>& stage_channels,
                          const std::vector<int64_t>& blocks_per_stage, int64_t split_stage,
                          double dropout, bool batchnorm, uint64_t seed) {
          return build_model(model_config_from_kwargs(num_classes, frames, input_channels, size,
                                                      stage_channels, blocks_per_stage,
                                                      split_stage, dropout, batchnorm),
                             seed);
        },
        py::arg("num_classes") = 4, py::arg("frames") = 8, py::arg("input_channels") = 1,
        py::arg("size") = 32, py::arg("stage_channels") = std::vector<int64_t>{16, 32, 64},
        py::arg("blocks_per_stage") = std::vector<int64_t>{1, 1, 1}, py::arg("split_stage") = 2,
        py::arg("dropout") = 0.5, py::arg("batchnorm") = true, py::arg("seed") = 0);

  m.def("load_model",
        [](const std::string& path) { return model_from_checkpoint(load_checkpoint(path)); },
        py::arg("path"));
  m.def("save_model",
        [](StAbnModel& model, const std::string& path) {
          save_checkpoint(path, make_checkpoint(model, nullptr, 0,
                                                std::numeric_limits<double>::infinity(), ""));
        },
        py::arg("model"), py::arg("path"));

  // --- training and evaluation ---------------------------------------------
  m.def(
      "train",
      [](StAbnModel& model, const VideoDataset& train_set, const VideoDataset& val_set,
         double lr, double momentum, double weight_decay, int64_t batch_size, int epochs,
         int plateau_patience, double target_top1, uint64_t seed,
         const std::string& checkpoint_path) {
        TrainConfig c;
        c.lr_initial = lr;
        c.momentum = momentum;
        c.weight_decay = weight_decay;
        c.batch_size = batch_size;
        c.epochs_max = epochs;
        c.plateau_patience = plateau_patience;
        c.target_val_top1 = target_top1;
        c.seed = seed;
        std::ostringstream log;
        TrainResult r = train(model, train_set, val_set, c, checkpoint_path, &log);
        py::dict d;
        d["log"] = log.str();
        d["best_val_loss"] = r.best_val_loss;
        d["final_val_top1"] = r.final_val_top1;
        d["epochs_run"] = r.epochs_run;
        return d;
      },
      py::arg("model"), py::arg("train_set"), py::arg("val_set"), py::arg("lr") = 0.01,
      py::arg("momentum") = 0.9, py::arg("weight_decay") = 0.0005, py::arg("batch_size") = 32,
      py::arg("epochs") = 10, py::arg("plateau_patience") = 3, py::arg("target_top1") = 0.0,
      py::arg("seed") = 0, py::arg("checkpoint_path") = std::string(),
      "Joint two-branch SGD training with plateau learning-rate decay.");

  m.def("evaluate",
        [](StAbnModel& model, const VideoDataset& ds, int64_t batch_size) {
          auto [loss, top1] = evaluate(model, ds, batch_size);
          return py::make_tuple(loss, top1);
        },
        py::arg("model"), py::arg("dataset"), py::arg("batch_size") = 32,
        "Mean joint loss and top-1 accuracy over a dataset.");

  m.def("inversion_experiment",
        [](StAbnModel& model, const VideoDataset& ds, int64_t batch_size) {
          const InversionReport r = run_inversion_experiment(model, ds, batch_size);
          py::list rows;
          for (const auto& c : r.conditions) {
            py::dict row;
            row["spatial_inverted"] = c.spatial_inverted;
            row["temporal_inverted"] = c.temporal_inverted;
            row["top1"] = c.top1;
            row["top5"] = c.top5;
            rows.append(row);
          }
          return rows;
        },
        py::arg("model"), py::arg("dataset"), py::arg("batch_size") = 32,
        "Accuracy under the four attention-inversion conditions.");

  m.def("localization",
        [](StAbnModel& model, const VideoDataset& ds, int64_t batch_size) {
          const LocalizationReport r = score_localization(model, ds, batch_size);
          py::dict d;
          d["temporal_contrast"] = r.temporal_contrast;
          d["spatial_contrast"] = r.spatial_contrast;
          d["samples_used"] = r.samples_used;
          d["samples_total"] = r.samples_total;
          return d;
        },
        py::arg("model"), py::arg("dataset"), py::arg("batch_size") = 32,
        "Attention contrast against the synthetic window/bbox ground truth.");

  // --- rendering -----------------------------------------------------------
  m.def("colormap_jet",
        [](double v) {
          const auto c = colormap_jet(v);
          return py::make_tuple(static_cast<int>(c[0]), static_cast<int>(c[1]),
                                static_cast<int>(c[2]));
        },
        py::arg("value"), "Piecewise-linear blue-cyan-yellow-red colormap over [0,1].");

  m.def("explain",
        [](StAbnModel& model, const VideoDataset& ds, int64_t index,
           const std::string& out_dir, double alpha) {
          if (index < 0 || index >= ds.size()) throw InputError("sample index out of range");
          NoGradGuard ng;
          std::mt19937_64 rng(0);
          Batch b = materialize_batch(ds, {index});
          ForwardOutput out = model.forward(b.videos, false, rng);
          const VideoSample& sample = ds.samples[static_cast<size_t>(index)];
          auto frames = render_spatial(sample, ds.config, out.attention, alpha);
          auto swatches = render_temporal(out.attention);
          std::vector<std::string> written;
          for (size_t t = 0; t < frames.size(); ++t) {
            char name[32];
            std::snprintf(name, sizeof(name), "/frame_%02zu.ppm", t);
            write_ppm(out_dir + name, frames[t]);
            written.push_back(out_dir + name);
          }
          write_ppm(out_dir + "/sheet.ppm", contact_sheet(frames, swatches));
          std::ofstream csv(out_dir + "/temporal.csv", std::ios::trunc);
          csv << temporal_csv(out.attention);
          written.push_back(out_dir + "/sheet.ppm");
          written.push_back(out_dir + "/temporal.csv");
          return written;
        },
        py::arg("model"), py::arg("dataset"), py::arg("index"), py::arg("out_dir"),
        py::arg("alpha") = 0.5,
        "Write per-frame heatmap overlays, a contact sheet, and the temporal CSV.");
}
