# Copyright 2026 The stabn Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
# ==============================================================================
"""Spatio-temporal attention network on synthetic moving-square videos."""

from _stabn import (  # noqa: F401
    ConfigError,
    Dataset,
    FormatError,
    InputError,
    Model,
    NumericalError,
    build_model,
    colormap_jet,
    dataset_checksum,
    evaluate,
    explain,
    generate_dataset,
    inversion_experiment,
    load_dataset,
    load_model,
    localization,
    save_dataset,
    save_model,
    train,
)

__all__ = [
    "ConfigError",
    "Dataset",
    "FormatError",
    "InputError",
    "Model",
    "NumericalError",
    "build_model",
    "colormap_jet",
    "dataset_checksum",
    "evaluate",
    "explain",
    "generate_dataset",
    "inversion_experiment",
    "load_dataset",
    "load_model",
    "localization",
    "save_dataset",
    "save_model",
    "train",
]
