// Copyright 2026 The histoclean Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "histoclean/data_pipeline.hpp"
#include "histoclean/image.hpp"

namespace histoclean::data {

/// Rendering ranges for one corruption class. Widths are fractions of the
/// tile size; blur is a Gaussian sigma in pixels.
struct CorruptionParams {
  float opacity_min = 0.6f;
  float opacity_max = 0.9f;
  float blur_sigma_min = 1.5f;
  float blur_sigma_max = 3.0f;
  float width_min = 0.08f;
  float width_max = 0.16f;
};

std::array<CorruptionParams, kNumClasses> default_corruption_params();

struct SyntheticSpec {
  int n_scenes = 100;
  std::vector<int> classes{0, 2, 5};
  int tile_size = 64;
  std::uint64_t seed = 0;
  std::array<CorruptionParams, kNumClasses> params = default_corruption_params();
};

/// One rendered scene: the clean tile, and per requested class the
/// corrupted tile plus the exact support of the corruption.
struct SyntheticScene {
  Image8 clean;
  std::vector<Image8> artifacts;
  std::vector<Image8> masks;  // gray, 255 where the corruption touched the tile
};

SyntheticScene render_scene(const SyntheticSpec& spec, int scene);

/// Writes `<out>/clean/<scene>.png`, `<out>/artifact/<scene>_<class>.png`,
/// `<out>/masks/<scene>_<class>.png` and `<out>/manifest.txt`; returns the
/// manifest (splits unassigned).
Manifest synthesize_corpus(const SyntheticSpec& spec, const std::filesystem::path& out_dir);

/// Corruption mask of a synthetic artifact tile, derived from the corpus
/// layout; empty when the tile has none on disk.
std::filesystem::path mask_path_for(const Manifest& m, const TileRecord& r);

}  // namespace histoclean::data
