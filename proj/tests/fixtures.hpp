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

#include <fstream>
#include <iterator>
#include <string>

#include "histoclean/synthetic.hpp"
#include "histoclean/trainer.hpp"
#include "support.hpp"

namespace histoclean::testing {

/// Narrow networks at `size` px so a step takes milliseconds.
inline train::TrainConfig tiny_config(train::Variant v, int size = 32, std::uint64_t seed = 1) {
  train::TrainConfig cfg;
  cfg.variant = v;
  cfg.seed = seed;
  cfg.batch_size = 2;
  cfg.base_width = 4;
  cfg.depth = 3;
  cfg.disc_widths = {4, 8, 8, 8};
  cfg.classifier_widths = {4, 4, 4, 4};
  cfg.augment = {0.5, 0.5, size, size};
  cfg.deterministic = true;
  return cfg;
}

/// Unpaired batch of `n` random tiles per domain with labels 0..n-1 mod 7.
inline data::Batch random_batch(int n, int size, std::uint64_t seed) {
  data::Batch b;
  b.images_a = random_tensor({n, size, size, 3}, seed);
  b.images_b = random_tensor({n, size, size, 3}, seed + 1);
  for (int i = 0; i < n; ++i) b.labels_a.push_back(i % 7);
  return b;
}

inline data::Manifest tiny_corpus(const std::filesystem::path& dir, int scenes, int tile, std::uint64_t seed = 0,
                                  std::vector<int> classes = {0, 2, 5}) {
  data::SyntheticSpec spec;
  spec.n_scenes = scenes;
  spec.classes = std::move(classes);
  spec.tile_size = tile;
  spec.seed = seed;
  return data::synthesize_corpus(spec, dir);
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace histoclean::testing
