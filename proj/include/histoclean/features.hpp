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

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>

#include <Eigen/Dense>

#include "histoclean/tensor.hpp"

namespace histoclean::eval {

enum class ExtractorKind { pretrained_inception_pool, seeded_random_projection };
std::string to_string(ExtractorKind k);

/// Environment variable naming the Inception-v3 weight file.
inline constexpr const char* kInceptionWeightsEnv = "HISTOCLEAN_INCEPTION_WEIGHTS";

class InceptionV3;

/// Maps image batches to feature rows. Equal construction arguments give
/// identical features.
class FeatureExtractor {
 public:
  /// Downsample to `size`x`size`, flatten, project with a seeded Gaussian
  /// matrix to `dim` features.
  static FeatureExtractor random_projection(std::uint64_t seed, int dim = 128, int size = 32);
  /// Inception-v3 pool features (2048-d) from a weight file in checkpoint
  /// format holding torchvision state-dict names and layouts.
  static FeatureExtractor inception(const std::filesystem::path& weights);

  ExtractorKind kind() const { return kind_; }
  int dim() const { return dim_; }
  std::string describe() const;

  /// images: (N, H, W, 3) in [-1, 1]. Returns N x dim.
  Eigen::MatrixXd extract(const Tensor& images) const;

 private:
  FeatureExtractor() = default;
  ExtractorKind kind_ = ExtractorKind::seeded_random_projection;
  int dim_ = 0;
  int size_ = 0;
  std::uint64_t seed_ = 0;
  Eigen::MatrixXf projection_;  // (size*size*3) x dim
  std::shared_ptr<const InceptionV3> inception_;
  std::string source_;
};

}  // namespace histoclean::eval
