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
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "histoclean/data_pipeline.hpp"
#include "histoclean/features.hpp"
#include "histoclean/image.hpp"

namespace histoclean::eval {

class EvalError : public Error {
 public:
  using Error::Error;
};

struct FeatureStats {
  Eigen::VectorXd mu;
  Eigen::MatrixXd sigma;
  std::int64_t n = 0;
};

/// Sample mean and unbiased covariance of the rows. Requires n >= 2.
FeatureStats gaussian_stats(const Eigen::MatrixXd& features);

/// ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2), clamped to >= 0.
/// Eigenvalues below 1e-8 * max are treated as zero.
double frechet_distance(const FeatureStats& s1, const FeatureStats& s2);

/// FID between two image batches (N, H, W, 3) in [-1, 1].
double fid(const Tensor& images1, const Tensor& images2, const FeatureExtractor& ex);

/// -10 log10(MSE) for images with values in [0, 1]; 99 dB when MSE < 1e-10.
double paired_psnr(const Tensor& cleaned, const Tensor& reference);
/// Maps model-space values in [-1, 1] to [0, 1] through 8-bit quantisation.
Tensor to_unit(const Tensor& t);

/// Mosaic geometry: 128 px cells separated (and bordered) by 4 px gutters.
inline constexpr int kMosaicCell = 128;
inline constexpr int kMosaicGutter = 4;

/// Grid with one column per sample and rows input / output / mask. Images are
/// (N, H, W, 3) in [-1, 1]; masks (N, H, W, 1) in [0, 1].
Image8 render_mosaic(const Tensor& inputs, const Tensor& outputs, const std::optional<Tensor>& masks);
void render_mosaic(const Tensor& inputs, const Tensor& outputs, const std::optional<Tensor>& masks,
                   const std::filesystem::path& out_path);

struct PsnrStats {
  double mean_cleaned = 0.0;  // PSNR(cleaned, paired clean)
  double mean_input = 0.0;    // PSNR(artifact input, paired clean)
  double fraction_improved = 0.0;
  std::int64_t n = 0;
};

struct MaskMetrics {
  double mean_sparsity = 0.0;
  double mean_tv = 0.0;
  std::optional<double> overlap;  // soft Dice against the synthetic masks
};

struct SplitReport {
  double fid = 0.0;
  std::int64_t n_cleaned = 0;
  std::int64_t n_reference = 0;
  std::optional<PsnrStats> psnr;
  std::optional<MaskMetrics> mask;
  std::optional<double> classifier_accuracy;
};

struct EvalReport {
  std::string variant;
  std::string extractor;
  int epoch = 0;
  std::optional<SplitReport> train;
  std::optional<SplitReport> test;

  std::string to_json() const;
  std::string to_table() const;
};

/// Published FIDs for comparison only; they come from unreleased data and
/// are not reproducible here.
struct ReferenceFid {
  const char* variant;
  double train;
  double test;
};
inline constexpr ReferenceFid kPublishedFid[] = {{"base", 45.09, 70.71}, {"ws", 34.43, 59.36}};
inline constexpr bool kPublishedFidReproducible = false;

struct EvalOptions {
  std::int64_t max_per_split = 0;  // 0 = all tiles
  int batch = 16;
};

/// Cleans every artifact tile of each split with the checkpoint's G_AB and
/// compares against that split's clean tiles. Never writes to the checkpoint.
EvalReport evaluate_model(const std::filesystem::path& checkpoint, const data::Manifest& manifest,
                          const FeatureExtractor& ex, const EvalOptions& opts = {});

/// Table-1-style comparison of several reports plus the published numbers.
std::string comparison_table(const std::vector<EvalReport>& reports);

}  // namespace histoclean::eval
