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
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "histoclean/image.hpp"
#include "histoclean/tensor.hpp"

namespace histoclean::data {

class ManifestError : public Error {
 public:
  using Error::Error;
};

inline constexpr int kNumClasses = 7;

/// Artifact classes, in label order.
inline const std::array<std::string, kNumClasses> kClassNames = {
    "pen_marker", "ink", "blur", "air_bubble", "tissue_fold", "dust", "filament"};

enum class Domain { artifact, clean };  // A and B
enum class Magnification { x10, x40 };
enum class Split { train, test };

std::string to_string(Domain d);
std::string to_string(Magnification m);
std::string to_string(Split s);

struct TileRecord {
  std::string id;
  std::filesystem::path image_path;
  Domain domain = Domain::clean;
  std::optional<int> label;  // present iff domain == artifact
  Magnification magnification = Magnification::x40;
  std::string source_id;
  std::optional<Split> split;  // unassigned until split_manifest
  std::optional<std::string> paired_clean_id;

  bool operator==(const TileRecord&) const = default;
};

struct Manifest {
  std::vector<TileRecord> records;
  std::vector<std::string> class_names{kClassNames.begin(), kClassNames.end()};
  int tile_size = 300;
  /// Directory relative image paths are resolved against.
  std::filesystem::path root;

  std::filesystem::path resolve(const TileRecord& r) const;
  const TileRecord* find(const std::string& id) const;
  /// Records with the given split, keeping header fields.
  Manifest subset(Split split) const;
  Manifest subset(Domain domain) const;
  std::size_t count(Domain domain, std::optional<Split> split = std::nullopt) const;
};

/// Checks every manifest invariant; throws ManifestError. `check_files`
/// stat-checks image paths.
void validate(const Manifest& m, bool check_files);

/// One JSON object per line; a leading line with "kind":"header" carries
/// tile_size and class_names. Null marks an absent optional field.
Manifest load_manifest(const std::filesystem::path& path);
Manifest parse_manifest(std::istream& in, const std::filesystem::path& root, bool check_files);
void save_manifest(const Manifest& m, const std::filesystem::path& path);

/// Stratified per (domain, label); records sharing a source_id are ordered
/// together so paired tiles land in the same split.
Manifest split_manifest(const Manifest& m, double train_fraction, std::uint64_t seed);

struct AugmentConfig {
  double flip_h_prob = 0.5;
  double flip_v_prob = 0.5;
  int crop_size = 256;
  int out_size = 128;
};

void validate(const AugmentConfig& cfg, int tile_size);

/// Random flips, random crop, bilinear resize. `image` is (1, H, W, C).
Tensor augment(const Tensor& image, const AugmentConfig& cfg, std::mt19937_64& rng);
/// Center crop then bilinear resize; no randomness.
Tensor eval_transform(const Tensor& image, const AugmentConfig& cfg);

struct Batch {
  Tensor images_a;  // (B, S, S, 3) in [-1, 1]
  std::vector<int> labels_a;
  Tensor images_b;
  std::optional<Tensor> clean_targets_a;  // paired ground truth when every A sample has one
  std::vector<std::string> ids_a;
  std::vector<std::string> ids_b;
};

/// Deterministic unpaired batch source. Batch (epoch, step) is a pure
/// function of (manifest, batch size, augmentation, seed), so any number of
/// workers produces the same sequence.
class BatchStream {
 public:
  BatchStream(Manifest train, int batch_size, AugmentConfig cfg, std::uint64_t seed);

  int steps_per_epoch() const { return steps_; }
  Batch batch(int epoch, int step) const;
  /// Builds batches [first, first + count) of an epoch with `workers` threads.
  std::vector<Batch> prefetch(int epoch, int first, int count, int workers) const;

 private:
  Tensor load(const TileRecord& r) const;
  std::size_t pick(const std::vector<std::size_t>& pool, int domain_tag, int epoch, std::int64_t i) const;

  Manifest manifest_;
  int batch_size_;
  AugmentConfig cfg_;
  std::uint64_t seed_;
  int steps_ = 0;
  std::vector<std::size_t> a_, b_;
  std::map<std::string, std::size_t> by_id_;
  std::vector<Image8> cache_;  // parallel to manifest_.records when preloaded
};

/// Loads and validates an image as a (1, H, W, 3) tensor in [-1, 1].
Tensor load_tile(const std::filesystem::path& path, int expected_size = 0);

/// Mixes seeds and stream tags into an independent 64-bit seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);
std::uint64_t hash_string(std::string_view s, std::uint64_t seed = 0);

}  // namespace histoclean::data
