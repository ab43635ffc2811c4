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
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "histoclean/checkpoint.hpp"
#include "histoclean/data_pipeline.hpp"
#include "histoclean/losses.hpp"
#include "histoclean/networks.hpp"
#include "histoclean/optim.hpp"

namespace histoclean::train {

class TrainError : public Error {
 public:
  using Error::Error;
};

enum class Variant { base, dpa, cond, no_aba, attn, ws };
std::string to_string(Variant v);
Variant parse_variant(const std::string& s);
const std::vector<Variant>& all_variants();

struct TrainConfig {
  Variant variant = Variant::base;
  losses::LossWeights weights;
  double lr = 1e-3;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double lr_decay = 0.9975;  // per epoch
  int epochs = 30;
  int batch_size = 16;
  double weight_decay = 1e-5;
  double real_label = 0.9;
  double d_loss_factor = 0.5;  // multiplies both squared-error terms of each discriminator loss
  std::uint64_t seed = 0;
  data::AugmentConfig augment;

  std::optional<nets::Arch> arch;  // unset: attention_unet for dpa, unet otherwise
  int base_width = 32;
  int depth = 4;
  std::vector<int> disc_widths{64, 128, 256, 512};
  std::vector<int> classifier_widths{16, 32, 64, 128};
  int image_pool = 0;  // past-fake buffer size per discriminator; 0 disables

  bool deterministic = false;  // zeroes the wall-clock column
  int workers = 1;            // batch preparation threads

  nets::Arch generator_arch() const;
  /// Weights after variant rules (no_aba zeroes the A->B->A cycle weight).
  losses::LossWeights effective_weights() const;
  bool needs_labels() const { return variant == Variant::cond || variant == Variant::ws; }
  bool uses_attention() const { return variant == Variant::attn || variant == Variant::ws; }
  void validate() const;

  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

double lr_schedule(const TrainConfig& cfg, int epoch);

/// All networks of one variant. Seeds derive from cfg.seed.
class CycleGanModel {
 public:
  explicit CycleGanModel(const TrainConfig& cfg);

  Variant variant() const { return variant_; }
  nets::Generator g_ab, g_ba;
  nets::Discriminator d_a, d_b;
  std::optional<nets::AttentionHead> alpha;
  std::optional<nets::RgbProjector> proj;
  std::optional<nets::Classifier> classifier;

  /// Parameters updated in the generator-side substep.
  std::vector<nets::Parameters*> generator_side();
  std::vector<nets::Parameters*> discriminator_side();
  std::vector<std::pair<std::string, Var>> named(const std::vector<nets::Parameters*>& groups) const;
  std::vector<std::pair<std::string, Tensor>> state() const;
  void load_state(const CheckpointFile& ckpt);
  std::uint64_t fingerprint() const;

  struct Translation {
    Var image;  // (N, H, W, 3)
    Var mask;   // (N, H, W, 1) for attn/ws, empty otherwise
  };
  /// Cleaning direction A -> B with variant-correct plumbing.
  Translation translate_ab(const Var& a) const;

  /// Inference: cleaned images and masks without building a graph.
  struct Cleaned {
    Tensor image;
    std::optional<Tensor> mask;
  };
  Cleaned clean(const Tensor& a) const;

 private:
  Variant variant_;
};

/// Records what one step fed through the networks; used by the plumbing checks.
struct StepProbe {
  std::vector<std::int64_t> g_ba_in_channels;
  std::vector<std::int64_t> d_a_in_channels;
  Shape d_a_out, d_b_out;
  Shape attention_shape;
  float attention_min = 0.0f, attention_max = 0.0f;
  // Parameter hashes around each substep; filled only when auditing.
  std::uint64_t d_before_g = 0, d_after_g = 0;
  std::uint64_t g_before_d = 0, g_after_d = 0;
};

struct StepMetrics {
  int epoch = 0;  // 1-based
  int step = 0;   // 0-based within the epoch
  double lr = 0.0;
  double wall_clock = 0.0;  // seconds for this step
  losses::LossReport losses;
};

/// Generator-side graph of one batch: every named component plus total_g.
struct GeneratorGraph {
  std::map<std::string, Var> components;
  Var total;
  Var fake_a, fake_b;              // detached before reaching the discriminators
  std::vector<int> fake_a_labels;  // condition label per fake_a sample (cond)
};

class Trainer {
 public:
  explicit Trainer(TrainConfig cfg);

  const TrainConfig& config() const { return cfg_; }
  CycleGanModel& model() { return model_; }
  const CycleGanModel& model() const { return model_; }
  const StepProbe& probe() const { return probe_; }
  /// Hash parameters around each substep (costly; for tests).
  void set_audit(bool on) { audit_ = on; }

  /// Sets the learning rate of both optimizers for a 1-based epoch.
  void begin_epoch(int epoch);
  /// One alternation: generator-side update, then discriminator update.
  StepMetrics step(const data::Batch& batch, int epoch, int step);

  GeneratorGraph generator_graph(const data::Batch& batch);
  /// total_d graph for given fakes (discriminators trainable).
  std::map<std::string, Var> discriminator_graph(const data::Batch& batch, const GeneratorGraph& g);

  CheckpointFile snapshot(int epoch) const;
  void restore(const CheckpointFile& ckpt);

 private:
  void check_batch(const data::Batch& batch) const;
  Var g_ba_input(const Var& image, const Var& attention, const std::vector<int>& labels);
  Var d_a_input(const Var& image, const std::vector<int>& labels);
  Var noise_channel(const Shape& like);
  std::pair<Tensor, std::vector<int>> pool_query(int which, const Tensor& fakes, const std::vector<int>& labels);

  TrainConfig cfg_;
  CycleGanModel model_;
  optim::Adam opt_g_, opt_d_;
  std::mt19937_64 rng_;
  StepProbe probe_;
  bool audit_ = false;
  std::vector<Tensor> pool_images_[2];
  std::vector<int> pool_labels_[2];
};

/// Outcome of a run: epochs completed, per-step metrics, last checkpoint written.
struct RunResult {
  int epochs_completed = 0;
  std::vector<StepMetrics> metrics;
  std::filesystem::path last_checkpoint;
};

using Progress = std::function<void(const StepMetrics&)>;

/// Trains from scratch. Writes ckpt_epoch_0.bin (init), ckpt_epoch_<k>.bin
/// per epoch, a `latest` marker and metrics.csv under out_dir.
RunResult run_training(const TrainConfig& cfg, const data::Manifest& train_manifest,
                       const std::filesystem::path& out_dir, const Progress& progress = {});

/// Continues from a checkpoint up to `epochs` (default: the configured
/// count). `expected`, when given, must match the checkpoint's config.
RunResult resume(const std::filesystem::path& checkpoint, const data::Manifest& train_manifest,
                 const std::filesystem::path& out_dir, const std::optional<TrainConfig>& expected = std::nullopt,
                 std::optional<int> epochs = std::nullopt, const Progress& progress = {});

/// Resolves a checkpoint argument: a file, a `latest` marker, or a run directory.
std::filesystem::path resolve_checkpoint(const std::filesystem::path& p);

/// Rebuilds the model stored in a checkpoint.
struct LoadedModel {
  TrainConfig config;
  int epoch = 0;
  std::unique_ptr<CycleGanModel> model;
};
LoadedModel load_model(const std::filesystem::path& checkpoint);

std::string metrics_header();
std::string metrics_row(const StepMetrics& m);

}  // namespace histoclean::train
