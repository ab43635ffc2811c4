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
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "histoclean/autograd.hpp"
#include "histoclean/ops.hpp"

namespace histoclean::nets {

inline constexpr int kNumClasses = 7;

/// Ordered, named parameter set of one network.
class Parameters {
 public:
  Var add(std::string name, Tensor value);
  const std::vector<std::pair<std::string, Var>>& items() const { return items_; }
  std::vector<std::pair<std::string, Var>>& items() { return items_; }
  std::size_t count() const;  // scalar parameter count
  void set_trainable(bool on);
  void zero_grad();
  /// FNV-1a over names, shapes and raw bytes; used to assert immutability.
  std::uint64_t fingerprint() const;

 private:
  std::vector<std::pair<std::string, Var>> items_;
};

/// Deterministic weight initialiser (Box-Muller on a 64-bit Mersenne twister).
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}
  Tensor normal(Shape shape, float stddev);
  Tensor uniform(Shape shape, float bound);

 private:
  std::mt19937_64 rng_;
};

enum class InitScheme {
  gan_normal,     // N(0, 0.02)
  fan_in_uniform  // U(-1/sqrt(fan_in), 1/sqrt(fan_in))
};

struct Conv {
  Var weight;
  Var bias;
  ops::Window window;
  Var operator()(const Var& x) const { return ops::conv2d(x, weight, bias, window); }
};

struct ConvTranspose {
  Var weight;
  Var bias;
  ops::Window window;
  Var operator()(const Var& x) const { return ops::conv_transpose2d(x, weight, bias, window); }
};

Conv make_conv(Parameters& p, Initializer& init, InitScheme scheme, const std::string& name, int in, int out,
               ops::Window win);
ConvTranspose make_conv_transpose(Parameters& p, Initializer& init, InitScheme scheme, const std::string& name,
                                  int in, int out, int kernel, int stride, int pad);

enum class Arch { unet, attention_unet };
std::string to_string(Arch a);
Arch parse_arch(const std::string& s);

struct GeneratorSpec {
  Arch arch = Arch::unet;
  int in_channels = 3;  // 3, 4 (attention channel + RGB) or 10 (RGB + 7 condition channels)
  int base_width = 32;
  int depth = 4;
  /// Own 3x3 tanh output head. Off when an external RGB projector supplies
  /// the translated image.
  bool output_head = true;

  int channels_at(int level) const;  // feature width of encoder level `level`
  void validate() const;
  bool operator==(const GeneratorSpec&) const = default;
};

struct GeneratorOutput {
  Var image;        // (N, H, W, 3), |v| < 1; empty without an output head
  Var penultimate;  // (N, H, W, base_width)
};

/// UNet / attention-UNet generator with instance norm, reflection padding,
/// transposed-convolution upsampling and skip concatenation.
class Generator {
 public:
  Generator(GeneratorSpec spec, std::uint64_t seed, const std::string& name);

  GeneratorOutput forward(const Var& x) const;
  Var features(const Var& x) const;

  const GeneratorSpec& spec() const { return spec_; }
  int feature_width() const { return spec_.base_width; }
  Parameters& params() { return params_; }
  const Parameters& params() const { return params_; }

 private:
  struct Gate {
    Conv skip, gating, psi;
  };
  GeneratorSpec spec_;
  Parameters params_;
  Conv stem_;
  std::vector<Conv> down_;
  std::vector<ConvTranspose> up_;
  std::vector<Gate> gates_;
  Conv fuse_;
  Conv head_;
};

struct DiscriminatorSpec {
  int in_channels = 3;  // 3 or 10 when conditioned
  std::vector<int> widths{64, 128, 256, 512};
  void validate() const;
  bool operator==(const DiscriminatorSpec&) const = default;
};

/// Patch discriminator: three stride-2 then two stride-1 4x4 convolutions.
class Discriminator {
 public:
  Discriminator(DiscriminatorSpec spec, std::uint64_t seed, const std::string& name);
  /// (N, H, W, C) -> (N, h, w, 1) unbounded scores.
  Var operator()(const Var& x) const;
  static std::int64_t output_size(std::int64_t in);

  const DiscriminatorSpec& spec() const { return spec_; }
  Parameters& params() { return params_; }
  const Parameters& params() const { return params_; }

 private:
  DiscriminatorSpec spec_;
  Parameters params_;
  std::vector<Conv> layers_;
};

/// Per-pixel two-layer MLP (1x1 convolutions) ending in a sigmoid.
class AttentionHead {
 public:
  AttentionHead(int features, std::uint64_t seed, const std::string& name, int hidden = 0);
  Var operator()(const Var& g) const;
  int features() const { return features_; }
  Parameters& params() { return params_; }
  const Parameters& params() const { return params_; }

 private:
  int features_;
  Parameters params_;
  Conv hidden_, out_;
};

/// Per-pixel affine map to RGB followed by tanh.
class RgbProjector {
 public:
  RgbProjector(int features, std::uint64_t seed, const std::string& name);
  Var operator()(const Var& g) const;
  int features() const { return features_; }
  Parameters& params() { return params_; }
  const Parameters& params() const { return params_; }

 private:
  int features_;
  Parameters params_;
  Conv proj_;
};

/// Auxiliary artifact classifier applied to image * mask.
class Classifier {
 public:
  Classifier(std::uint64_t seed, const std::string& name, std::vector<int> widths = {16, 32, 64, 128});
  /// image (N, H, W, 3), mask (N, H, W, 1) in [0, 1] -> (N, 7) logits.
  Var operator()(const Var& image, const Var& mask) const;
  Parameters& params() { return params_; }
  const Parameters& params() const { return params_; }

 private:
  Parameters params_;
  std::vector<Conv> convs_;
  Var fc_w_, fc_b_;
};

/// (1, H, W, 7) one-hot condition map for `label`.
Tensor encode_condition(int label, std::int64_t height, std::int64_t width);
/// Batch of condition maps, one per label.
Tensor encode_conditions(std::span<const int> labels, std::int64_t height, std::int64_t width);

}  // namespace histoclean::nets
