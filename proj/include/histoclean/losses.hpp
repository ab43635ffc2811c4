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

// Scalar objectives of the CycleGAN family and their weighted compositions.
//
// Each loss has a kernel templated on the scalar type that returns the value
// and, when output spans are supplied, writes the analytic gradient with
// respect to its tensor inputs. The kernels are what training differentiates
// through (see the Var overloads below) and what the double-precision
// gradient checks exercise.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "histoclean/autograd.hpp"

namespace histoclean::losses {

class LossError : public Error {
 public:
  using Error::Error;
};

namespace kernel {

/// 1/2 mean((real - target)^2) + 1/2 mean(fake^2).
template <class T>
T lsgan_discriminator(std::span<const T> real, std::span<const T> fake, T real_target, std::span<T> grad_real = {},
                      std::span<T> grad_fake = {}) {
  if (real.empty() || fake.empty()) throw LossError("lsgan_discriminator_loss: empty score map");
  if (!(real_target > T(0) && real_target <= T(1))) throw LossError("real_target must lie in (0, 1]");
  const T nr = static_cast<T>(real.size()), nf = static_cast<T>(fake.size());
  T sr = 0, sf = 0;
  for (std::size_t i = 0; i < real.size(); ++i) {
    const T d = real[i] - real_target;
    sr += d * d;
    if (!grad_real.empty()) grad_real[i] = d / nr;
  }
  for (std::size_t i = 0; i < fake.size(); ++i) {
    sf += fake[i] * fake[i];
    if (!grad_fake.empty()) grad_fake[i] = fake[i] / nf;
  }
  return T(0.5) * sr / nr + T(0.5) * sf / nf;
}

/// mean((fake - 1)^2); the generator target is never smoothed.
template <class T>
T lsgan_generator(std::span<const T> fake, std::span<T> grad = {}) {
  if (fake.empty()) throw LossError("lsgan_generator_loss: empty score map");
  const T n = static_cast<T>(fake.size());
  T s = 0;
  for (std::size_t i = 0; i < fake.size(); ++i) {
    const T d = fake[i] - T(1);
    s += d * d;
    if (!grad.empty()) grad[i] = T(2) * d / n;
  }
  return s / n;
}

/// mean |a - b|; subgradient 0 where a == b.
template <class T>
T mean_abs_diff(std::span<const T> a, std::span<const T> b, std::span<T> grad_a = {}, std::span<T> grad_b = {}) {
  if (a.size() != b.size()) throw LossError("L1 loss: shape mismatch");
  if (a.empty()) throw LossError("L1 loss: empty input");
  const T n = static_cast<T>(a.size());
  T s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const T d = a[i] - b[i];
    s += std::abs(d);
    const T g = (d > 0 ? T(1) : d < 0 ? T(-1) : T(0)) / n;
    if (!grad_a.empty()) grad_a[i] = g;
    if (!grad_b.empty()) grad_b[i] = -g;
  }
  return s / n;
}

/// Mean softmax cross-entropy over a (batch, classes) row-major logit block.
template <class T>
T cross_entropy(std::span<const T> logits, std::span<const int> labels, int classes, std::span<T> grad = {}) {
  if (labels.empty() || logits.size() != labels.size() * static_cast<std::size_t>(classes)) {
    throw LossError("classification_loss: logits/labels size mismatch");
  }
  const T n = static_cast<T>(labels.size());
  T total = 0;
  for (std::size_t b = 0; b < labels.size(); ++b) {
    const int y = labels[b];
    if (y < 0 || y >= classes) throw LossError("classification_loss: label " + std::to_string(y) + " out of range");
    const T* row = logits.data() + b * static_cast<std::size_t>(classes);
    T mx = row[0];
    for (int k = 1; k < classes; ++k) mx = std::max(mx, row[k]);
    T z = 0;
    for (int k = 0; k < classes; ++k) z += std::exp(row[k] - mx);
    const T lse = mx + std::log(z);
    total += lse - row[y];
    if (!grad.empty()) {
      for (int k = 0; k < classes; ++k) {
        grad[b * static_cast<std::size_t>(classes) + k] = (std::exp(row[k] - lse) - (k == y ? T(1) : T(0))) / n;
      }
    }
  }
  return total / n;
}

/// Anisotropic total variation of a (batch, h, w) mask block:
/// mean |m[i+1,j] - m[i,j]| + mean |m[i,j+1] - m[i,j]|.
template <class T>
T total_variation(std::span<const T> mask, std::size_t batch, std::size_t h, std::size_t w, std::span<T> grad = {}) {
  if (h < 2 || w < 2) throw LossError("smoothness_loss: mask must be at least 2x2");
  if (mask.size() != batch * h * w || batch == 0) throw LossError("smoothness_loss: shape mismatch");
  if (!grad.empty()) std::fill(grad.begin(), grad.end(), T(0));
  const T nv = static_cast<T>(batch * (h - 1) * w), nh = static_cast<T>(batch * h * (w - 1));
  T sv = 0, sh = 0;
  auto sign = [](T d) { return d > 0 ? T(1) : d < 0 ? T(-1) : T(0); };
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t base = b * h * w;
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        const std::size_t p = base + i * w + j;
        if (i + 1 < h) {
          const T d = mask[p + w] - mask[p];
          sv += std::abs(d);
          if (!grad.empty()) {
            grad[p + w] += sign(d) / nv;
            grad[p] -= sign(d) / nv;
          }
        }
        if (j + 1 < w) {
          const T d = mask[p + 1] - mask[p];
          sh += std::abs(d);
          if (!grad.empty()) {
            grad[p + 1] += sign(d) / nh;
            grad[p] -= sign(d) / nh;
          }
        }
      }
    }
  }
  return sv / nv + sh / nh;
}

/// mean(mask).
template <class T>
T mean(std::span<const T> mask, std::span<T> grad = {}) {
  if (mask.empty()) throw LossError("sparsity_loss: empty mask");
  const T n = static_cast<T>(mask.size());
  T s = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    s += mask[i];
    if (!grad.empty()) grad[i] = T(1) / n;
  }
  return s / n;
}

}  // namespace kernel

// Differentiable versions used by the trainer. All return shape-(1) Vars.
Var lsgan_discriminator_loss(const Var& real_scores, const Var& fake_scores, float real_target);
Var lsgan_generator_loss(const Var& fake_scores);
Var cycle_loss(const Var& reconstructed, const Var& original);
Var identity_loss(const Var& mapped, const Var& original);
Var classification_loss(const Var& logits, std::span<const int> labels);
Var smoothness_loss(const Var& mask);
Var sparsity_loss(const Var& mask);

/// Weights of the base and weakly-supervised objectives.
struct LossWeights {
  double aba = 5.0;  // A -> B -> A cycle
  double bab = 5.0;  // B -> A -> B cycle
  double id_a = 5.0;
  double id_b = 5.0;
  double cls = 1.0;
  double smooth = 1.0;
  double sparse = 0.1;

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

/// Named scalar components of one step.
struct LossReport {
  static const std::vector<std::string>& names();

  std::map<std::string, double> values;

  double get(const std::string& name) const;
  bool has(const std::string& name) const { return values.count(name) != 0; }
  void set(const std::string& name, double v) { values[name] = v; }
};

struct Totals {
  double total_g = 0.0;
  double total_d = 0.0;
};

Totals compose_base(const LossReport& components, const LossWeights& w);
Totals compose_ws(const LossReport& components, const LossWeights& w);

/// The weighted generator sums as graph terms, aligned with compose_base /
/// compose_ws: pairs of (component name, weight).
std::vector<std::pair<std::string, double>> base_terms(const LossWeights& w);
std::vector<std::pair<std::string, double>> ws_terms(const LossWeights& w);

}  // namespace histoclean::losses
