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

#include <utility>
#include <vector>

#include "histoclean/autograd.hpp"

namespace histoclean::ops {

enum class Padding { zero, reflect };

/// Window geometry shared by convolution, transposed convolution and pooling.
struct Window {
  int kernel_h = 3;
  int kernel_w = 3;
  int stride = 1;
  int pad_h = 1;
  int pad_w = 1;
  Padding padding = Padding::reflect;

  static Window square(int kernel, int stride, int pad, Padding padding = Padding::reflect) {
    return {kernel, kernel, stride, pad, pad, padding};
  }
  std::int64_t out_h(std::int64_t in) const { return (in + 2 * pad_h - kernel_h) / stride + 1; }
  std::int64_t out_w(std::int64_t in) const { return (in + 2 * pad_w - kernel_w) / stride + 1; }
};

// Convolution weights are stored as a (kernel_h * kernel_w * in_ch, out_ch)
// matrix whose rows run over (ky, kx, ci) with ci fastest, matching NHWC
// patches. Transposed-convolution weights are (in_ch, kernel_h * kernel_w * out_ch).

/// 2-D convolution of an NHWC tensor.
Var conv2d(const Var& x, const Var& weight, const Var& bias, const Window& win);

/// Transposed convolution (the adjoint of conv2d with zero padding);
/// output size (in - 1) * stride - 2 * pad + kernel.
Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias, const Window& win);

/// Per-sample, per-channel normalisation over the spatial axes (no affine).
Var instance_norm(const Var& x, float eps = 1e-5f);

Var leaky_relu(const Var& x, float slope);
Var relu(const Var& x);

/// tanh clamped to the open interval (-1, 1) in single precision.
Var tanh(const Var& x);
/// Logistic sigmoid clamped to the open interval (0, 1) in single precision.
Var sigmoid(const Var& x);

Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
/// x (N,H,W,C) times a single-channel map m (N,H,W,1) broadcast over C.
Var mul_broadcast_channels(const Var& x, const Var& m);
Var concat_channels(const std::vector<Var>& parts);

/// (N,H,W,C) -> (N,C) spatial mean.
Var global_avg_pool(const Var& x);
/// (N,Cin) x (Cin,Cout) + (Cout).
Var linear(const Var& x, const Var& weight, const Var& bias);

/// Sum of weighted scalar Vars. Terms with weight exactly 0 are left out of
/// the graph entirely.
Var weighted_sum(const std::vector<std::pair<Var, double>>& terms);

// Inference-only helpers (no gradient), used by feature extractors.
Tensor max_pool2d(const Tensor& x, const Window& win);
/// Average pool; `count_pad` includes zero padding in the divisor.
Tensor avg_pool2d(const Tensor& x, const Window& win, bool count_pad);
Tensor bilinear_resize(const Tensor& x, std::int64_t out_h, std::int64_t out_w);

namespace detail {
// Exposed for testing: the gather/scatter pair behind the convolutions.
void im2col(const float* x, std::int64_t n, std::int64_t h, std::int64_t w, std::int64_t c,
            const Window& win, std::int64_t oh, std::int64_t ow, float* cols);
void col2im(const float* cols, std::int64_t n, std::int64_t h, std::int64_t w, std::int64_t c,
            const Window& win, std::int64_t oh, std::int64_t ow, float* x);
}  // namespace detail

}  // namespace histoclean::ops
