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

#include "histoclean/features.hpp"

#include <cmath>
#include <random>

#include "histoclean/autograd.hpp"
#include "histoclean/checkpoint.hpp"
#include "histoclean/ops.hpp"

namespace histoclean::eval {

using ops::Padding;
using ops::Window;

// Inference-only Inception-v3 (torchvision layout, eval mode, no auxiliary
// head). Batch norm is folded into each convolution at load time.
class InceptionV3 {
 public:
  explicit InceptionV3(const std::filesystem::path& path) : ckpt_(read_checkpoint(path)) {
    stem_ = {conv("Conv2d_1a_3x3", 3, 3, 2, 0, 0), conv("Conv2d_2a_3x3", 3, 3, 1, 0, 0),
             conv("Conv2d_2b_3x3", 3, 3, 1, 1, 1), conv("Conv2d_3b_1x1", 1, 1, 1, 0, 0),
             conv("Conv2d_4a_3x3", 3, 3, 1, 0, 0)};
    for (const char* n : {"Mixed_5b", "Mixed_5c", "Mixed_5d"}) a_.push_back(block_a(n));
    b_ = block_b("Mixed_6a");
    for (const char* n : {"Mixed_6b", "Mixed_6c", "Mixed_6d", "Mixed_6e"}) c_.push_back(block_c(n));
    d_ = block_d("Mixed_7a");
    for (const char* n : {"Mixed_7b", "Mixed_7c"}) e_.push_back(block_e(n));
    ckpt_ = {};
  }

  /// (N, 299, 299, 3) -> (N, 2048).
  Tensor forward(const Tensor& x) const {
    NoGradGuard no_grad;
    Var h = Var::constant(x);
    h = stem_[0](h);
    h = stem_[1](h);
    h = stem_[2](h);
    h = max_pool(h);
    h = stem_[3](h);
    h = stem_[4](h);
    h = max_pool(h);
    for (const auto& blk : a_) {
      h = ops::concat_channels({blk.b1(h), blk.b5_2(blk.b5_1(h)), blk.d3(blk.d2(blk.d1(h))), blk.pool(avg_pool(h))});
    }
    h = ops::concat_channels({b_.b3(h), b_.d3(b_.d2(b_.d1(h))), max_pool(h)});
    for (const auto& blk : c_) {
      Var s = blk.s7[2](blk.s7[1](blk.s7[0](h)));
      Var d = h;
      for (const auto& cv : blk.d7) d = cv(d);
      h = ops::concat_channels({blk.b1(h), s, d, blk.pool(avg_pool(h))});
    }
    h = ops::concat_channels({d_.b3_2(d_.b3_1(h)), d_.b7[3](d_.b7[2](d_.b7[1](d_.b7[0](h)))), max_pool(h)});
    for (const auto& blk : e_) {
      Var t = blk.b3_1(h);
      Var u = blk.d2(blk.d1(h));
      h = ops::concat_channels({blk.b1(h), blk.b3_2a(t), blk.b3_2b(t), blk.d3a(u), blk.d3b(u), blk.pool(avg_pool(h))});
    }
    return ops::global_avg_pool(h).value();
  }

 private:
  struct Conv {
    Var weight, bias;
    Window win;
    Var operator()(const Var& x) const { return ops::relu(ops::conv2d(x, weight, bias, win)); }
  };
  struct BlockA {
    Conv b1, b5_1, b5_2, d1, d2, d3, pool;
  };
  struct BlockB {
    Conv b3, d1, d2, d3;
  };
  struct BlockC {
    Conv b1;
    std::vector<Conv> s7, d7;
    Conv pool;
  };
  struct BlockD {
    Conv b3_1, b3_2;
    std::vector<Conv> b7;
  };
  struct BlockE {
    Conv b1, b3_1, b3_2a, b3_2b, d1, d2, d3a, d3b, pool;
  };

  Conv conv(const std::string& name, int kh, int kw, int stride, int ph, int pw) const {
    const Tensor& w = ckpt_.array(name + ".conv.weight");  // (Cout, Cin, kh, kw)
    if (w.rank() != 4 || w.dim(2) != kh || w.dim(3) != kw) {
      throw Error("inception weight " + name + " has shape " + histoclean::to_string(w.shape()));
    }
    const Tensor& gamma = ckpt_.array(name + ".bn.weight");
    const Tensor& beta = ckpt_.array(name + ".bn.bias");
    const Tensor& mean = ckpt_.array(name + ".bn.running_mean");
    const Tensor& var = ckpt_.array(name + ".bn.running_var");
    const std::int64_t cout = w.dim(0), cin = w.dim(1);
    Tensor wm({kh * kw * cin, cout});
    Tensor b({cout});
    for (std::int64_t o = 0; o < cout; ++o) {
      const float scale = gamma.data()[o] / std::sqrt(var.data()[o] + 1e-3f);
      b.data()[o] = beta.data()[o] - mean.data()[o] * scale;
      for (std::int64_t i = 0; i < cin; ++i)
        for (int y = 0; y < kh; ++y)
          for (int x = 0; x < kw; ++x) {
            const float v = w.data()[((o * cin + i) * kh + y) * kw + x];
            wm.data()[((std::int64_t{y} * kw + x) * cin + i) * cout + o] = v * scale;
          }
    }
    return {Var::constant(std::move(wm)), Var::constant(std::move(b)), Window{kh, kw, stride, ph, pw, Padding::zero}};
  }

  BlockA block_a(const std::string& n) const {
    return {conv(n + ".branch1x1", 1, 1, 1, 0, 0),      conv(n + ".branch5x5_1", 1, 1, 1, 0, 0),
            conv(n + ".branch5x5_2", 5, 5, 1, 2, 2),    conv(n + ".branch3x3dbl_1", 1, 1, 1, 0, 0),
            conv(n + ".branch3x3dbl_2", 3, 3, 1, 1, 1), conv(n + ".branch3x3dbl_3", 3, 3, 1, 1, 1),
            conv(n + ".branch_pool", 1, 1, 1, 0, 0)};
  }
  BlockB block_b(const std::string& n) const {
    return {conv(n + ".branch3x3", 3, 3, 2, 0, 0), conv(n + ".branch3x3dbl_1", 1, 1, 1, 0, 0),
            conv(n + ".branch3x3dbl_2", 3, 3, 1, 1, 1), conv(n + ".branch3x3dbl_3", 3, 3, 2, 0, 0)};
  }
  BlockC block_c(const std::string& n) const {
    BlockC c;
    c.b1 = conv(n + ".branch1x1", 1, 1, 1, 0, 0);
    c.s7 = {conv(n + ".branch7x7_1", 1, 1, 1, 0, 0), conv(n + ".branch7x7_2", 1, 7, 1, 0, 3),
            conv(n + ".branch7x7_3", 7, 1, 1, 3, 0)};
    c.d7 = {conv(n + ".branch7x7dbl_1", 1, 1, 1, 0, 0), conv(n + ".branch7x7dbl_2", 7, 1, 1, 3, 0),
            conv(n + ".branch7x7dbl_3", 1, 7, 1, 0, 3), conv(n + ".branch7x7dbl_4", 7, 1, 1, 3, 0),
            conv(n + ".branch7x7dbl_5", 1, 7, 1, 0, 3)};
    c.pool = conv(n + ".branch_pool", 1, 1, 1, 0, 0);
    return c;
  }
  BlockD block_d(const std::string& n) const {
    return {conv(n + ".branch3x3_1", 1, 1, 1, 0, 0),
            conv(n + ".branch3x3_2", 3, 3, 2, 0, 0),
            {conv(n + ".branch7x7x3_1", 1, 1, 1, 0, 0), conv(n + ".branch7x7x3_2", 1, 7, 1, 0, 3),
             conv(n + ".branch7x7x3_3", 7, 1, 1, 3, 0), conv(n + ".branch7x7x3_4", 3, 3, 2, 0, 0)}};
  }
  BlockE block_e(const std::string& n) const {
    return {conv(n + ".branch1x1", 1, 1, 1, 0, 0),      conv(n + ".branch3x3_1", 1, 1, 1, 0, 0),
            conv(n + ".branch3x3_2a", 1, 3, 1, 0, 1),   conv(n + ".branch3x3_2b", 3, 1, 1, 1, 0),
            conv(n + ".branch3x3dbl_1", 1, 1, 1, 0, 0), conv(n + ".branch3x3dbl_2", 3, 3, 1, 1, 1),
            conv(n + ".branch3x3dbl_3a", 1, 3, 1, 0, 1), conv(n + ".branch3x3dbl_3b", 3, 1, 1, 1, 0),
            conv(n + ".branch_pool", 1, 1, 1, 0, 0)};
  }

  static Var max_pool(const Var& x) {
    return Var::constant(ops::max_pool2d(x.value(), Window{3, 3, 2, 0, 0, Padding::zero}));
  }
  static Var avg_pool(const Var& x) {
    return Var::constant(ops::avg_pool2d(x.value(), Window{3, 3, 1, 1, 1, Padding::zero}, true));
  }

  CheckpointFile ckpt_;
  std::vector<Conv> stem_;
  std::vector<BlockA> a_;
  BlockB b_;
  std::vector<BlockC> c_;
  BlockD d_;
  std::vector<BlockE> e_;
};

std::string to_string(ExtractorKind k) {
  return k == ExtractorKind::pretrained_inception_pool ? "pretrained_inception_pool" : "seeded_random_projection";
}

FeatureExtractor FeatureExtractor::random_projection(std::uint64_t seed, int dim, int size) {
  if (dim < 1 || size < 1) throw Error("random projection needs positive dim and size");
  FeatureExtractor fx;
  fx.kind_ = ExtractorKind::seeded_random_projection;
  fx.dim_ = dim;
  fx.size_ = size;
  fx.seed_ = seed;
  const int in = size * size * 3;
  fx.projection_.resize(in, dim);
  std::mt19937_64 rng(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(in));
  for (int j = 0; j < dim; ++j)
    for (int i = 0; i < in; ++i) {
      const double u1 = (static_cast<double>(rng() >> 11) + 1.0) * 0x1.0p-53;
      const double u2 = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      fx.projection_(i, j) = static_cast<float>(scale * std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2));
    }
  return fx;
}

FeatureExtractor FeatureExtractor::inception(const std::filesystem::path& weights) {
  if (weights.empty() || !std::filesystem::exists(weights)) {
    throw Error("Inception weight file '" + weights.string() + "' not found (set " + kInceptionWeightsEnv + ")");
  }
  FeatureExtractor fx;
  fx.kind_ = ExtractorKind::pretrained_inception_pool;
  fx.dim_ = 2048;
  fx.inception_ = std::make_shared<const InceptionV3>(weights);
  fx.source_ = weights.string();
  return fx;
}

std::string FeatureExtractor::describe() const {
  if (kind_ == ExtractorKind::pretrained_inception_pool) return "pretrained_inception_pool(" + source_ + ")";
  return "seeded_random_projection(seed=" + std::to_string(seed_) + ", d=" + std::to_string(dim_) +
         ", size=" + std::to_string(size_) + ")";
}

Eigen::MatrixXd FeatureExtractor::extract(const Tensor& images) const {
  require_nhwc(images, 3, "extract_features");
  const std::int64_t n = images.batch();
  if (n == 0) throw Error("extract_features: empty image set");
  Eigen::MatrixXd out(n, dim_);
  if (kind_ == ExtractorKind::seeded_random_projection) {
    const Tensor small = ops::bilinear_resize(images, size_, size_);
    const std::int64_t in = std::int64_t{size_} * size_ * 3;
    Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> x(small.data(), n, in);
    out = (x * projection_).cast<double>();
    return out;
  }
  constexpr std::int64_t kChunk = 8;
  for (std::int64_t i = 0; i < n; i += kChunk) {
    const std::int64_t m = std::min(kChunk, n - i);
    const Tensor f = inception_->forward(ops::bilinear_resize(images.slice_batch(i, m), 299, 299));
    for (std::int64_t r = 0; r < m; ++r)
      for (int c = 0; c < dim_; ++c) out(i + r, c) = f.data()[r * dim_ + c];
  }
  return out;
}

}  // namespace histoclean::eval
