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

#include "histoclean/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace histoclean::ops {
namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using ConstRowVector = Eigen::Map<const Eigen::RowVectorXf>;
using RowVectorMap = Eigen::Map<Eigen::RowVectorXf>;

// Upper bound on the scratch patch matrix, in floats (about 128 MB).
constexpr std::int64_t kMaxColsFloats = std::int64_t{32} << 20;

// Resolves a padded coordinate; returns -1 for zero padding.
inline std::int64_t resolve(std::int64_t i, std::int64_t n, Padding p) {
  if (i >= 0 && i < n) return i;
  if (p == Padding::zero) return -1;
  if (i < 0) return -i;
  return 2 * n - 2 - i;
}

void check_window(const Window& win, std::int64_t h, std::int64_t w, const char* what) {
  if (win.kernel_h < 1 || win.kernel_w < 1 || win.stride < 1 || win.pad_h < 0 || win.pad_w < 0) {
    throw ShapeError(std::string(what) + ": invalid window");
  }
  if (win.padding == Padding::reflect && (win.pad_h >= h || win.pad_w >= w)) {
    throw ShapeError(std::string(what) + ": reflection pad larger than input " + std::to_string(h) +
                     "x" + std::to_string(w));
  }
  if (win.out_h(h) < 1 || win.out_w(w) < 1) {
    throw ShapeError(std::string(what) + ": input " + std::to_string(h) + "x" + std::to_string(w) +
                     " too small for kernel");
  }
}

std::int64_t chunk_samples(std::int64_t n, std::int64_t rows_per_sample, std::int64_t cols) {
  const std::int64_t per = std::max<std::int64_t>(1, rows_per_sample * cols);
  return std::clamp<std::int64_t>(kMaxColsFloats / per, 1, n);
}

template <class F>
Tensor unary(const Var& x, F&& f) {
  const Tensor& in = x.value();
  Tensor out(in.shape());
  const float* s = in.data();
  float* d = out.data();
  for (std::size_t i = 0; i < in.size(); ++i) d[i] = f(s[i]);
  return out;
}

}  // namespace

namespace detail {

void im2col(const float* x, std::int64_t n, std::int64_t h, std::int64_t w, std::int64_t c,
            const Window& win, std::int64_t oh, std::int64_t ow, float* cols) {
  const std::int64_t k = std::int64_t{win.kernel_h} * win.kernel_w * c;
  const std::size_t bytes = static_cast<std::size_t>(c) * sizeof(float);
  for (std::int64_t b = 0; b < n; ++b) {
    const float* img = x + b * h * w * c;
    for (std::int64_t oy = 0; oy < oh; ++oy) {
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        float* row = cols + ((b * oh + oy) * ow + ox) * k;
        for (int ky = 0; ky < win.kernel_h; ++ky) {
          const std::int64_t iy = resolve(oy * win.stride - win.pad_h + ky, h, win.padding);
          for (int kx = 0; kx < win.kernel_w; ++kx) {
            float* dst = row + (std::int64_t{ky} * win.kernel_w + kx) * c;
            const std::int64_t ix = resolve(ox * win.stride - win.pad_w + kx, w, win.padding);
            if (iy < 0 || ix < 0) {
              std::memset(dst, 0, bytes);
            } else {
              std::memcpy(dst, img + (iy * w + ix) * c, bytes);
            }
          }
        }
      }
    }
  }
}

void col2im(const float* cols, std::int64_t n, std::int64_t h, std::int64_t w, std::int64_t c,
            const Window& win, std::int64_t oh, std::int64_t ow, float* x) {
  const std::int64_t k = std::int64_t{win.kernel_h} * win.kernel_w * c;
  for (std::int64_t b = 0; b < n; ++b) {
    float* img = x + b * h * w * c;
    for (std::int64_t oy = 0; oy < oh; ++oy) {
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        const float* row = cols + ((b * oh + oy) * ow + ox) * k;
        for (int ky = 0; ky < win.kernel_h; ++ky) {
          const std::int64_t iy = resolve(oy * win.stride - win.pad_h + ky, h, win.padding);
          if (iy < 0) continue;
          for (int kx = 0; kx < win.kernel_w; ++kx) {
            const std::int64_t ix = resolve(ox * win.stride - win.pad_w + kx, w, win.padding);
            if (ix < 0) continue;
            const float* src = row + (std::int64_t{ky} * win.kernel_w + kx) * c;
            float* dst = img + (iy * w + ix) * c;
            for (std::int64_t ci = 0; ci < c; ++ci) dst[ci] += src[ci];
          }
        }
      }
    }
  }
}

}  // namespace detail

Var conv2d(const Var& x, const Var& weight, const Var& bias, const Window& win) {
  const Tensor& in = x.value();
  require_nhwc(in, -1, "conv2d");
  const std::int64_t n = in.batch(), h = in.height(), w = in.width(), c = in.channels();
  check_window(win, h, w, "conv2d");
  const std::int64_t k = std::int64_t{win.kernel_h} * win.kernel_w * c;
  const Tensor& wt = weight.value();
  if (wt.rank() != 2 || wt.dim(0) != k) {
    throw ShapeError("conv2d: weight " + to_string(wt.shape()) + " does not fit input with " +
                     std::to_string(c) + " channels");
  }
  const std::int64_t cout = wt.dim(1);
  const std::int64_t oh = win.out_h(h), ow = win.out_w(w);
  const std::int64_t rows = oh * ow;

  Tensor out({n, oh, ow, cout});
  const std::int64_t chunk = chunk_samples(n, rows, k);
  std::vector<float> cols(static_cast<std::size_t>(chunk * rows * k));
  ConstMatrixMap wm(wt.data(), k, cout);
  for (std::int64_t b0 = 0; b0 < n; b0 += chunk) {
    const std::int64_t nb = std::min(chunk, n - b0);
    detail::im2col(in.data() + b0 * h * w * c, nb, h, w, c, win, oh, ow, cols.data());
    MatrixMap ym(out.data() + b0 * rows * cout, nb * rows, cout);
    ym.noalias() = ConstMatrixMap(cols.data(), nb * rows, k) * wm;
    if (bias) ym.rowwise() += ConstRowVector(bias.value().data(), cout);
  }

  return make_result(std::move(out), {x, weight, bias}, [win, n, h, w, c, k, cout, oh, ow, rows](Node& self) {
    Node* xn = self.parents[0].get();
    Node* wn = self.parents[1].get();
    Node* bn = self.parents[2] ? self.parents[2].get() : nullptr;
    const float* dy = self.grad.data();
    if (bn && bn->requires_grad) {
      RowVectorMap(bn->grad_buffer().data(), cout) +=
          ConstMatrixMap(dy, n * rows, cout).colwise().sum();
    }
    const bool need_w = wn->requires_grad, need_x = xn->requires_grad;
    if (!need_w && !need_x) return;
    const std::int64_t chunk = chunk_samples(n, rows, k);
    std::vector<float> cols(static_cast<std::size_t>(chunk * rows * k));
    for (std::int64_t b0 = 0; b0 < n; b0 += chunk) {
      const std::int64_t nb = std::min(chunk, n - b0);
      ConstMatrixMap dym(dy + b0 * rows * cout, nb * rows, cout);
      if (need_w) {
        detail::im2col(xn->value.data() + b0 * h * w * c, nb, h, w, c, win, oh, ow, cols.data());
        MatrixMap(wn->grad_buffer().data(), k, cout).noalias() +=
            ConstMatrixMap(cols.data(), nb * rows, k).transpose() * dym;
      }
      if (need_x) {
        MatrixMap cm(cols.data(), nb * rows, k);
        cm.noalias() = dym * ConstMatrixMap(wn->value.data(), k, cout).transpose();
        detail::col2im(cols.data(), nb, h, w, c, win, oh, ow, xn->grad_buffer().data() + b0 * h * w * c);
      }
    }
  });
}

Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias, const Window& win) {
  const Tensor& in = x.value();
  require_nhwc(in, -1, "conv_transpose2d");
  if (win.padding != Padding::zero) throw ShapeError("conv_transpose2d: only zero padding is defined");
  const std::int64_t n = in.batch(), h = in.height(), w = in.width(), cin = in.channels();
  const Tensor& wt = weight.value();
  const std::int64_t taps = std::int64_t{win.kernel_h} * win.kernel_w;
  if (wt.rank() != 2 || wt.dim(0) != cin || wt.dim(1) % taps != 0) {
    throw ShapeError("conv_transpose2d: weight " + to_string(wt.shape()) + " does not fit input with " +
                     std::to_string(cin) + " channels");
  }
  const std::int64_t cout = wt.dim(1) / taps;
  const std::int64_t kk = wt.dim(1);
  const std::int64_t oh = (h - 1) * win.stride - 2 * win.pad_h + win.kernel_h;
  const std::int64_t ow = (w - 1) * win.stride - 2 * win.pad_w + win.kernel_w;
  if (oh < 1 || ow < 1) throw ShapeError("conv_transpose2d: empty output");
  const std::int64_t rows = h * w;

  Tensor out({n, oh, ow, cout});
  const std::int64_t chunk = chunk_samples(n, rows, kk);
  std::vector<float> cols(static_cast<std::size_t>(chunk * rows * kk));
  for (std::int64_t b0 = 0; b0 < n; b0 += chunk) {
    const std::int64_t nb = std::min(chunk, n - b0);
    MatrixMap(cols.data(), nb * rows, kk).noalias() =
        ConstMatrixMap(in.data() + b0 * rows * cin, nb * rows, cin) * ConstMatrixMap(wt.data(), cin, kk);
    detail::col2im(cols.data(), nb, oh, ow, cout, win, h, w, out.data() + b0 * oh * ow * cout);
  }
  if (bias) {
    MatrixMap(out.data(), n * oh * ow, cout).rowwise() += ConstRowVector(bias.value().data(), cout);
  }

  return make_result(std::move(out), {x, weight, bias}, [win, n, h, w, cin, cout, kk, oh, ow, rows](Node& self) {
    Node* xn = self.parents[0].get();
    Node* wn = self.parents[1].get();
    Node* bn = self.parents[2] ? self.parents[2].get() : nullptr;
    const float* dy = self.grad.data();
    if (bn && bn->requires_grad) {
      RowVectorMap(bn->grad_buffer().data(), cout) +=
          ConstMatrixMap(dy, n * oh * ow, cout).colwise().sum();
    }
    const bool need_w = wn->requires_grad, need_x = xn->requires_grad;
    if (!need_w && !need_x) return;
    const std::int64_t chunk = chunk_samples(n, rows, kk);
    std::vector<float> cols(static_cast<std::size_t>(chunk * rows * kk));
    for (std::int64_t b0 = 0; b0 < n; b0 += chunk) {
      const std::int64_t nb = std::min(chunk, n - b0);
      detail::im2col(dy + b0 * oh * ow * cout, nb, oh, ow, cout, win, h, w, cols.data());
      ConstMatrixMap cm(cols.data(), nb * rows, kk);
      if (need_w) {
        MatrixMap(wn->grad_buffer().data(), cin, kk).noalias() +=
            ConstMatrixMap(xn->value.data() + b0 * rows * cin, nb * rows, cin).transpose() * cm;
      }
      if (need_x) {
        MatrixMap(xn->grad_buffer().data() + b0 * rows * cin, nb * rows, cin).noalias() +=
            cm * ConstMatrixMap(wn->value.data(), cin, kk).transpose();
      }
    }
  });
}

Var instance_norm(const Var& x, float eps) {
  const Tensor& in = x.value();
  require_nhwc(in, -1, "instance_norm");
  const std::int64_t n = in.batch(), hw = in.height() * in.width(), c = in.channels();
  Tensor out(in.shape());
  std::vector<float> inv_std(static_cast<std::size_t>(n * c));
  std::vector<double> mean(static_cast<std::size_t>(c)), sq(static_cast<std::size_t>(c));
  for (std::int64_t b = 0; b < n; ++b) {
    const float* s = in.data() + b * hw * c;
    float* d = out.data() + b * hw * c;
    std::fill(mean.begin(), mean.end(), 0.0);
    std::fill(sq.begin(), sq.end(), 0.0);
    for (std::int64_t p = 0; p < hw; ++p) {
      for (std::int64_t ci = 0; ci < c; ++ci) mean[ci] += s[p * c + ci];
    }
    for (auto& m : mean) m /= static_cast<double>(hw);
    for (std::int64_t p = 0; p < hw; ++p) {
      for (std::int64_t ci = 0; ci < c; ++ci) {
        const double dv = s[p * c + ci] - mean[ci];
        sq[ci] += dv * dv;
      }
    }
    for (std::int64_t ci = 0; ci < c; ++ci) {
      inv_std[b * c + ci] = static_cast<float>(1.0 / std::sqrt(sq[ci] / static_cast<double>(hw) + eps));
    }
    const float* is = inv_std.data() + b * c;
    for (std::int64_t p = 0; p < hw; ++p) {
      for (std::int64_t ci = 0; ci < c; ++ci) {
        d[p * c + ci] = static_cast<float>(s[p * c + ci] - mean[ci]) * is[ci];
      }
    }
  }
  return make_result(std::move(out), {x}, [inv_std = std::move(inv_std), n, hw, c](Node& self) {
    Node* xn = self.parents[0].get();
    float* dx = xn->grad_buffer().data();
    std::vector<double> mdy(static_cast<std::size_t>(c)), mdyy(static_cast<std::size_t>(c));
    for (std::int64_t b = 0; b < n; ++b) {
      const float* dy = self.grad.data() + b * hw * c;
      const float* y = self.value.data() + b * hw * c;
      float* g = dx + b * hw * c;
      std::fill(mdy.begin(), mdy.end(), 0.0);
      std::fill(mdyy.begin(), mdyy.end(), 0.0);
      for (std::int64_t p = 0; p < hw; ++p) {
        for (std::int64_t ci = 0; ci < c; ++ci) {
          mdy[ci] += dy[p * c + ci];
          mdyy[ci] += static_cast<double>(dy[p * c + ci]) * y[p * c + ci];
        }
      }
      for (std::int64_t ci = 0; ci < c; ++ci) {
        mdy[ci] /= static_cast<double>(hw);
        mdyy[ci] /= static_cast<double>(hw);
      }
      const float* is = inv_std.data() + b * c;
      for (std::int64_t p = 0; p < hw; ++p) {
        for (std::int64_t ci = 0; ci < c; ++ci) {
          const std::int64_t i = p * c + ci;
          g[i] += is[ci] * static_cast<float>(dy[i] - mdy[ci] - y[i] * mdyy[ci]);
        }
      }
    }
  });
}

Var leaky_relu(const Var& x, float slope) {
  Tensor out = unary(x, [slope](float v) { return v > 0.0f ? v : slope * v; });
  return make_result(std::move(out), {x}, [slope](Node& self) {
    float* dx = self.parents[0]->grad_buffer().data();
    const float* xv = self.parents[0]->value.data();
    const float* dy = self.grad.data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) dx[i] += xv[i] > 0.0f ? dy[i] : slope * dy[i];
  });
}

Var relu(const Var& x) {
  Tensor out = unary(x, [](float v) { return v > 0.0f ? v : 0.0f; });
  return make_result(std::move(out), {x}, [](Node& self) {
    float* dx = self.parents[0]->grad_buffer().data();
    const float* y = self.value.data();
    const float* dy = self.grad.data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (y[i] > 0.0f) dx[i] += dy[i];
    }
  });
}

Var tanh(const Var& x) {
  const float bound = std::nextafter(1.0f, 0.0f);
  Tensor out = unary(x, [bound](float v) { return std::clamp(std::tanh(v), -bound, bound); });
  return make_result(std::move(out), {x}, [](Node& self) {
    float* dx = self.parents[0]->grad_buffer().data();
    const float* y = self.value.data();
    const float* dy = self.grad.data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) dx[i] += dy[i] * (1.0f - y[i] * y[i]);
  });
}

Var sigmoid(const Var& x) {
  const float lo = std::numeric_limits<float>::min();
  const float hi = std::nextafter(1.0f, 0.0f);
  Tensor out = unary(x, [lo, hi](float v) {
    const float s = v >= 0.0f ? 1.0f / (1.0f + std::exp(-v)) : std::exp(v) / (1.0f + std::exp(v));
    return std::clamp(s, lo, hi);
  });
  return make_result(std::move(out), {x}, [](Node& self) {
    float* dx = self.parents[0]->grad_buffer().data();
    const float* y = self.value.data();
    const float* dy = self.grad.data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) dx[i] += dy[i] * y[i] * (1.0f - y[i]);
  });
}

Var add(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    accumulate_grad(self.parents[0].get(), self.grad);
    accumulate_grad(self.parents[1].get(), self.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mul: shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    Node* an = self.parents[0].get();
    Node* bn = self.parents[1].get();
    const float* dy = self.grad.data();
    if (an->requires_grad) {
      float* g = an->grad_buffer().data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += dy[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      float* g = bn->grad_buffer().data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += dy[i] * an->value[i];
    }
  });
}

Var mul_broadcast_channels(const Var& x, const Var& m) {
  const Tensor& xv = x.value();
  const Tensor& mv = m.value();
  require_nhwc(xv, -1, "mul_broadcast_channels");
  require_nhwc(mv, 1, "mul_broadcast_channels mask");
  if (xv.batch() != mv.batch() || xv.height() != mv.height() || xv.width() != mv.width()) {
    throw ShapeError("mul_broadcast_channels: image " + to_string(xv.shape()) + " vs mask " +
                     to_string(mv.shape()));
  }
  const std::int64_t pixels = xv.batch() * xv.height() * xv.width(), c = xv.channels();
  Tensor out(xv.shape());
  for (std::int64_t p = 0; p < pixels; ++p) {
    for (std::int64_t ci = 0; ci < c; ++ci) out[p * c + ci] = xv[p * c + ci] * mv[p];
  }
  return make_result(std::move(out), {x, m}, [pixels, c](Node& self) {
    Node* xn = self.parents[0].get();
    Node* mn = self.parents[1].get();
    const float* dy = self.grad.data();
    if (xn->requires_grad) {
      float* g = xn->grad_buffer().data();
      for (std::int64_t p = 0; p < pixels; ++p) {
        for (std::int64_t ci = 0; ci < c; ++ci) g[p * c + ci] += dy[p * c + ci] * mn->value[p];
      }
    }
    if (mn->requires_grad) {
      float* g = mn->grad_buffer().data();
      for (std::int64_t p = 0; p < pixels; ++p) {
        float acc = 0.0f;
        for (std::int64_t ci = 0; ci < c; ++ci) acc += dy[p * c + ci] * xn->value[p * c + ci];
        g[p] += acc;
      }
    }
  });
}

Var concat_channels(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: nothing to concatenate");
  const Tensor& first = parts[0].value();
  require_nhwc(first, -1, "concat_channels");
  std::int64_t total = 0;
  std::vector<std::int64_t> widths;
  for (const auto& p : parts) {
    const Tensor& t = p.value();
    require_nhwc(t, -1, "concat_channels");
    if (t.batch() != first.batch() || t.height() != first.height() || t.width() != first.width()) {
      throw ShapeError("concat_channels: " + to_string(first.shape()) + " vs " + to_string(t.shape()));
    }
    widths.push_back(t.channels());
    total += t.channels();
  }
  const std::int64_t pixels = first.batch() * first.height() * first.width();
  Tensor out({first.batch(), first.height(), first.width(), total});
  std::int64_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const float* s = parts[k].value().data();
    const std::int64_t c = widths[k];
    for (std::int64_t p = 0; p < pixels; ++p) {
      std::memcpy(out.data() + p * total + offset, s + p * c, static_cast<std::size_t>(c) * sizeof(float));
    }
    offset += c;
  }
  return make_result(std::move(out), parts, [widths, pixels, total](Node& self) {
    std::int64_t offset = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      Node* pn = self.parents[k].get();
      const std::int64_t c = widths[k];
      if (pn->requires_grad) {
        float* g = pn->grad_buffer().data();
        for (std::int64_t p = 0; p < pixels; ++p) {
          const float* src = self.grad.data() + p * total + offset;
          for (std::int64_t ci = 0; ci < c; ++ci) g[p * c + ci] += src[ci];
        }
      }
      offset += c;
    }
  });
}

Var global_avg_pool(const Var& x) {
  const Tensor& in = x.value();
  require_nhwc(in, -1, "global_avg_pool");
  const std::int64_t n = in.batch(), hw = in.height() * in.width(), c = in.channels();
  Tensor out({n, c});
  for (std::int64_t b = 0; b < n; ++b) {
    ConstMatrixMap m(in.data() + b * hw * c, hw, c);
    RowVectorMap(out.data() + b * c, c) = m.colwise().mean();
  }
  return make_result(std::move(out), {x}, [n, hw, c](Node& self) {
    float* g = self.parents[0]->grad_buffer().data();
    const float scale = 1.0f / static_cast<float>(hw);
    for (std::int64_t b = 0; b < n; ++b) {
      for (std::int64_t p = 0; p < hw; ++p) {
        for (std::int64_t ci = 0; ci < c; ++ci) g[(b * hw + p) * c + ci] += self.grad[b * c + ci] * scale;
      }
    }
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  const Tensor& in = x.value();
  const Tensor& wt = weight.value();
  if (in.rank() != 2 || wt.rank() != 2 || in.dim(1) != wt.dim(0)) {
    throw ShapeError("linear: input " + to_string(in.shape()) + " vs weight " + to_string(wt.shape()));
  }
  const std::int64_t n = in.dim(0), cin = in.dim(1), cout = wt.dim(1);
  Tensor out({n, cout});
  MatrixMap ym(out.data(), n, cout);
  ym.noalias() = ConstMatrixMap(in.data(), n, cin) * ConstMatrixMap(wt.data(), cin, cout);
  if (bias) ym.rowwise() += ConstRowVector(bias.value().data(), cout);
  return make_result(std::move(out), {x, weight, bias}, [n, cin, cout](Node& self) {
    Node* xn = self.parents[0].get();
    Node* wn = self.parents[1].get();
    Node* bn = self.parents[2] ? self.parents[2].get() : nullptr;
    ConstMatrixMap dy(self.grad.data(), n, cout);
    if (xn->requires_grad) {
      MatrixMap(xn->grad_buffer().data(), n, cin).noalias() +=
          dy * ConstMatrixMap(wn->value.data(), cin, cout).transpose();
    }
    if (wn->requires_grad) {
      MatrixMap(wn->grad_buffer().data(), cin, cout).noalias() +=
          ConstMatrixMap(xn->value.data(), n, cin).transpose() * dy;
    }
    if (bn && bn->requires_grad) RowVectorMap(bn->grad_buffer().data(), cout) += dy.colwise().sum();
  });
}

Var weighted_sum(const std::vector<std::pair<Var, double>>& terms) {
  std::vector<Var> inputs;
  std::vector<float> weights;
  double total = 0.0;
  for (const auto& [v, wgt] : terms) {
    if (v.value().size() != 1) throw ShapeError("weighted_sum: terms must be scalars");
    if (wgt == 0.0) continue;
    total += wgt * v.value()[0];
    inputs.push_back(v);
    weights.push_back(static_cast<float>(wgt));
  }
  Tensor out({1}, static_cast<float>(total));
  return make_result(std::move(out), inputs, [weights](Node& self) {
    for (std::size_t k = 0; k < weights.size(); ++k) {
      Node* p = self.parents[k].get();
      if (p->requires_grad) p->grad_buffer()[0] += weights[k] * self.grad[0];
    }
  });
}

Tensor max_pool2d(const Tensor& x, const Window& win) {
  require_nhwc(x, -1, "max_pool2d");
  const std::int64_t n = x.batch(), h = x.height(), w = x.width(), c = x.channels();
  const std::int64_t oh = win.out_h(h), ow = win.out_w(w);
  Tensor out({n, oh, ow, c}, -std::numeric_limits<float>::infinity());
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t oy = 0; oy < oh; ++oy)
      for (std::int64_t ox = 0; ox < ow; ++ox)
        for (int ky = 0; ky < win.kernel_h; ++ky) {
          const std::int64_t iy = oy * win.stride - win.pad_h + ky;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < win.kernel_w; ++kx) {
            const std::int64_t ix = ox * win.stride - win.pad_w + kx;
            if (ix < 0 || ix >= w) continue;
            for (std::int64_t ci = 0; ci < c; ++ci) {
              out.at(b, oy, ox, ci) = std::max(out.at(b, oy, ox, ci), x.at(b, iy, ix, ci));
            }
          }
        }
  return out;
}

Tensor avg_pool2d(const Tensor& x, const Window& win, bool count_pad) {
  require_nhwc(x, -1, "avg_pool2d");
  const std::int64_t n = x.batch(), h = x.height(), w = x.width(), c = x.channels();
  const std::int64_t oh = win.out_h(h), ow = win.out_w(w);
  Tensor out({n, oh, ow, c});
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t oy = 0; oy < oh; ++oy)
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        int count = 0;
        for (int ky = 0; ky < win.kernel_h; ++ky) {
          const std::int64_t iy = oy * win.stride - win.pad_h + ky;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < win.kernel_w; ++kx) {
            const std::int64_t ix = ox * win.stride - win.pad_w + kx;
            if (ix < 0 || ix >= w) continue;
            ++count;
            for (std::int64_t ci = 0; ci < c; ++ci) out.at(b, oy, ox, ci) += x.at(b, iy, ix, ci);
          }
        }
        const float div = count_pad ? static_cast<float>(win.kernel_h * win.kernel_w) : static_cast<float>(count);
        for (std::int64_t ci = 0; ci < c; ++ci) out.at(b, oy, ox, ci) /= div;
      }
  return out;
}

Tensor bilinear_resize(const Tensor& x, std::int64_t out_h, std::int64_t out_w) {
  require_nhwc(x, -1, "bilinear_resize");
  if (out_h < 1 || out_w < 1) throw ShapeError("bilinear_resize: empty output size");
  const std::int64_t n = x.batch(), h = x.height(), w = x.width(), c = x.channels();
  if (out_h == h && out_w == w) return x;
  Tensor out({n, out_h, out_w, c});
  // Half-pixel centres (corners not aligned); negative source coords clamp to 0.
  auto axis = [](std::int64_t dst, std::int64_t in, std::int64_t outn) {
    const double scale = static_cast<double>(in) / static_cast<double>(outn);
    double src = (static_cast<double>(dst) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    std::int64_t i0 = static_cast<std::int64_t>(src);
    if (i0 > in - 1) i0 = in - 1;
    const std::int64_t i1 = std::min(i0 + 1, in - 1);
    const float frac = static_cast<float>(src - static_cast<double>(i0));
    return std::tuple{i0, i1, frac};
  };
  for (std::int64_t oy = 0; oy < out_h; ++oy) {
    const auto [y0, y1, fy] = axis(oy, h, out_h);
    for (std::int64_t ox = 0; ox < out_w; ++ox) {
      const auto [x0, x1, fx] = axis(ox, w, out_w);
      for (std::int64_t b = 0; b < n; ++b) {
        for (std::int64_t ci = 0; ci < c; ++ci) {
          // a + f * (b - a) keeps constant regions exact.
          const float a0 = x.at(b, y0, x0, ci), a1 = x.at(b, y0, x1, ci);
          const float b0 = x.at(b, y1, x0, ci), b1 = x.at(b, y1, x1, ci);
          const float top = a0 + fx * (a1 - a0);
          const float bot = b0 + fx * (b1 - b0);
          out.at(b, oy, ox, ci) = top + fy * (bot - top);
        }
      }
    }
  }
  return out;
}

}  // namespace histoclean::ops
