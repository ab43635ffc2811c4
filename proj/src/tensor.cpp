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

#include "histoclean/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace histoclean {

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + to_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor::Tensor(Shape shape, float fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> values)
    : shape_(std::move(shape)), data_(values.begin(), values.end()) {
  if (data_.size() != element_count(shape_)) {
    throw ShapeError("tensor of shape " + to_string(shape_) + " given " +
                     std::to_string(data_.size()) + " values");
  }
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(Shape shape) const {
  if (element_count(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  Tensor out;
  out.shape_ = std::move(shape);
  out.data_ = data_;
  return out;
}

Tensor Tensor::slice_batch(std::int64_t first, std::int64_t count) const {
  if (shape_.empty() || first < 0 || count < 0 || first + count > shape_[0]) {
    throw ShapeError("batch slice out of range for " + to_string(shape_));
  }
  const std::size_t per = shape_[0] ? data_.size() / static_cast<std::size_t>(shape_[0]) : 0;
  Shape s = shape_;
  s[0] = count;
  Tensor out;
  out.shape_ = std::move(s);
  out.data_.assign(data_.begin() + static_cast<std::ptrdiff_t>(per * first),
                   data_.begin() + static_cast<std::ptrdiff_t>(per * (first + count)));
  return out;
}

void require_nhwc(const Tensor& t, std::int64_t channels, const char* what) {
  if (t.rank() != 4) {
    throw ShapeError(std::string(what) + ": expected NHWC tensor, got shape " + to_string(t.shape()));
  }
  if (channels >= 0 && t.channels() != channels) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(channels) +
                     " channels, got shape " + to_string(t.shape()));
  }
}

Tensor concat_batch(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_batch: no tensors");
  Shape s = parts[0].shape();
  std::int64_t n = 0;
  for (const auto& p : parts) {
    if (p.rank() != s.size() || !std::equal(p.shape().begin() + 1, p.shape().end(), s.begin() + 1)) {
      throw ShapeError("concat_batch: mismatched shapes " + to_string(s) + " and " + to_string(p.shape()));
    }
    n += p.dim(0);
  }
  s[0] = n;
  Tensor out(std::move(s));
  auto it = out.storage().begin();
  for (const auto& p : parts) it = std::copy(p.storage().begin(), p.storage().end(), it);
  return out;
}

}  // namespace histoclean
