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

#include <cstddef>
#include <cstdint>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace histoclean {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

using Shape = std::vector<std::int64_t>;

/// Allocator with a fixed 64-byte alignment. Vectorised reductions peel a
/// different head depending on the buffer address, so a fixed alignment is
/// needed for run-to-run reproducible sums.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using Storage = std::vector<float, AlignedAllocator<float>>;

std::string to_string(const Shape& shape);
std::size_t element_count(const Shape& shape);

/// Dense row-major float tensor. Images are stored NHWC (batch, height,
/// width, channels) throughout.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  const Shape& shape() const { return shape_; }
  std::int64_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }
  Storage& storage() { return data_; }
  const Storage& storage() const { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  // NHWC accessors; only valid on rank-4 tensors.
  std::int64_t batch() const { return shape_.at(0); }
  std::int64_t height() const { return shape_.at(1); }
  std::int64_t width() const { return shape_.at(2); }
  std::int64_t channels() const { return shape_.at(3); }
  float& at(std::int64_t n, std::int64_t y, std::int64_t x, std::int64_t c) {
    return data_[static_cast<std::size_t>(((n * shape_[1] + y) * shape_[2] + x) * shape_[3] + c)];
  }
  float at(std::int64_t n, std::int64_t y, std::int64_t x, std::int64_t c) const {
    return data_[static_cast<std::size_t>(((n * shape_[1] + y) * shape_[2] + x) * shape_[3] + c)];
  }

  void fill(float v);
  Tensor reshaped(Shape shape) const;

  /// Copy of samples [first, first + count) along the leading axis.
  Tensor slice_batch(std::int64_t first, std::int64_t count) const;

 private:
  Shape shape_;
  Storage data_;
};

/// Throws ShapeError unless `t` is rank-4 NHWC with `channels` channels
/// (any channel count when `channels` < 0).
void require_nhwc(const Tensor& t, std::int64_t channels, const char* what);

/// Stacks equally-shaped rank-4 tensors along the batch axis.
Tensor concat_batch(std::span<const Tensor> parts);

}  // namespace histoclean
