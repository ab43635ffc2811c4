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
#include <vector>

#include "histoclean/tensor.hpp"

namespace histoclean {

class IoError : public Error {
 public:
  using Error::Error;
};

/// 8-bit interleaved raster (1 = gray, 3 = RGB).
struct Image8 {
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<std::uint8_t> pixels;

  Image8() = default;
  Image8(int h, int w, int c, std::uint8_t fill = 0)
      : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, fill) {}

  std::uint8_t& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  std::uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool operator==(const Image8&) const = default;
};

Image8 read_png(const std::filesystem::path& path);
/// Writes 8-bit gray or RGB PNG with fixed compression settings, so equal
/// images give equal bytes.
void write_png(const std::filesystem::path& path, const Image8& image);

/// u8 -> u / 127.5 - 1, as a (1, H, W, C) tensor.
Tensor normalize(const Image8& image);
/// Inverse of normalize, rounding to nearest and clamping to [0, 255].
/// Takes sample `index` of an NHWC tensor.
Image8 denormalize(const Tensor& t, std::int64_t index = 0);
/// Maps [0, 1] values (masks) to gray u8.
Image8 unit_to_gray(const Tensor& t, std::int64_t index = 0);

}  // namespace histoclean
