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
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "histoclean/tensor.hpp"

namespace histoclean {

class CheckpointError : public Error {
 public:
  using Error::Error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// On-disk layout (all integers little-endian):
///   "HCLNCKPT" | u32 version | u64 payload bytes | payload | u32 crc32(payload)
/// payload:
///   str config_json | i64 epoch | str rng_state
///   u32 n_counters  { str name | i64 value }
///   u32 n_arrays    { str name | u32 rank | i64 dims[rank] | f32 data[] }
/// where str is u64 length + bytes.
struct CheckpointFile {
  std::uint32_t version = kCheckpointVersion;
  std::string config_json;
  std::int64_t epoch = 0;
  std::string rng_state;
  std::map<std::string, std::int64_t> counters;
  std::vector<std::pair<std::string, Tensor>> arrays;

  const Tensor& array(const std::string& name) const;
};

/// Writes via a temporary file and rename, so readers never see a partial file.
void write_checkpoint(const std::filesystem::path& path, const CheckpointFile& ckpt);
/// Verifies magic, version and checksum before decoding anything.
CheckpointFile read_checkpoint(const std::filesystem::path& path);

std::uint32_t crc32_of(const std::string& bytes);

}  // namespace histoclean
