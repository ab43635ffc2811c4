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

#include "histoclean/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace histoclean {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'H', 'C', 'L', 'N', 'C', 'K', 'P', 'T'};

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_str(std::string& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out += s;
}

class Reader {
 public:
  explicit Reader(const std::string& data) : data_(data) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
      return v;
  }
  std::string str() {
    const auto n = get<std::uint64_t>();
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void floats(float* dst, std::size_t n) {
    need(n * sizeof(float));
    std::memcpy(dst, data_.data() + pos_, n * sizeof(float));
    pos_ += n * sizeof(float);
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (n > data_.size() - pos_) throw CheckpointError("checkpoint payload truncated");
  }
  const std::string& data_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint32_t crc32_of(const std::string& bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + off), chunk);
    off += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

const Tensor& CheckpointFile::array(const std::string& name) const {
  for (const auto& [n, t] : arrays) {
    if (n == name) return t;
  }
  throw CheckpointError("checkpoint has no array '" + name + "'");
}

void write_checkpoint(const std::filesystem::path& path, const CheckpointFile& ckpt) {
  std::string payload;
  put_str(payload, ckpt.config_json);
  put<std::int64_t>(payload, ckpt.epoch);
  put_str(payload, ckpt.rng_state);
  put<std::uint32_t>(payload, static_cast<std::uint32_t>(ckpt.counters.size()));
  for (const auto& [name, v] : ckpt.counters) {
    put_str(payload, name);
    put<std::int64_t>(payload, v);
  }
  put<std::uint32_t>(payload, static_cast<std::uint32_t>(ckpt.arrays.size()));
  for (const auto& [name, t] : ckpt.arrays) {
    put_str(payload, name);
    put<std::uint32_t>(payload, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put<std::int64_t>(payload, d);
    for (float f : t.values()) put<std::uint32_t>(payload, std::bit_cast<std::uint32_t>(f));
  }

  std::string file(kMagic, sizeof kMagic);
  put<std::uint32_t>(file, ckpt.version);
  put<std::uint64_t>(file, payload.size());
  file += payload;
  put<std::uint32_t>(file, crc32_of(payload));

  std::error_code ec;
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw CheckpointError("cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open " + tmp.string() + " for writing");
    out.write(file.data(), static_cast<std::streamsize>(file.size()));
    out.flush();
    if (!out) throw CheckpointError("failed writing checkpoint " + tmp.string() + " (disk full?)");
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw CheckpointError("cannot move checkpoint into place: " + ec.message());
}

CheckpointFile read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string file = ss.str();

  constexpr std::size_t kHeader = sizeof kMagic + 4 + 8;
  if (file.size() < kHeader + 4 || std::memcmp(file.data(), kMagic, sizeof kMagic) != 0) {
    throw CheckpointError(path.string() + " is not a checkpoint or is truncated");
  }
  Reader header(file);
  header.get<std::uint64_t>();  // magic
  const auto version = header.get<std::uint32_t>();
  const auto size = header.get<std::uint64_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(version) + " not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  if (file.size() != kHeader + size + 4) throw CheckpointError("checkpoint " + path.string() + " is truncated (checksum)");
  const std::string payload = file.substr(kHeader, size);
  std::uint32_t stored;
  std::memcpy(&stored, file.data() + kHeader + size, 4);
  if (stored != crc32_of(payload)) throw CheckpointError("checkpoint " + path.string() + " failed checksum");

  CheckpointFile ckpt;
  ckpt.version = version;
  Reader r(payload);
  ckpt.config_json = r.str();
  ckpt.epoch = r.get<std::int64_t>();
  ckpt.rng_state = r.str();
  const auto n_counters = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_counters; ++i) {
    std::string name = r.str();
    ckpt.counters[name] = r.get<std::int64_t>();
  }
  const auto n_arrays = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_arrays; ++i) {
    std::string name = r.str();
    const auto rank = r.get<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::int64_t>();
    Tensor t(shape);
    r.floats(t.data(), t.size());
    ckpt.arrays.emplace_back(std::move(name), std::move(t));
  }
  if (!r.done()) throw CheckpointError("checkpoint payload has trailing bytes");
  return ckpt;
}

}  // namespace histoclean
