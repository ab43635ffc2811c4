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

#include <cmath>
#include <fstream>
#include <iterator>

#include "doctest.h"
#include "histoclean/checkpoint.hpp"
#include "histoclean/optim.hpp"
#include "support.hpp"

using namespace histoclean;
using histoclean::testing::random_tensor;
using histoclean::testing::TempDir;

namespace {

CheckpointFile sample_checkpoint() {
  CheckpointFile ck;
  ck.config_json = R"({"variant":"ws"})";
  ck.epoch = 3;
  ck.rng_state = "1 2 3";
  ck.counters = {{"opt_g.steps", 12}, {"pool0.size", 0}};
  ck.arrays = {{"g_ab.stem.weight", random_tensor({27, 8}, 1)},
               {"scalar", Tensor({1}, 2.5f)},
               {"image", random_tensor({1, 4, 4, 3}, 2)}};
  return ck;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void dump(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary) << bytes;
}

}  // namespace

TEST_CASE("checkpoint round trip") {
  TempDir dir("ckpt");
  const CheckpointFile ck = sample_checkpoint();
  write_checkpoint(dir / "a.bin", ck);
  const CheckpointFile back = read_checkpoint(dir / "a.bin");
  CHECK(back.version == kCheckpointVersion);
  CHECK(back.config_json == ck.config_json);
  CHECK(back.epoch == 3);
  CHECK(back.rng_state == ck.rng_state);
  CHECK(back.counters == ck.counters);
  REQUIRE(back.arrays.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.arrays[i].first == ck.arrays[i].first);
    CHECK(back.arrays[i].second.shape() == ck.arrays[i].second.shape());
    CHECK(back.arrays[i].second.storage() == ck.arrays[i].second.storage());
  }
  CHECK(back.array("scalar")[0] == 2.5f);
  CHECK_THROWS_AS(back.array("missing"), CheckpointError);

  // Equal content gives equal bytes; no temporary files are left behind.
  write_checkpoint(dir / "b.bin", ck);
  CHECK(slurp(dir / "a.bin") == slurp(dir / "b.bin"));
  int files = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir.path())) ++files;
  CHECK(files == 2);

  const std::string bytes = slurp(dir / "a.bin");
  CHECK(bytes.substr(0, 8) == "HCLNCKPT");
}

TEST_CASE("checkpoint corruption is detected before decoding") {
  TempDir dir("ckpt_bad");
  write_checkpoint(dir / "good.bin", sample_checkpoint());
  const std::string bytes = slurp(dir / "good.bin");

  dump(dir / "trunc.bin", bytes.substr(0, bytes.size() - 9));
  CHECK_THROWS_WITH_AS(read_checkpoint(dir / "trunc.bin"), doctest::Contains("truncated"), CheckpointError);

  dump(dir / "tiny.bin", bytes.substr(0, 10));
  CHECK_THROWS_AS(read_checkpoint(dir / "tiny.bin"), CheckpointError);

  std::string flipped = bytes;
  flipped[flipped.size() / 2] ^= 0x40;
  dump(dir / "flip.bin", flipped);
  CHECK_THROWS_WITH_AS(read_checkpoint(dir / "flip.bin"), doctest::Contains("checksum"), CheckpointError);

  std::string version = bytes;
  version[8] = 9;
  dump(dir / "ver.bin", version);
  CHECK_THROWS_WITH_AS(read_checkpoint(dir / "ver.bin"), doctest::Contains("version 9 not supported"),
                       CheckpointError);

  std::string magic = bytes;
  magic[0] = 'X';
  dump(dir / "magic.bin", magic);
  CHECK_THROWS_AS(read_checkpoint(dir / "magic.bin"), CheckpointError);

  CHECK_THROWS_AS(read_checkpoint(dir / "absent.bin"), CheckpointError);
  // Parent is a regular file, so the directory cannot exist.
  CHECK_THROWS_AS(write_checkpoint(dir / "good.bin" / "x.bin", sample_checkpoint()), CheckpointError);
}

TEST_CASE("crc32 matches the standard check value") {
  CHECK(crc32_of("123456789") == 0xCBF43926u);
}

TEST_CASE("Adam step with decoupled weight decay") {
  const optim::AdamConfig cfg{0.1, 0.5, 0.999, 1e-8, 0.01};
  Var p = Var::parameter(Tensor({2}, std::vector<float>{1.0f, -2.0f}));
  optim::Adam opt({{"p", p}}, cfg);
  p.grad() = Tensor({2}, std::vector<float>{0.5f, -4.0f});
  opt.step();
  CHECK(opt.steps() == 1);
  // First step: m_hat = g, v_hat = g^2, so the update is lr * sign(g).
  CHECK(p.value()[0] == doctest::Approx(1.0 * (1 - 0.1 * 0.01) - 0.1).epsilon(1e-6));
  CHECK(p.value()[1] == doctest::Approx(-2.0 * (1 - 0.1 * 0.01) + 0.1).epsilon(1e-6));

  // Parameters without a gradient are left alone, decay included.
  Var q = Var::parameter(Tensor({1}, 3.0f));
  optim::Adam opt2({{"q", q}}, cfg);
  opt2.step();
  CHECK(q.value()[0] == 3.0f);
}

TEST_CASE("Adam state round trip") {
  const optim::AdamConfig cfg;
  Var p = Var::parameter(random_tensor({3, 2}, 5));
  optim::Adam a({{"w", p}}, cfg);
  for (int i = 0; i < 3; ++i) {
    p.grad() = random_tensor({3, 2}, 10 + i);
    a.step();
  }
  const auto state = a.state();
  CHECK(state.size() == 2);
  CHECK(state[0].first == "w.m");

  Var p2 = Var::parameter(p.value());
  optim::Adam b({{"w", p2}}, cfg);
  b.load_state(state, a.steps());
  const Tensor g = random_tensor({3, 2}, 99);
  p.grad() = g;
  p2.grad() = g;
  a.step();
  b.step();
  CHECK(p.value().storage() == p2.value().storage());

  std::vector<std::pair<std::string, Tensor>> wrong{{"w.m", Tensor({1})}, {"w.v", Tensor({1})}};
  CHECK_THROWS_AS(b.load_state(wrong, 1), ShapeError);
  CHECK_THROWS_AS(b.load_state({}, 1), Error);
}
