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

#include <fstream>
#include <iterator>

#include "doctest.h"
#include "histoclean/synthetic.hpp"
#include "support.hpp"

using namespace histoclean;
using namespace histoclean::data;
using histoclean::testing::TempDir;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("synthesize_corpus: 100 scenes x 3 classes") {
  TempDir dir("synth100");
  SyntheticSpec spec;
  spec.n_scenes = 100;
  spec.classes = {0, 2, 5};
  spec.tile_size = 32;
  const Manifest m = synthesize_corpus(spec, dir.path());
  CHECK(m.count(Domain::clean) == 100);
  CHECK(m.count(Domain::artifact) == 300);
  for (const auto& r : m.records) {
    if (r.domain != Domain::artifact) continue;
    REQUIRE(r.paired_clean_id.has_value());
    const TileRecord* c = m.find(*r.paired_clean_id);
    REQUIRE(c != nullptr);
    CHECK(c->source_id == r.source_id);
    CHECK(std::filesystem::exists(mask_path_for(m, r)));
  }
  const Manifest back = load_manifest(dir / "manifest.txt");
  CHECK(back.records == m.records);
  CHECK(back.tile_size == 32);
  CHECK(std::filesystem::exists(dir / "clean" / "scene_00000.png"));
  CHECK(std::filesystem::exists(dir / "artifact" / "scene_00099_5.png"));
  CHECK(std::filesystem::exists(dir / "masks" / "scene_00042_2.png"));
}

TEST_CASE("synthesize_corpus is byte-deterministic per seed") {
  TempDir a("synth_a"), b("synth_b"), c("synth_c");
  SyntheticSpec spec;
  spec.n_scenes = 4;
  spec.classes = {1, 3, 6};
  spec.tile_size = 24;
  spec.seed = 17;
  synthesize_corpus(spec, a.path());
  synthesize_corpus(spec, b.path());
  spec.seed = 18;
  synthesize_corpus(spec, c.path());
  for (const char* rel : {"clean/scene_00000.png", "artifact/scene_00003_6.png", "masks/scene_00001_3.png",
                          "manifest.txt"}) {
    CHECK(slurp(a / rel) == slurp(b / rel));
  }
  CHECK(slurp(a / "clean/scene_00000.png") != slurp(c / "clean/scene_00000.png"));
  CHECK(slurp(a / "artifact/scene_00002_1.png") != slurp(c / "artifact/scene_00002_1.png"));
}

TEST_CASE("artifact minus clean is nonzero only inside the stored mask") {
  SyntheticSpec spec;
  spec.n_scenes = 6;
  spec.classes = {0, 1, 2, 3, 4, 5, 6};
  spec.tile_size = 48;
  spec.seed = 3;
  for (int s = 0; s < spec.n_scenes; ++s) {
    const SyntheticScene scene = render_scene(spec, s);
    REQUIRE(scene.artifacts.size() == 7);
    for (std::size_t k = 0; k < 7; ++k) {
      const Image8& art = scene.artifacts[k];
      const Image8& mask = scene.masks[k];
      int outside = 0, inside_changed = 0, inside = 0;
      for (int y = 0; y < spec.tile_size; ++y)
        for (int x = 0; x < spec.tile_size; ++x) {
          bool differs = false;
          for (int c = 0; c < 3; ++c) differs = differs || art.at(y, x, c) != scene.clean.at(y, x, c);
          if (mask.at(y, x, 0) == 0) {
            outside += differs;
          } else {
            ++inside;
            inside_changed += differs;
          }
        }
      INFO("scene " << s << " class " << k);
      CHECK(outside == 0);
      CHECK(inside > 0);
      CHECK(inside_changed > 0);
    }
  }
}

TEST_CASE("synthesize_corpus errors") {
  TempDir dir("synth_err");
  SyntheticSpec spec;
  spec.classes = {0, 9};
  CHECK_THROWS_WITH_AS(synthesize_corpus(spec, dir.path()), doctest::Contains("unknown class index 9"), ManifestError);
  spec.classes = {};
  CHECK_THROWS_AS(synthesize_corpus(spec, dir.path()), ManifestError);
  spec.classes = {1};
  spec.n_scenes = 0;
  CHECK_THROWS_AS(synthesize_corpus(spec, dir.path()), ManifestError);

  // A regular file where the output directory should be.
  std::ofstream(dir / "file") << "x";
  spec.n_scenes = 1;
  CHECK_THROWS_AS(synthesize_corpus(spec, dir / "file"), Error);
}
