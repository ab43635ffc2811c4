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

#include "histoclean/data_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "histoclean/ops.hpp"

namespace histoclean::data {
namespace {

using json = nlohmann::json;

constexpr std::size_t kPreloadBudgetBytes = std::size_t{1} << 30;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Domain parse_domain(const std::string& s) {
  if (s == "A_artifact") return Domain::artifact;
  if (s == "B_clean") return Domain::clean;
  throw ManifestError("unknown domain '" + s + "'");
}

Magnification parse_magnification(const std::string& s) {
  if (s == "x10") return Magnification::x10;
  if (s == "x40") return Magnification::x40;
  throw ManifestError("unknown magnification '" + s + "'");
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw ManifestError("unknown split '" + s + "'");
}

const json& field(const json& j, const char* name) {
  auto it = j.find(name);
  if (it == j.end()) throw ManifestError(std::string("missing field '") + name + "'");
  return *it;
}

TileRecord parse_record(const json& j) {
  TileRecord r;
  r.id = field(j, "id").get<std::string>();
  r.image_path = field(j, "image_path").get<std::string>();
  r.domain = parse_domain(field(j, "domain").get<std::string>());
  if (const auto& l = field(j, "label"); !l.is_null()) r.label = l.get<int>();
  r.magnification = parse_magnification(field(j, "magnification").get<std::string>());
  r.source_id = field(j, "source_id").get<std::string>();
  if (const auto& s = field(j, "split"); !s.is_null()) r.split = parse_split(s.get<std::string>());
  if (const auto& p = field(j, "paired_clean_id"); !p.is_null()) r.paired_clean_id = p.get<std::string>();
  for (const auto& [k, v] : j.items()) {
    static const std::set<std::string> known = {"id",        "image_path", "domain", "label",
                                                "magnification", "source_id", "split", "paired_clean_id"};
    if (!known.count(k)) throw ManifestError("unknown field '" + k + "'");
  }
  return r;
}

json record_json(const TileRecord& r) {
  json j;
  j["id"] = r.id;
  j["image_path"] = r.image_path.generic_string();
  j["domain"] = to_string(r.domain);
  j["label"] = r.label ? json(*r.label) : json(nullptr);
  j["magnification"] = to_string(r.magnification);
  j["source_id"] = r.source_id;
  j["split"] = r.split ? json(to_string(*r.split)) : json(nullptr);
  j["paired_clean_id"] = r.paired_clean_id ? json(*r.paired_clean_id) : json(nullptr);
  return j;
}

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  std::mt19937_64 rng(seed);
  // Fisher-Yates with an explicit draw so the order does not depend on the
  // standard library's shuffle implementation.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

double unit_draw(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

Tensor flip(const Tensor& x, bool horizontal) {
  Tensor out(x.shape());
  const std::int64_t n = x.batch(), h = x.height(), w = x.width(), c = x.channels();
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t xx = 0; xx < w; ++xx) {
        const std::int64_t sy = horizontal ? y : h - 1 - y;
        const std::int64_t sx = horizontal ? w - 1 - xx : xx;
        for (std::int64_t ci = 0; ci < c; ++ci) out.at(b, y, xx, ci) = x.at(b, sy, sx, ci);
      }
  return out;
}

Tensor crop(const Tensor& x, std::int64_t top, std::int64_t left, std::int64_t size) {
  const std::int64_t n = x.batch(), c = x.channels();
  Tensor out({n, size, size, c});
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t y = 0; y < size; ++y)
      for (std::int64_t xx = 0; xx < size; ++xx)
        for (std::int64_t ci = 0; ci < c; ++ci) out.at(b, y, xx, ci) = x.at(b, top + y, left + xx, ci);
  return out;
}

void check_crop(const Tensor& image, const AugmentConfig& cfg, const char* what) {
  require_nhwc(image, -1, what);
  if (image.height() < cfg.crop_size || image.width() < cfg.crop_size) {
    throw ShapeError(std::string(what) + ": image " + std::to_string(image.height()) + "x" +
                     std::to_string(image.width()) + " smaller than crop " + std::to_string(cfg.crop_size));
  }
  if (cfg.out_size < 1 || cfg.out_size > cfg.crop_size) {
    throw ShapeError(std::string(what) + ": out_size must be in [1, crop_size]");
  }
}

}  // namespace

std::string to_string(Domain d) { return d == Domain::artifact ? "A_artifact" : "B_clean"; }
std::string to_string(Magnification m) { return m == Magnification::x10 ? "x10" : "x40"; }
std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::uint64_t h = splitmix(seed);
  h = splitmix(h ^ a);
  h = splitmix(h ^ b);
  return splitmix(h ^ c);
}

std::uint64_t hash_string(std::string_view s, std::uint64_t seed) {
  std::uint64_t h = 1469598103934665603ULL ^ splitmix(seed);
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return splitmix(h);
}

std::filesystem::path Manifest::resolve(const TileRecord& r) const {
  return r.image_path.is_absolute() ? r.image_path : root / r.image_path;
}

const TileRecord* Manifest::find(const std::string& id) const {
  for (const auto& r : records) {
    if (r.id == id) return &r;
  }
  return nullptr;
}

Manifest Manifest::subset(Split split) const {
  Manifest out = *this;
  out.records.clear();
  for (const auto& r : records) {
    if (r.split == split) out.records.push_back(r);
  }
  return out;
}

Manifest Manifest::subset(Domain domain) const {
  Manifest out = *this;
  out.records.clear();
  for (const auto& r : records) {
    if (r.domain == domain) out.records.push_back(r);
  }
  return out;
}

std::size_t Manifest::count(Domain domain, std::optional<Split> split) const {
  return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [&](const TileRecord& r) {
    return r.domain == domain && (!split || r.split == split);
  }));
}

void validate(const Manifest& m, bool check_files) {
  if (m.class_names.size() != kNumClasses) {
    throw ManifestError("manifest must name exactly 7 classes, got " + std::to_string(m.class_names.size()));
  }
  if (m.tile_size < 1) throw ManifestError("tile_size must be positive");
  std::map<std::string, const TileRecord*> ids;
  for (const auto& r : m.records) {
    if (r.id.empty()) throw ManifestError("record with empty id");
    if (!ids.emplace(r.id, &r).second) throw ManifestError("duplicate id '" + r.id + "'");
    if (r.domain == Domain::clean && r.label) throw ManifestError("label on clean tile '" + r.id + "'");
    if (r.domain == Domain::artifact && !r.label) throw ManifestError("artifact tile '" + r.id + "' has no label");
    if (r.label && (*r.label < 0 || *r.label >= kNumClasses)) {
      throw ManifestError("label " + std::to_string(*r.label) + " outside [0,6] on '" + r.id + "'");
    }
    if (r.paired_clean_id && r.domain != Domain::artifact) {
      throw ManifestError("paired_clean_id on clean tile '" + r.id + "'");
    }
    if (check_files && !std::filesystem::exists(m.resolve(r))) {
      throw ManifestError("image for '" + r.id + "' not found: " + m.resolve(r).string());
    }
  }
  for (const auto& r : m.records) {
    if (!r.paired_clean_id) continue;
    auto it = ids.find(*r.paired_clean_id);
    if (it == ids.end()) {
      throw ManifestError("dangling paired_clean_id '" + *r.paired_clean_id + "' on '" + r.id + "'");
    }
    if (it->second->domain != Domain::clean || it->second->source_id != r.source_id) {
      throw ManifestError("paired_clean_id of '" + r.id + "' must name a clean tile from the same source");
    }
  }
}

Manifest parse_manifest(std::istream& in, const std::filesystem::path& root, bool check_files) {
  Manifest m;
  m.root = root;
  std::string line;
  int lineno = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      if (!j.is_object()) throw ManifestError("expected a JSON object");
      if (j.value("kind", "") == "header") {
        if (!first) throw ManifestError("header must be the first record");
        m.tile_size = j.value("tile_size", 300);
        if (j.contains("class_names")) m.class_names = j["class_names"].get<std::vector<std::string>>();
      } else {
        m.records.push_back(parse_record(j));
      }
    } catch (const json::exception& e) {
      throw ManifestError("manifest line " + std::to_string(lineno) + ": " + e.what());
    } catch (const ManifestError& e) {
      throw ManifestError("manifest line " + std::to_string(lineno) + ": " + e.what());
    }
    first = false;
  }
  validate(m, check_files);
  return m;
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot open manifest " + path.string());
  return parse_manifest(in, path.parent_path(), true);
}

void save_manifest(const Manifest& m, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest " + path.string());
  json header{{"kind", "header"}, {"tile_size", m.tile_size}, {"class_names", m.class_names}};
  out << header.dump() << '\n';
  for (const auto& r : m.records) out << record_json(r).dump() << '\n';
  if (!out) throw IoError("failed writing manifest " + path.string());
}

Manifest split_manifest(const Manifest& m, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ManifestError("train_fraction must lie in (0, 1)");
  }
  std::map<std::pair<int, int>, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    const auto& r = m.records[i];
    strata[{static_cast<int>(r.domain), r.label.value_or(-1)}].push_back(i);
  }
  Manifest out = m;
  for (auto& [key, members] : strata) {
    if (members.size() < 2) {
      const std::string name = key.first == static_cast<int>(Domain::clean)
                                   ? std::string("B_clean")
                                   : "A_artifact/" + m.class_names.at(static_cast<std::size_t>(key.second));
      throw ManifestError("stratum " + name + " has fewer than 2 records");
    }
    std::sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
      const auto& ra = m.records[a];
      const auto& rb = m.records[b];
      const auto ka = std::tuple(hash_string(ra.source_id, seed), ra.source_id, hash_string(ra.id, seed), ra.id);
      const auto kb = std::tuple(hash_string(rb.source_id, seed), rb.source_id, hash_string(rb.id, seed), rb.id);
      return ka < kb;
    });
    const auto n_train = static_cast<std::size_t>(
        std::floor(train_fraction * static_cast<double>(members.size()) + 0.5));
    for (std::size_t k = 0; k < members.size(); ++k) {
      out.records[members[k]].split = k < n_train ? Split::train : Split::test;
    }
  }
  return out;
}

void validate(const AugmentConfig& cfg, int tile_size) {
  if (cfg.flip_h_prob < 0 || cfg.flip_h_prob > 1 || cfg.flip_v_prob < 0 || cfg.flip_v_prob > 1) {
    throw ShapeError("flip probabilities must lie in [0, 1]");
  }
  if (cfg.crop_size > tile_size) throw ShapeError("crop_size exceeds tile_size");
  if (cfg.out_size < 1 || cfg.out_size > cfg.crop_size) throw ShapeError("out_size must be in [1, crop_size]");
}

Tensor augment(const Tensor& image, const AugmentConfig& cfg, std::mt19937_64& rng) {
  check_crop(image, cfg, "augment");
  // Fixed draw order: h-flip, v-flip, top, left.
  const bool fh = unit_draw(rng) < cfg.flip_h_prob;
  const bool fv = unit_draw(rng) < cfg.flip_v_prob;
  const std::uint64_t span_y = static_cast<std::uint64_t>(image.height() - cfg.crop_size) + 1;
  const std::uint64_t span_x = static_cast<std::uint64_t>(image.width() - cfg.crop_size) + 1;
  const auto top = static_cast<std::int64_t>(rng() % span_y);
  const auto left = static_cast<std::int64_t>(rng() % span_x);
  Tensor x = image;
  if (fh) x = flip(x, true);
  if (fv) x = flip(x, false);
  x = crop(x, top, left, cfg.crop_size);
  return ops::bilinear_resize(x, cfg.out_size, cfg.out_size);
}

Tensor eval_transform(const Tensor& image, const AugmentConfig& cfg) {
  check_crop(image, cfg, "eval_transform");
  const std::int64_t top = (image.height() - cfg.crop_size) / 2;
  const std::int64_t left = (image.width() - cfg.crop_size) / 2;
  return ops::bilinear_resize(crop(image, top, left, cfg.crop_size), cfg.out_size, cfg.out_size);
}

Tensor load_tile(const std::filesystem::path& path, int expected_size) {
  Image8 img = read_png(path);
  if (img.channels != 3) throw ShapeError("tile " + path.string() + " is not RGB");
  if (expected_size > 0 && (img.height != expected_size || img.width != expected_size)) {
    throw ShapeError("tile " + path.string() + " is " + std::to_string(img.height) + "x" +
                     std::to_string(img.width) + ", expected " + std::to_string(expected_size));
  }
  return normalize(img);
}

BatchStream::BatchStream(Manifest train, int batch_size, AugmentConfig cfg, std::uint64_t seed)
    : manifest_(std::move(train)), batch_size_(batch_size), cfg_(cfg), seed_(seed) {
  if (batch_size_ < 1) throw ManifestError("batch_size must be positive");
  validate(cfg_, manifest_.tile_size);
  for (std::size_t i = 0; i < manifest_.records.size(); ++i) {
    const auto& r = manifest_.records[i];
    (r.domain == Domain::artifact ? a_ : b_).push_back(i);
    by_id_[r.id] = i;
  }
  if (a_.empty()) throw ManifestError("training manifest has no artifact (A) tiles");
  if (b_.empty()) throw ManifestError("training manifest has no clean (B) tiles");
  const std::size_t larger = std::max(a_.size(), b_.size());
  steps_ = static_cast<int>((larger + static_cast<std::size_t>(batch_size_) - 1) / static_cast<std::size_t>(batch_size_));

  const std::size_t tile_bytes = static_cast<std::size_t>(manifest_.tile_size) * manifest_.tile_size * 3;
  if (tile_bytes * manifest_.records.size() <= kPreloadBudgetBytes) {
    cache_.reserve(manifest_.records.size());
    for (const auto& r : manifest_.records) {
      Image8 img = read_png(manifest_.resolve(r));
      if (img.height != manifest_.tile_size || img.width != manifest_.tile_size || img.channels != 3) {
        throw ShapeError("tile '" + r.id + "' does not decode to " + std::to_string(manifest_.tile_size) +
                         "x" + std::to_string(manifest_.tile_size) + "x3");
      }
      cache_.push_back(std::move(img));
    }
  }
}

Tensor BatchStream::load(const TileRecord& r) const {
  if (!cache_.empty()) return normalize(cache_[by_id_.at(r.id)]);
  return load_tile(manifest_.resolve(r), manifest_.tile_size);
}

std::size_t BatchStream::pick(const std::vector<std::size_t>& pool, int domain_tag, int epoch,
                              std::int64_t i) const {
  const auto n = static_cast<std::int64_t>(pool.size());
  const std::int64_t cycle = i / n;
  const auto perm = permutation(pool.size(), mix_seed(seed_, 0x5348u + static_cast<std::uint64_t>(domain_tag),
                                                      static_cast<std::uint64_t>(epoch),
                                                      static_cast<std::uint64_t>(cycle)));
  return pool[perm[static_cast<std::size_t>(i % n)]];
}

Batch BatchStream::batch(int epoch, int step) const {
  if (step < 0 || step >= steps_) throw ManifestError("step out of range");
  Batch out;
  std::vector<Tensor> as, bs, targets;
  bool all_paired = true;
  for (int j = 0; j < batch_size_; ++j) {
    const std::int64_t i = static_cast<std::int64_t>(step) * batch_size_ + j;
    const TileRecord& ra = manifest_.records[pick(a_, 0, epoch, i)];
    const TileRecord& rb = manifest_.records[pick(b_, 1, epoch, i)];
    const std::uint64_t sa = mix_seed(seed_, 0xA0u, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(i));
    const std::uint64_t sb = mix_seed(seed_, 0xB0u, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(i));
    std::mt19937_64 rng_a(sa), rng_b(sb);
    as.push_back(augment(load(ra), cfg_, rng_a));
    bs.push_back(augment(load(rb), cfg_, rng_b));
    out.labels_a.push_back(ra.label.value());
    out.ids_a.push_back(ra.id);
    out.ids_b.push_back(rb.id);
    if (ra.paired_clean_id && by_id_.count(*ra.paired_clean_id)) {
      // Same draws as the artifact tile keep the pair aligned.
      std::mt19937_64 rng_t(sa);
      targets.push_back(augment(load(manifest_.records[by_id_.at(*ra.paired_clean_id)]), cfg_, rng_t));
    } else {
      all_paired = false;
    }
  }
  out.images_a = concat_batch(as);
  out.images_b = concat_batch(bs);
  if (all_paired) out.clean_targets_a = concat_batch(targets);
  return out;
}

std::vector<Batch> BatchStream::prefetch(int epoch, int first, int count, int workers) const {
  std::vector<Batch> out(static_cast<std::size_t>(std::max(count, 0)));
  workers = std::max(workers, 1);
  if (workers == 1) {
    for (int k = 0; k < count; ++k) out[k] = batch(epoch, first + k);
    return out;
  }
  std::vector<std::future<void>> jobs;
  for (int w = 0; w < workers; ++w) {
    jobs.push_back(std::async(std::launch::async, [&, w] {
      for (int k = w; k < count; k += workers) out[k] = batch(epoch, first + k);
    }));
  }
  for (auto& j : jobs) j.get();
  return out;
}

}  // namespace histoclean::data
