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

#include "histoclean/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

namespace histoclean::data {
namespace {

using Rgb = std::array<float, 3>;

// Float canvas, values in [0, 1].
struct Canvas {
  int size = 0;
  std::vector<float> px;  // size * size * 3

  explicit Canvas(int s) : size(s), px(static_cast<std::size_t>(s) * s * 3, 0.0f) {}
  float* at(int y, int x) { return px.data() + (static_cast<std::size_t>(y) * size + x) * 3; }
  const float* at(int y, int x) const { return px.data() + (static_cast<std::size_t>(y) * size + x) * 3; }
};

class Draw {
 public:
  explicit Draw(std::uint64_t seed) : rng_(seed) {}
  float uniform(float lo, float hi) {
    return lo + (hi - lo) * static_cast<float>(static_cast<double>(rng_() >> 40) * 0x1.0p-24);
  }
  int integer(int lo, int hi) { return lo + static_cast<int>(rng_() % static_cast<std::uint64_t>(hi - lo + 1)); }

 private:
  std::mt19937_64 rng_;
};

float smoothstep(float e0, float e1, float x) {
  const float t = std::clamp((x - e0) / (e1 - e0), 0.0f, 1.0f);
  return t * t * (3.0f - 2.0f * t);
}

Rgb mix(const Rgb& a, const Rgb& b, float t) {
  return {a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t};
}

Image8 quantize(const Canvas& c) {
  Image8 img(c.size, c.size, 3);
  for (std::size_t i = 0; i < c.px.size(); ++i) {
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(c.px[i], 0.0f, 1.0f) * 255.0f));
  }
  return img;
}

Canvas render_tissue(int size, Draw& d) {
  Canvas c(size);
  const Rgb background{0.94f, 0.86f, 0.90f};
  const Rgb stroma{0.88f, 0.55f, 0.72f};
  const Rgb dense{0.76f, 0.38f, 0.62f};
  const Rgb nucleus{0.30f, 0.18f, 0.50f};

  struct Wave {
    float fx, fy, phase, amp;
  };
  std::vector<Wave> waves;
  for (int k = 0; k < 5; ++k) {
    const float freq = d.uniform(1.0f, 3.5f) * 2.0f * std::numbers::pi_v<float> / static_cast<float>(size);
    const float angle = d.uniform(0.0f, 2.0f * std::numbers::pi_v<float>);
    waves.push_back({freq * std::cos(angle), freq * std::sin(angle), d.uniform(0.0f, 6.2832f), d.uniform(0.5f, 1.0f)});
  }
  float amp_sum = 0.0f;
  for (const auto& w : waves) amp_sum += w.amp;
  const float tissue_level = d.uniform(-0.35f, 0.1f);

  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      float v = 0.0f;
      for (const auto& w : waves) v += w.amp * std::sin(w.fx * x + w.fy * y + w.phase);
      v /= amp_sum;
      const float tissue = smoothstep(tissue_level - 0.15f, tissue_level + 0.15f, v);
      const float density = smoothstep(0.2f, 0.8f, v);
      const Rgb col = mix(background, mix(stroma, dense, density), tissue);
      std::copy(col.begin(), col.end(), c.at(y, x));
    }
  }

  const float scale = static_cast<float>(size) / 64.0f;
  const int nuclei = static_cast<int>(d.uniform(14.0f, 26.0f) * scale * scale);
  for (int k = 0; k < nuclei; ++k) {
    const float cy = d.uniform(0.0f, static_cast<float>(size));
    const float cx = d.uniform(0.0f, static_cast<float>(size));
    const float ry = d.uniform(1.3f, 2.6f) * scale;
    const float rx = d.uniform(1.3f, 2.6f) * scale;
    const float shade = d.uniform(0.75f, 1.1f);
    const int y0 = std::max(0, static_cast<int>(cy - ry - 2)), y1 = std::min(size - 1, static_cast<int>(cy + ry + 2));
    const int x0 = std::max(0, static_cast<int>(cx - rx - 2)), x1 = std::min(size - 1, static_cast<int>(cx + rx + 2));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const float dy = (static_cast<float>(y) + 0.5f - cy) / ry;
        const float dx = (static_cast<float>(x) + 0.5f - cx) / rx;
        const float a = 1.0f - smoothstep(0.7f, 1.1f, std::sqrt(dx * dx + dy * dy));
        if (a <= 0.0f) continue;
        float* p = c.at(y, x);
        for (int ch = 0; ch < 3; ++ch) p[ch] = p[ch] + (nucleus[ch] * shade - p[ch]) * a * 0.9f;
      }
    }
  }
  return c;
}

// Distance from p to the quadratic Bezier p0-p1-p2, by dense sampling.
float bezier_distance(float py, float px, const std::array<float, 6>& ctl) {
  float best = 1e30f;
  constexpr int kSteps = 48;
  for (int i = 0; i <= kSteps; ++i) {
    const float t = static_cast<float>(i) / kSteps;
    const float u = 1.0f - t;
    const float by = u * u * ctl[0] + 2 * u * t * ctl[2] + t * t * ctl[4];
    const float bx = u * u * ctl[1] + 2 * u * t * ctl[3] + t * t * ctl[5];
    best = std::min(best, (py - by) * (py - by) + (px - bx) * (px - bx));
  }
  return std::sqrt(best);
}

std::array<float, 6> random_curve(Draw& d, float size, float bend) {
  std::array<float, 6> ctl{};
  const float margin = 0.1f * size;
  ctl[0] = d.uniform(-margin, size + margin);
  ctl[1] = d.uniform(-margin, size + margin);
  ctl[4] = d.uniform(-margin, size + margin);
  ctl[5] = d.uniform(-margin, size + margin);
  // Keep the curve long enough to cross a good part of the tile.
  if (std::hypot(ctl[4] - ctl[0], ctl[5] - ctl[1]) < 0.6f * size) {
    ctl[4] = size - ctl[0];
    ctl[5] = size - ctl[1];
  }
  ctl[2] = 0.5f * (ctl[0] + ctl[4]) + d.uniform(-bend, bend) * size;
  ctl[3] = 0.5f * (ctl[1] + ctl[5]) + d.uniform(-bend, bend) * size;
  return ctl;
}

std::vector<float> gaussian_blur_channel(const Canvas& c, int ch, float sigma) {
  const int size = c.size;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0f * sigma)));
  std::vector<float> kernel(static_cast<std::size_t>(2 * radius + 1));
  float sum = 0.0f;
  for (int k = -radius; k <= radius; ++k) {
    kernel[k + radius] = std::exp(-0.5f * static_cast<float>(k * k) / (sigma * sigma));
    sum += kernel[k + radius];
  }
  for (auto& k : kernel) k /= sum;
  auto reflect = [size](int i) {
    while (i < 0 || i >= size) i = i < 0 ? -i : 2 * size - 2 - i;
    return i;
  };
  std::vector<float> tmp(static_cast<std::size_t>(size) * size), out(tmp.size());
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      float acc = 0.0f;
      for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * c.at(y, reflect(x + k))[ch];
      tmp[static_cast<std::size_t>(y) * size + x] = acc;
    }
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      float acc = 0.0f;
      for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * tmp[static_cast<std::size_t>(reflect(y + k)) * size + x];
      out[static_cast<std::size_t>(y) * size + x] = acc;
    }
  return out;
}

// alpha-composites `overlay` onto `clean` wherever alpha > 0.
struct Corruption {
  std::vector<float> alpha;
  Canvas overlay;
  explicit Corruption(int size) : alpha(static_cast<std::size_t>(size) * size, 0.0f), overlay(size) {}
};

Corruption render_corruption(const Canvas& clean, int cls, const CorruptionParams& p, Draw& d) {
  const int size = clean.size;
  const float fs = static_cast<float>(size);
  const float scale = fs / 64.0f;
  Corruption out(size);
  auto set = [&](int y, int x, float a, const Rgb& col) {
    const std::size_t i = static_cast<std::size_t>(y) * size + x;
    if (a <= out.alpha[i]) return;
    out.alpha[i] = a;
    std::copy(col.begin(), col.end(), out.overlay.at(y, x));
  };

  switch (cls) {
    case 0: {  // pen marker: thick opaque stroke
      static const std::array<Rgb, 3> inks{Rgb{0.10f, 0.45f, 0.25f}, Rgb{0.10f, 0.18f, 0.55f}, Rgb{0.08f, 0.08f, 0.10f}};
      const Rgb col = inks[static_cast<std::size_t>(d.integer(0, 2))];
      const float opacity = d.uniform(p.opacity_min, p.opacity_max);
      const float half = 0.5f * d.uniform(p.width_min, p.width_max) * fs;
      const auto ctl = random_curve(d, fs, 0.35f);
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const float dist = bezier_distance(y + 0.5f, x + 0.5f, ctl);
          const float a = opacity * (1.0f - smoothstep(half - scale, half, dist));
          if (a > 0.0f) set(y, x, a, col);
        }
      break;
    }
    case 1: {  // ink: translucent blobs
      const int blobs = d.integer(1, 3);
      const Rgb col{d.uniform(0.05f, 0.2f), d.uniform(0.05f, 0.15f), d.uniform(0.2f, 0.4f)};
      for (int b = 0; b < blobs; ++b) {
        const float opacity = d.uniform(p.opacity_min, p.opacity_max);
        const float cy = d.uniform(0.1f, 0.9f) * fs, cx = d.uniform(0.1f, 0.9f) * fs;
        const float ry = d.uniform(p.width_min, p.width_max) * fs, rx = d.uniform(p.width_min, p.width_max) * fs;
        for (int y = 0; y < size; ++y)
          for (int x = 0; x < size; ++x) {
            const float dy = (y + 0.5f - cy) / ry, dx = (x + 0.5f - cx) / rx;
            const float a = opacity * (1.0f - smoothstep(0.8f, 1.0f, std::sqrt(dx * dx + dy * dy)));
            if (a > 0.0f) set(y, x, a, col);
          }
      }
      break;
    }
    case 2: {  // out of focus: blurred elliptical region
      const float sigma = d.uniform(p.blur_sigma_min, p.blur_sigma_max) * scale;
      std::array<std::vector<float>, 3> blurred;
      for (int ch = 0; ch < 3; ++ch) blurred[ch] = gaussian_blur_channel(clean, ch, sigma);
      const float cy = d.uniform(0.3f, 0.7f) * fs, cx = d.uniform(0.3f, 0.7f) * fs;
      const float ry = d.uniform(p.width_min, p.width_max) * fs, rx = d.uniform(p.width_min, p.width_max) * fs;
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const float dy = (y + 0.5f - cy) / ry, dx = (x + 0.5f - cx) / rx;
          const float a = 1.0f - smoothstep(0.75f, 1.0f, std::sqrt(dx * dx + dy * dy));
          const std::size_t i = static_cast<std::size_t>(y) * size + x;
          if (a > 0.0f) set(y, x, a, Rgb{blurred[0][i], blurred[1][i], blurred[2][i]});
        }
      break;
    }
    case 3: {  // air bubble: bright interior, dark rim
      const float r = d.uniform(p.width_min, p.width_max) * fs;
      const float cy = d.uniform(0.25f, 0.75f) * fs, cx = d.uniform(0.25f, 0.75f) * fs;
      const float rim = d.uniform(p.opacity_min, p.opacity_max);
      const Rgb bright{0.97f, 0.97f, 0.97f}, dark{0.35f, 0.35f, 0.38f};
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const float t = std::hypot(y + 0.5f - cy, x + 0.5f - cx) / r;
          if (t >= 1.2f) continue;
          const float ring = std::exp(-std::pow((t - 1.0f) / 0.08f, 2.0f)) * (1.0f - smoothstep(1.1f, 1.2f, t));
          const float inner = t < 1.0f ? 0.35f : 0.0f;
          const float a = std::min(1.0f, inner + rim * ring);
          if (a > 0.0f) set(y, x, a, mix(bright, dark, ring));
        }
      break;
    }
    case 4: {  // tissue fold: darkened, displaced band
      const float half = 0.5f * d.uniform(p.width_min, p.width_max) * fs;
      const float angle = d.uniform(0.0f, std::numbers::pi_v<float>);
      const float ny = std::cos(angle), nx = std::sin(angle);
      const float offset = d.uniform(-0.2f, 0.2f) * fs;
      const float shift = d.uniform(2.0f, 4.0f) * scale;
      const float opacity = d.uniform(p.opacity_min, p.opacity_max);
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const float dist = (y + 0.5f - 0.5f * fs) * ny + (x + 0.5f - 0.5f * fs) * nx - offset;
          const float a = opacity * (1.0f - smoothstep(0.6f * half, half, std::abs(dist)));
          if (a <= 0.0f) continue;
          const int sy = std::clamp(static_cast<int>(std::lround(y + shift * ny)), 0, size - 1);
          const int sx = std::clamp(static_cast<int>(std::lround(x + shift * nx)), 0, size - 1);
          const float* s = clean.at(sy, sx);
          set(y, x, a, Rgb{s[0] * s[0] * 0.8f, s[1] * s[1] * 0.7f, s[2] * s[2] * 0.85f});
        }
      break;
    }
    case 5: {  // dust: dark speckles
      const int specks = static_cast<int>(d.uniform(25.0f, 45.0f) * scale * scale);
      for (int k = 0; k < specks; ++k) {
        const float cy = d.uniform(0.0f, fs), cx = d.uniform(0.0f, fs);
        const float r = d.uniform(0.8f, 1.8f) * scale;
        const float opacity = d.uniform(p.opacity_min, p.opacity_max);
        const float g = d.uniform(0.05f, 0.25f);
        for (int y = std::max(0, static_cast<int>(cy - r - 1)); y <= std::min(size - 1, static_cast<int>(cy + r + 1)); ++y)
          for (int x = std::max(0, static_cast<int>(cx - r - 1)); x <= std::min(size - 1, static_cast<int>(cx + r + 1)); ++x) {
            const float dist = std::hypot(y + 0.5f - cy, x + 0.5f - cx);
            const float a = opacity * (1.0f - smoothstep(0.6f * r, r, dist));
            if (a > 0.0f) set(y, x, a, Rgb{g, g, g});
          }
      }
      break;
    }
    case 6: {  // filament: thin curvilinear strokes
      const int strokes = d.integer(1, 3);
      for (int s = 0; s < strokes; ++s) {
        const auto ctl = random_curve(d, fs, 0.6f);
        const float half = 0.5f * d.uniform(p.width_min, p.width_max) * fs;
        const float opacity = d.uniform(p.opacity_min, p.opacity_max);
        const Rgb col{d.uniform(0.15f, 0.3f), d.uniform(0.1f, 0.2f), d.uniform(0.05f, 0.15f)};
        for (int y = 0; y < size; ++y)
          for (int x = 0; x < size; ++x) {
            const float dist = bezier_distance(y + 0.5f, x + 0.5f, ctl);
            const float a = opacity * (1.0f - smoothstep(half, half + 0.75f * scale, dist));
            if (a > 0.0f) set(y, x, a, col);
          }
      }
      break;
    }
    default:
      throw ManifestError("unknown class index " + std::to_string(cls));
  }
  return out;
}

std::string scene_name(int scene) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%05d", scene);
  return buf;
}

}  // namespace

std::array<CorruptionParams, kNumClasses> default_corruption_params() {
  std::array<CorruptionParams, kNumClasses> p{};
  p[0] = {0.80f, 0.95f, 0, 0, 0.12f, 0.22f};  // pen marker
  p[1] = {0.35f, 0.60f, 0, 0, 0.12f, 0.25f};  // ink
  p[2] = {0, 0, 1.5f, 3.0f, 0.30f, 0.45f};    // blur (region radii)
  p[3] = {0.60f, 0.90f, 0, 0, 0.20f, 0.35f};  // air bubble (radius)
  p[4] = {0.75f, 0.95f, 0, 0, 0.10f, 0.20f};  // tissue fold
  p[5] = {0.70f, 0.95f, 0, 0, 0, 0};          // dust
  p[6] = {0.75f, 0.95f, 0, 0, 0.015f, 0.03f}; // filament
  return p;
}

SyntheticScene render_scene(const SyntheticSpec& spec, int scene) {
  if (spec.tile_size < 8) throw ManifestError("synthetic tile_size must be at least 8");
  Draw base(mix_seed(spec.seed, 0x7155u, static_cast<std::uint64_t>(scene)));
  const Canvas clean = render_tissue(spec.tile_size, base);
  SyntheticScene out;
  out.clean = quantize(clean);
  for (int cls : spec.classes) {
    if (cls < 0 || cls >= kNumClasses) throw ManifestError("unknown class index " + std::to_string(cls));
    Draw d(mix_seed(spec.seed, 0xC0u + static_cast<std::uint64_t>(cls), static_cast<std::uint64_t>(scene)));
    const Corruption c = render_corruption(clean, cls, spec.params[static_cast<std::size_t>(cls)], d);
    Canvas composed = clean;
    Image8 mask(spec.tile_size, spec.tile_size, 1);
    for (int y = 0; y < spec.tile_size; ++y) {
      for (int x = 0; x < spec.tile_size; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * spec.tile_size + x;
        const float a = c.alpha[i];
        if (a <= 0.0f) continue;
        mask.pixels[i] = 255;
        float* p = composed.at(y, x);
        const float* o = c.overlay.at(y, x);
        for (int ch = 0; ch < 3; ++ch) p[ch] = p[ch] * (1.0f - a) + o[ch] * a;
      }
    }
    out.artifacts.push_back(quantize(composed));
    out.masks.push_back(std::move(mask));
  }
  return out;
}

Manifest synthesize_corpus(const SyntheticSpec& spec, const std::filesystem::path& out_dir) {
  if (spec.n_scenes < 1) throw ManifestError("n_scenes must be at least 1");
  if (spec.classes.empty()) throw ManifestError("synthetic corpus needs at least one class");
  for (int cls : spec.classes) {
    if (cls < 0 || cls >= kNumClasses) throw ManifestError("unknown class index " + std::to_string(cls));
  }
  std::error_code ec;
  for (const char* sub : {"clean", "artifact", "masks"}) {
    std::filesystem::create_directories(out_dir / sub, ec);
    if (ec) throw IoError("cannot create " + (out_dir / sub).string() + ": " + ec.message());
  }
  Manifest m;
  m.tile_size = spec.tile_size;
  m.root = out_dir;
  for (int s = 0; s < spec.n_scenes; ++s) {
    const SyntheticScene scene = render_scene(spec, s);
    const std::string name = scene_name(s);
    const Magnification mag = (mix_seed(spec.seed, 0x3a6u, static_cast<std::uint64_t>(s)) & 1u) ? Magnification::x10
                                                                                                : Magnification::x40;
    const std::string clean_id = name + "_clean";
    write_png(out_dir / "clean" / (name + ".png"), scene.clean);
    m.records.push_back({clean_id, std::filesystem::path("clean") / (name + ".png"), Domain::clean, std::nullopt, mag,
                         name, std::nullopt, std::nullopt});
    for (std::size_t k = 0; k < spec.classes.size(); ++k) {
      const std::string file = name + "_" + std::to_string(spec.classes[k]) + ".png";
      write_png(out_dir / "artifact" / file, scene.artifacts[k]);
      write_png(out_dir / "masks" / file, scene.masks[k]);
      m.records.push_back({name + "_c" + std::to_string(spec.classes[k]), std::filesystem::path("artifact") / file,
                           Domain::artifact, spec.classes[k], mag, name, std::nullopt, clean_id});
    }
  }
  validate(m, true);
  save_manifest(m, out_dir / "manifest.txt");
  return m;
}

std::filesystem::path mask_path_for(const Manifest& m, const TileRecord& r) {
  if (r.domain != Domain::artifact) return {};
  const auto image = m.resolve(r);
  if (image.parent_path().filename() != "artifact") return {};
  auto mask = image.parent_path().parent_path() / "masks" / image.filename();
  return std::filesystem::exists(mask) ? mask : std::filesystem::path{};
}

}  // namespace histoclean::data
