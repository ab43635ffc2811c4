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

#include "histoclean/networks.hpp"

#include <cmath>
#include <cstring>
#include <numbers>

namespace histoclean::nets {
namespace {

using ops::Padding;
using ops::Window;

const Window kConv1x1 = Window::square(1, 1, 0, Padding::zero);

std::uint64_t fnv(std::uint64_t h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

Tensor init_weight(Initializer& init, InitScheme scheme, Shape shape, std::int64_t fan_in) {
  if (scheme == InitScheme::gan_normal) return init.normal(std::move(shape), 0.02f);
  return init.uniform(std::move(shape), 1.0f / std::sqrt(static_cast<float>(fan_in)));
}

}  // namespace

Var Parameters::add(std::string name, Tensor value) {
  Var v = Var::parameter(std::move(value));
  items_.emplace_back(std::move(name), v);
  return v;
}

std::size_t Parameters::count() const {
  std::size_t n = 0;
  for (const auto& [name, v] : items_) n += v.value().size();
  return n;
}

void Parameters::set_trainable(bool on) {
  for (auto& [name, v] : items_) v.set_requires_grad(on);
}

void Parameters::zero_grad() {
  for (auto& [name, v] : items_) v.zero_grad();
}

std::uint64_t Parameters::fingerprint() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& [name, v] : items_) {
    h = fnv(h, name.data(), name.size());
    for (auto d : v.shape()) h = fnv(h, &d, sizeof d);
    h = fnv(h, v.value().data(), v.value().size() * sizeof(float));
  }
  return h;
}

Tensor Initializer::normal(Shape shape, float stddev) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); i += 2) {
    const double u1 = (static_cast<double>(rng_() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    t[i] = static_cast<float>(stddev * r * std::cos(2.0 * std::numbers::pi * u2));
    if (i + 1 < t.size()) t[i + 1] = static_cast<float>(stddev * r * std::sin(2.0 * std::numbers::pi * u2));
  }
  return t;
}

Tensor Initializer::uniform(Shape shape, float bound) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) {
    v = static_cast<float>((2.0 * static_cast<double>(rng_() >> 11) * 0x1.0p-53 - 1.0) * bound);
  }
  return t;
}

Conv make_conv(Parameters& p, Initializer& init, InitScheme scheme, const std::string& name, int in, int out,
               Window win) {
  const std::int64_t fan_in = std::int64_t{win.kernel_h} * win.kernel_w * in;
  Conv c;
  c.weight = p.add(name + ".weight", init_weight(init, scheme, {fan_in, out}, fan_in));
  c.bias = p.add(name + ".bias", Tensor({out}));
  c.window = win;
  return c;
}

ConvTranspose make_conv_transpose(Parameters& p, Initializer& init, InitScheme scheme, const std::string& name,
                                  int in, int out, int kernel, int stride, int pad) {
  ConvTranspose c;
  const std::int64_t fan_in = std::int64_t{in} * kernel * kernel;
  c.weight = p.add(name + ".weight", init_weight(init, scheme, {in, std::int64_t{kernel} * kernel * out}, fan_in));
  c.bias = p.add(name + ".bias", Tensor({out}));
  c.window = Window::square(kernel, stride, pad, Padding::zero);
  return c;
}

std::string to_string(Arch a) { return a == Arch::unet ? "unet" : "attention_unet"; }

Arch parse_arch(const std::string& s) {
  if (s == "unet") return Arch::unet;
  if (s == "attention_unet") return Arch::attention_unet;
  throw Error("unknown generator arch '" + s + "'");
}

int GeneratorSpec::channels_at(int level) const { return base_width << std::min(level, 3); }

void GeneratorSpec::validate() const {
  if (in_channels != 3 && in_channels != 4 && in_channels != 3 + kNumClasses) {
    throw ShapeError("generator in_channels must be 3, 4 or 10, got " + std::to_string(in_channels));
  }
  if (base_width < 2 || depth < 1 || depth > 8) throw ShapeError("invalid generator width/depth");
}

Generator::Generator(GeneratorSpec spec, std::uint64_t seed, const std::string& name) : spec_(spec) {
  spec_.validate();
  Initializer init(seed);
  const auto scheme = InitScheme::gan_normal;
  stem_ = make_conv(params_, init, scheme, name + ".stem", spec_.in_channels, spec_.channels_at(0),
                    Window::square(3, 1, 1));
  for (int i = 1; i <= spec_.depth; ++i) {
    down_.push_back(make_conv(params_, init, scheme, name + ".down" + std::to_string(i), spec_.channels_at(i - 1),
                              spec_.channels_at(i), Window::square(4, 2, 1)));
  }
  for (int i = spec_.depth; i >= 1; --i) {
    const int in = i == spec_.depth ? spec_.channels_at(i) : 2 * spec_.channels_at(i);
    const int out = spec_.channels_at(i - 1);
    up_.push_back(make_conv_transpose(params_, init, scheme, name + ".up" + std::to_string(i), in, out, 4, 2, 1));
    if (spec_.arch == Arch::attention_unet) {
      const int inter = std::max(1, out / 2);
      const std::string g = name + ".gate" + std::to_string(i);
      gates_.push_back({make_conv(params_, init, scheme, g + ".skip", out, inter, kConv1x1),
                        make_conv(params_, init, scheme, g + ".gating", out, inter, kConv1x1),
                        make_conv(params_, init, scheme, g + ".psi", inter, 1, kConv1x1)});
    }
  }
  fuse_ = make_conv(params_, init, scheme, name + ".fuse", 2 * spec_.channels_at(0), spec_.channels_at(0),
                    Window::square(3, 1, 1));
  if (spec_.output_head) {
    head_ = make_conv(params_, init, scheme, name + ".head", spec_.channels_at(0), 3, Window::square(3, 1, 1));
  }
}

Var Generator::features(const Var& x) const {
  const Tensor& in = x.value();
  require_nhwc(in, spec_.in_channels, "generator");
  const std::int64_t m = std::int64_t{1} << spec_.depth;
  if (in.height() % m != 0 || in.width() % m != 0) {
    throw ShapeError("generator input " + std::to_string(in.height()) + "x" + std::to_string(in.width()) +
                     " is not divisible by " + std::to_string(m));
  }
  std::vector<Var> skips;
  Var h = ops::leaky_relu(ops::instance_norm(stem_(x)), 0.2f);
  skips.push_back(h);
  for (int i = 0; i < spec_.depth; ++i) {
    h = down_[i](h);
    // The innermost level may be 1x1, where instance norm would zero it.
    if (i + 1 < spec_.depth) h = ops::instance_norm(h);
    h = ops::leaky_relu(h, 0.2f);
    skips.push_back(h);
  }
  Var u = skips.back();
  for (int k = 0; k < spec_.depth; ++k) {
    const int level = spec_.depth - 1 - k;
    Var t = ops::relu(ops::instance_norm(up_[k](u)));
    Var s = skips[level];
    if (spec_.arch == Arch::attention_unet) {
      const Gate& g = gates_[k];
      Var a = ops::relu(ops::add(g.skip(s), g.gating(t)));
      s = ops::mul_broadcast_channels(s, ops::sigmoid(g.psi(a)));
    }
    u = ops::concat_channels({t, s});
  }
  return ops::relu(ops::instance_norm(fuse_(u)));
}

GeneratorOutput Generator::forward(const Var& x) const {
  GeneratorOutput out;
  out.penultimate = features(x);
  if (spec_.output_head) out.image = ops::tanh(head_(out.penultimate));
  return out;
}

void DiscriminatorSpec::validate() const {
  if (in_channels != 3 && in_channels != 3 + kNumClasses) {
    throw ShapeError("discriminator in_channels must be 3 or 10, got " + std::to_string(in_channels));
  }
  if (widths.size() != 4) throw ShapeError("discriminator needs four widths");
  for (int w : widths) {
    if (w < 1) throw ShapeError("discriminator widths must be positive");
  }
}

Discriminator::Discriminator(DiscriminatorSpec spec, std::uint64_t seed, const std::string& name)
    : spec_(std::move(spec)) {
  spec_.validate();
  Initializer init(seed);
  const auto scheme = InitScheme::gan_normal;
  int in = spec_.in_channels;
  for (int i = 0; i < 4; ++i) {
    const int stride = i < 3 ? 2 : 1;
    layers_.push_back(make_conv(params_, init, scheme, name + ".conv" + std::to_string(i), in, spec_.widths[i],
                                Window::square(4, stride, 1)));
    in = spec_.widths[i];
  }
  layers_.push_back(make_conv(params_, init, scheme, name + ".score", in, 1, Window::square(4, 1, 1)));
}

Var Discriminator::operator()(const Var& x) const {
  require_nhwc(x.value(), spec_.in_channels, "discriminator");
  Var h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i](h);
    if (i + 1 == layers_.size()) break;
    if (i > 0) h = ops::instance_norm(h);
    h = ops::leaky_relu(h, 0.2f);
  }
  return h;
}

std::int64_t Discriminator::output_size(std::int64_t in) {
  std::int64_t s = in;
  for (int i = 0; i < 3; ++i) s = (s + 2 - 4) / 2 + 1;
  for (int i = 0; i < 2; ++i) s = s + 2 - 4 + 1;
  return s;
}

AttentionHead::AttentionHead(int features, std::uint64_t seed, const std::string& name, int hidden)
    : features_(features) {
  if (features < 1) throw ShapeError("attention head needs a positive feature width");
  if (hidden <= 0) hidden = std::max(1, features / 2);
  Initializer init(seed);
  hidden_ = make_conv(params_, init, InitScheme::fan_in_uniform, name + ".hidden", features, hidden, kConv1x1);
  out_ = make_conv(params_, init, InitScheme::fan_in_uniform, name + ".out", hidden, 1, kConv1x1);
}

Var AttentionHead::operator()(const Var& g) const {
  require_nhwc(g.value(), features_, "attention head");
  return ops::sigmoid(out_(ops::relu(hidden_(g))));
}

RgbProjector::RgbProjector(int features, std::uint64_t seed, const std::string& name) : features_(features) {
  if (features < 1) throw ShapeError("RGB projector needs a positive feature width");
  Initializer init(seed);
  proj_ = make_conv(params_, init, InitScheme::fan_in_uniform, name + ".proj", features, 3, kConv1x1);
}

Var RgbProjector::operator()(const Var& g) const {
  require_nhwc(g.value(), features_, "RGB projector");
  return ops::tanh(proj_(g));
}

Classifier::Classifier(std::uint64_t seed, const std::string& name, std::vector<int> widths) {
  Initializer init(seed);
  int in = 3;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    convs_.push_back(make_conv(params_, init, InitScheme::fan_in_uniform, name + ".conv" + std::to_string(i), in,
                               widths[i], Window::square(4, 2, 1)));
    in = widths[i];
  }
  fc_w_ = params_.add(name + ".fc.weight", init.uniform({in, kNumClasses}, 1.0f / std::sqrt(static_cast<float>(in))));
  fc_b_ = params_.add(name + ".fc.bias", Tensor({kNumClasses}));
}

Var Classifier::operator()(const Var& image, const Var& mask) const {
  require_nhwc(image.value(), 3, "classifier image");
  Var h = ops::mul_broadcast_channels(image, mask);
  for (const auto& c : convs_) h = ops::leaky_relu(c(h), 0.2f);
  return ops::linear(ops::global_avg_pool(h), fc_w_, fc_b_);
}

Tensor encode_condition(int label, std::int64_t height, std::int64_t width) {
  const int labels[] = {label};
  return encode_conditions(labels, height, width);
}

Tensor encode_conditions(std::span<const int> labels, std::int64_t height, std::int64_t width) {
  const auto n = static_cast<std::int64_t>(labels.size());
  Tensor t({n, height, width, kNumClasses});
  for (std::int64_t b = 0; b < n; ++b) {
    const int label = labels[static_cast<std::size_t>(b)];
    if (label < 0 || label >= kNumClasses) {
      throw ShapeError("condition label " + std::to_string(label) + " outside [0, 6]");
    }
    for (std::int64_t p = 0; p < height * width; ++p) t[static_cast<std::size_t>((b * height * width + p) * kNumClasses + label)] = 1.0f;
  }
  return t;
}

}  // namespace histoclean::nets
