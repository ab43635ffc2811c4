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

#include "histoclean/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "histoclean/ops.hpp"

namespace histoclean::train {
namespace {

using json = nlohmann::json;

// Stream tags for seed derivation.
enum : std::uint64_t { kSeedGab = 1, kSeedGba, kSeedDa, kSeedDb, kSeedAlpha, kSeedProj, kSeedCls, kSeedRng, kSeedData };

struct VariantName {
  Variant v;
  const char* name;
};
constexpr VariantName kVariants[] = {{Variant::base, "base"},     {Variant::dpa, "dpa"},   {Variant::cond, "cond"},
                                     {Variant::no_aba, "no_aba"}, {Variant::attn, "attn"}, {Variant::ws, "ws"}};

// Standard normal from raw generator bits (portable across standard libraries).
float standard_normal(std::mt19937_64& rng) {
  constexpr double kTwoPi = 6.283185307179586;
  const double u1 = (static_cast<double>(rng() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
  const double u2 = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return static_cast<float>(std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2));
}

bool all_finite(const Tensor& t) {
  for (float v : t.values()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

data::Manifest training_subset(const data::Manifest& m) {
  for (const auto& r : m.records) {
    if (r.split) return m.subset(data::Split::train);
  }
  return m;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string to_string(Variant v) {
  for (const auto& e : kVariants) {
    if (e.v == v) return e.name;
  }
  throw TrainError("unknown variant");
}

Variant parse_variant(const std::string& s) {
  for (const auto& e : kVariants) {
    if (s == e.name) return e.v;
  }
  throw TrainError("unknown variant '" + s + "' (expected base, dpa, cond, no_aba, attn or ws)");
}

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> kAll = {Variant::base,   Variant::dpa,  Variant::cond,
                                            Variant::no_aba, Variant::attn, Variant::ws};
  return kAll;
}

nets::Arch TrainConfig::generator_arch() const {
  if (arch) return *arch;
  return variant == Variant::dpa ? nets::Arch::attention_unet : nets::Arch::unet;
}

losses::LossWeights TrainConfig::effective_weights() const {
  losses::LossWeights w = weights;
  if (variant == Variant::no_aba) w.aba = 0.0;
  return w;
}

void TrainConfig::validate() const {
  weights.validate();
  if (!(lr > 0.0) || !(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw TrainError("invalid optimizer settings");
  }
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw TrainError("lr_decay must lie in (0, 1]");
  if (epochs < 0) throw TrainError("epochs must be >= 0");
  if (batch_size < 1) throw TrainError("batch_size must be >= 1");
  if (!(weight_decay >= 0.0)) throw TrainError("weight_decay must be >= 0");
  if (!(real_label > 0.0 && real_label <= 1.0)) throw TrainError("real_label must lie in (0, 1]");
  if (!(d_loss_factor > 0.0) || !std::isfinite(d_loss_factor)) throw TrainError("d_loss_factor must be positive");
  if (base_width < 1 || depth < 1) throw TrainError("generator width and depth must be positive");
  if (image_pool < 0) throw TrainError("image_pool must be >= 0");
  if (workers < 1) throw TrainError("workers must be >= 1");
  const int m = 1 << depth;
  if (augment.out_size % m != 0) {
    throw TrainError("augment out_size " + std::to_string(augment.out_size) + " must be divisible by 2^depth = " +
                     std::to_string(m));
  }
  if (nets::Discriminator::output_size(augment.out_size) < 1) {
    throw TrainError("out_size " + std::to_string(augment.out_size) + " leaves no discriminator output");
  }
}

std::string TrainConfig::to_json() const {
  json j;
  j["variant"] = train::to_string(variant);
  j["weights"] = {{"aba", weights.aba},   {"bab", weights.bab},       {"id_a", weights.id_a},
                  {"id_b", weights.id_b}, {"cls", weights.cls},       {"smooth", weights.smooth},
                  {"sparse", weights.sparse}};
  j["lr"] = lr;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["lr_decay"] = lr_decay;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["weight_decay"] = weight_decay;
  j["real_label"] = real_label;
  j["d_loss_factor"] = d_loss_factor;
  j["seed"] = seed;
  j["augment"] = {{"flip_h_prob", augment.flip_h_prob},
                  {"flip_v_prob", augment.flip_v_prob},
                  {"crop_size", augment.crop_size},
                  {"out_size", augment.out_size}};
  j["arch"] = nets::to_string(generator_arch());
  j["base_width"] = base_width;
  j["depth"] = depth;
  j["disc_widths"] = disc_widths;
  j["classifier_widths"] = classifier_widths;
  j["image_pool"] = image_pool;
  j["deterministic"] = deterministic;
  j["workers"] = workers;
  return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  TrainConfig c;
  try {
    const json j = json::parse(text);
    c.variant = parse_variant(j.at("variant").get<std::string>());
    const auto& w = j.at("weights");
    c.weights = {w.at("aba"), w.at("bab"), w.at("id_a"), w.at("id_b"), w.at("cls"), w.at("smooth"), w.at("sparse")};
    c.lr = j.at("lr");
    c.beta1 = j.at("beta1");
    c.beta2 = j.at("beta2");
    c.lr_decay = j.at("lr_decay");
    c.epochs = j.at("epochs");
    c.batch_size = j.at("batch_size");
    c.weight_decay = j.at("weight_decay");
    c.real_label = j.at("real_label");
    c.d_loss_factor = j.at("d_loss_factor");
    c.seed = j.at("seed");
    const auto& a = j.at("augment");
    c.augment = {a.at("flip_h_prob"), a.at("flip_v_prob"), a.at("crop_size"), a.at("out_size")};
    c.arch = nets::parse_arch(j.at("arch").get<std::string>());
    c.base_width = j.at("base_width");
    c.depth = j.at("depth");
    c.disc_widths = j.at("disc_widths").get<std::vector<int>>();
    c.classifier_widths = j.at("classifier_widths").get<std::vector<int>>();
    c.image_pool = j.at("image_pool");
    c.deterministic = j.at("deterministic");
    c.workers = j.at("workers");
  } catch (const json::exception& e) {
    throw TrainError(std::string("malformed training config: ") + e.what());
  }
  return c;
}

double lr_schedule(const TrainConfig& cfg, int epoch) {
  if (epoch < 0) throw TrainError("lr_schedule: epoch must be >= 0");
  return cfg.lr * std::pow(cfg.lr_decay, epoch);
}

// ---------------------------------------------------------------------------
// Model

namespace {

nets::GeneratorSpec g_ab_spec(const TrainConfig& c) {
  return {c.generator_arch(), 3, c.base_width, c.depth, !c.uses_attention()};
}

nets::GeneratorSpec g_ba_spec(const TrainConfig& c) {
  const int in = c.variant == Variant::cond ? 3 + nets::kNumClasses : c.uses_attention() ? 4 : 3;
  return {c.generator_arch(), in, c.base_width, c.depth, true};
}

nets::DiscriminatorSpec d_spec(const TrainConfig& c, bool conditioned) {
  return {conditioned ? 3 + nets::kNumClasses : 3, c.disc_widths};
}

}  // namespace

CycleGanModel::CycleGanModel(const TrainConfig& cfg)
    : g_ab(g_ab_spec(cfg), data::mix_seed(cfg.seed, kSeedGab), "g_ab"),
      g_ba(g_ba_spec(cfg), data::mix_seed(cfg.seed, kSeedGba), "g_ba"),
      d_a(d_spec(cfg, cfg.variant == Variant::cond), data::mix_seed(cfg.seed, kSeedDa), "d_a"),
      d_b(d_spec(cfg, false), data::mix_seed(cfg.seed, kSeedDb), "d_b"),
      variant_(cfg.variant) {
  if (cfg.uses_attention()) {
    alpha.emplace(cfg.base_width, data::mix_seed(cfg.seed, kSeedAlpha), "alpha");
    proj.emplace(cfg.base_width, data::mix_seed(cfg.seed, kSeedProj), "proj_rgb");
  }
  if (cfg.variant == Variant::ws) {
    classifier.emplace(data::mix_seed(cfg.seed, kSeedCls), "classifier", cfg.classifier_widths);
  }
}

std::vector<nets::Parameters*> CycleGanModel::generator_side() {
  std::vector<nets::Parameters*> out{&g_ab.params(), &g_ba.params()};
  if (alpha) out.push_back(&alpha->params());
  if (proj) out.push_back(&proj->params());
  if (classifier) out.push_back(&classifier->params());
  return out;
}

std::vector<nets::Parameters*> CycleGanModel::discriminator_side() { return {&d_a.params(), &d_b.params()}; }

std::vector<std::pair<std::string, Var>> CycleGanModel::named(const std::vector<nets::Parameters*>& groups) const {
  std::vector<std::pair<std::string, Var>> out;
  for (const auto* g : groups) {
    for (const auto& item : g->items()) out.push_back(item);
  }
  return out;
}

std::vector<std::pair<std::string, Tensor>> CycleGanModel::state() const {
  auto* self = const_cast<CycleGanModel*>(this);
  auto groups = self->generator_side();
  for (auto* d : self->discriminator_side()) groups.push_back(d);
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& [name, v] : named(groups)) out.emplace_back(name, v.value());
  return out;
}

void CycleGanModel::load_state(const CheckpointFile& ckpt) {
  auto groups = generator_side();
  for (auto* d : discriminator_side()) groups.push_back(d);
  for (auto& [name, v] : named(groups)) {
    const Tensor& t = ckpt.array(name);
    if (t.shape() != v.shape()) {
      throw CheckpointError("parameter '" + name + "' has shape " + histoclean::to_string(t.shape()) + " in checkpoint, expected " +
                            histoclean::to_string(v.shape()));
    }
    v.mutable_value() = t;
  }
}

std::uint64_t CycleGanModel::fingerprint() const {
  std::uint64_t h = 0;
  auto* self = const_cast<CycleGanModel*>(this);
  auto groups = self->generator_side();
  for (auto* d : self->discriminator_side()) groups.push_back(d);
  for (const auto* g : groups) h = data::mix_seed(h, g->fingerprint());
  return h;
}

CycleGanModel::Translation CycleGanModel::translate_ab(const Var& a) const {
  Translation t;
  if (alpha) {
    const Var g = g_ab.features(a);
    t.image = (*proj)(g);
    t.mask = (*alpha)(g);
  } else {
    t.image = g_ab.forward(a).image;
  }
  return t;
}

CycleGanModel::Cleaned CycleGanModel::clean(const Tensor& a) const {
  NoGradGuard no_grad;
  constexpr std::int64_t kChunk = 16;
  std::vector<Tensor> images, masks;
  for (std::int64_t i = 0; i < a.batch(); i += kChunk) {
    const Tensor part = a.slice_batch(i, std::min(kChunk, a.batch() - i));
    auto t = translate_ab(Var::constant(part));
    images.push_back(t.image.value());
    if (t.mask) masks.push_back(t.mask.value());
  }
  Cleaned out;
  out.image = concat_batch(images);
  if (!masks.empty()) out.mask = concat_batch(masks);
  return out;
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(TrainConfig cfg)
    : cfg_((cfg.validate(), std::move(cfg))),
      model_(cfg_),
      opt_g_(model_.named(model_.generator_side()), {cfg_.lr, cfg_.beta1, cfg_.beta2, 1e-8, cfg_.weight_decay}),
      opt_d_(model_.named(model_.discriminator_side()), {cfg_.lr, cfg_.beta1, cfg_.beta2, 1e-8, cfg_.weight_decay}),
      rng_(data::mix_seed(cfg_.seed, kSeedRng)) {}

void Trainer::begin_epoch(int epoch) {
  const double lr = lr_schedule(cfg_, epoch - 1);
  opt_g_.set_lr(lr);
  opt_d_.set_lr(lr);
}

void Trainer::check_batch(const data::Batch& batch) const {
  const Tensor& a = batch.images_a;
  const Tensor& b = batch.images_b;
  if (a.empty() || b.empty() || a.batch() == 0 || b.batch() == 0) throw TrainError("batch has an empty domain");
  require_nhwc(a, 3, "images_a");
  require_nhwc(b, 3, "images_b");
  if (cfg_.needs_labels()) {
    bool ok = static_cast<std::int64_t>(batch.labels_a.size()) == a.batch();
    for (int y : batch.labels_a) ok = ok && y >= 0 && y < nets::kNumClasses;
    if (!ok) throw TrainError("variant " + to_string(cfg_.variant) + " requires a class label for every artifact sample");
  }
}

Var Trainer::noise_channel(const Shape& like) {
  Tensor t({like[0], like[1], like[2], 1});
  for (float& v : t.values()) v = standard_normal(rng_);
  return Var::constant(std::move(t));
}

Var Trainer::g_ba_input(const Var& image, const Var& attention, const std::vector<int>& labels) {
  Var in = image;
  if (cfg_.variant == Variant::cond) {
    const Tensor& v = image.value();
    in = ops::concat_channels({image, Var::constant(nets::encode_conditions(labels, v.height(), v.width()))});
  } else if (cfg_.uses_attention()) {
    in = ops::concat_channels({attention ? attention : noise_channel(image.shape()), image});
  }
  probe_.g_ba_in_channels.push_back(in.value().channels());
  return in;
}

Var Trainer::d_a_input(const Var& image, const std::vector<int>& labels) {
  Var in = image;
  if (cfg_.variant == Variant::cond) {
    const Tensor& v = image.value();
    in = ops::concat_channels({image, Var::constant(nets::encode_conditions(labels, v.height(), v.width()))});
  }
  probe_.d_a_in_channels.push_back(in.value().channels());
  return in;
}

GeneratorGraph Trainer::generator_graph(const data::Batch& batch) {
  check_batch(batch);
  const Var a = Var::constant(batch.images_a);
  const Var b = Var::constant(batch.images_b);
  const std::vector<int>& y = batch.labels_a;
  GeneratorGraph gg;
  auto& c = gg.components;

  // Uniformly sampled condition for B -> A, where no artifact class exists.
  std::vector<int> y_sampled;
  if (cfg_.variant == Variant::cond) {
    for (std::int64_t i = 0; i < b.value().batch(); ++i) y_sampled.push_back(static_cast<int>(rng_() % nets::kNumClasses));
  }

  // A -> B -> A
  const auto ab = model_.translate_ab(a);
  if (ab.mask) {
    const Tensor& m = ab.mask.value();
    probe_.attention_shape = m.shape();
    const auto [lo, hi] = std::minmax_element(m.values().begin(), m.values().end());
    probe_.attention_min = *lo;
    probe_.attention_max = *hi;
  }
  const Var rec_a = model_.g_ba.forward(g_ba_input(ab.image, ab.mask, y)).image;

  // B -> A -> B
  const Var fake_a = model_.g_ba.forward(g_ba_input(b, Var(), y_sampled)).image;
  const Var rec_b = model_.translate_ab(fake_a).image;

  // Identity mappings
  const Var idt_a = model_.g_ba.forward(g_ba_input(a, Var(), y)).image;
  const Var idt_b = model_.translate_ab(b).image;

  const Var score_b = model_.d_b(ab.image);
  const Var score_a = model_.d_a(d_a_input(fake_a, y_sampled));
  probe_.d_b_out = score_b.shape();
  probe_.d_a_out = score_a.shape();
  c["g_adv_ab"] = losses::lsgan_generator_loss(score_b);
  c["g_adv_ba"] = losses::lsgan_generator_loss(score_a);
  c["cyc_aba"] = losses::cycle_loss(rec_a, a);
  c["cyc_bab"] = losses::cycle_loss(rec_b, b);
  c["id_a"] = losses::identity_loss(idt_a, a);
  c["id_b"] = losses::identity_loss(idt_b, b);

  const auto w = cfg_.effective_weights();
  std::vector<std::pair<std::string, double>> terms;
  if (cfg_.variant == Variant::ws) {
    c["cls"] = losses::classification_loss((*model_.classifier)(a, ab.mask), y);
    c["smooth"] = losses::smoothness_loss(ab.mask);
    c["sparse"] = losses::sparsity_loss(ab.mask);
    terms = losses::ws_terms(w);
  } else {
    terms = losses::base_terms(w);
  }
  std::vector<std::pair<Var, double>> weighted;
  for (const auto& [name, weight] : terms) weighted.emplace_back(c.at(name), weight);
  gg.total = ops::weighted_sum(weighted);

  gg.fake_b = ab.image.detach();
  gg.fake_a = fake_a.detach();
  gg.fake_a_labels = y_sampled;
  return gg;
}

std::pair<Tensor, std::vector<int>> Trainer::pool_query(int which, const Tensor& fakes, const std::vector<int>& labels) {
  if (cfg_.image_pool == 0) return {fakes, labels};
  auto& images = pool_images_[which];
  auto& pl = pool_labels_[which];
  std::vector<Tensor> out;
  std::vector<int> out_labels;
  for (std::int64_t i = 0; i < fakes.batch(); ++i) {
    Tensor img = fakes.slice_batch(i, 1);
    int label = labels.empty() ? -1 : labels[i];
    if (static_cast<int>(images.size()) < cfg_.image_pool) {
      images.push_back(img);
      pl.push_back(label);
    } else if (rng_() & 1) {
      const auto k = static_cast<std::size_t>(rng_() % images.size());
      std::swap(images[k], img);
      std::swap(pl[k], label);
    }
    out.push_back(std::move(img));
    out_labels.push_back(label);
  }
  if (labels.empty()) out_labels.clear();
  return {concat_batch(out), out_labels};
}

std::map<std::string, Var> Trainer::discriminator_graph(const data::Batch& batch, const GeneratorGraph& g) {
  const Var a = Var::constant(batch.images_a);
  const Var b = Var::constant(batch.images_b);
  const auto real = static_cast<float>(cfg_.real_label);
  const Tensor fb = pool_query(0, g.fake_b.value(), {}).first;
  const auto [fa, fa_labels] = pool_query(1, g.fake_a.value(), g.fake_a_labels);
  std::map<std::string, Var> c;
  const Var real_b = model_.d_b(b), fake_b = model_.d_b(Var::constant(fb));
  const Var real_a = model_.d_a(d_a_input(a, batch.labels_a));
  const Var fake_a = model_.d_a(d_a_input(Var::constant(fa), fa_labels));
  probe_.d_b_out = fake_b.shape();
  probe_.d_a_out = fake_a.shape();
  c["d_b"] = losses::lsgan_discriminator_loss(real_b, fake_b, real);
  c["d_a"] = losses::lsgan_discriminator_loss(real_a, fake_a, real);
  if (cfg_.d_loss_factor != 0.5) {
    // The kernel carries the conventional 1/2; rescale to the configured factor.
    for (const char* k : {"d_a", "d_b"}) c[k] = ops::weighted_sum({{c[k], cfg_.d_loss_factor / 0.5}});
  }
  c["total_d"] = ops::weighted_sum({{c["d_a"], 1.0}, {c["d_b"], 1.0}});
  return c;
}

StepMetrics Trainer::step(const data::Batch& batch, int epoch, int step) {
  const auto t0 = std::chrono::steady_clock::now();
  probe_ = {};
  StepMetrics m;
  m.epoch = epoch;
  m.step = step;
  m.lr = opt_g_.lr();
  auto& report = m.losses;
  for (const auto& name : losses::LossReport::names()) report.set(name, 0.0);

  auto fail_if_nonfinite = [&](const std::string& name, const Var& v) {
    if (!all_finite(v.value())) {
      throw TrainError("non-finite loss component '" + name + "' at epoch " + std::to_string(epoch) + " step " +
                       std::to_string(step));
    }
  };

  auto side_hash = [](const std::vector<nets::Parameters*>& groups) {
    std::uint64_t h = 0;
    for (const auto* g : groups) h = data::mix_seed(h, g->fingerprint());
    return h;
  };

  // (1) generator side, discriminators frozen
  if (audit_) probe_.d_before_g = side_hash(model_.discriminator_side());
  for (auto* p : model_.discriminator_side()) p->set_trainable(false);
  for (auto* p : model_.generator_side()) p->set_trainable(true);
  opt_g_.zero_grad();
  GeneratorGraph gg = generator_graph(batch);
  for (const auto& [name, v] : gg.components) {
    fail_if_nonfinite(name, v);
    report.set(name, v.value().data()[0]);
  }
  fail_if_nonfinite("total_g", gg.total);
  backward(gg.total);
  gg.components.clear();
  gg.total = Var();
  opt_g_.step();
  if (audit_) {
    probe_.d_after_g = side_hash(model_.discriminator_side());
    probe_.g_before_d = side_hash(model_.generator_side());
  }

  // (2) discriminators, generators frozen (their outputs are detached)
  for (auto* p : model_.generator_side()) p->set_trainable(false);
  for (auto* p : model_.discriminator_side()) p->set_trainable(true);
  opt_d_.zero_grad();
  auto dc = discriminator_graph(batch, gg);
  for (const auto& [name, v] : dc) fail_if_nonfinite(name, v);
  report.set("d_a", dc["d_a"].value().data()[0]);
  report.set("d_b", dc["d_b"].value().data()[0]);
  backward(dc["total_d"]);
  opt_d_.step();
  if (audit_) probe_.g_after_d = side_hash(model_.generator_side());
  for (auto* p : model_.generator_side()) p->set_trainable(true);

  const auto w = cfg_.effective_weights();
  const auto totals = cfg_.variant == Variant::ws ? losses::compose_ws(report, w) : losses::compose_base(report, w);
  report.set("total_g", totals.total_g);
  report.set("total_d", totals.total_d);
  if (!cfg_.deterministic) {
    m.wall_clock = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  return m;
}

CheckpointFile Trainer::snapshot(int epoch) const {
  CheckpointFile ck;
  ck.config_json = cfg_.to_json();
  ck.epoch = epoch;
  std::ostringstream rs;
  rs << rng_;
  ck.rng_state = rs.str();
  ck.arrays = model_.state();
  for (const auto& [name, t] : opt_g_.state()) ck.arrays.emplace_back("opt_g/" + name, t);
  for (const auto& [name, t] : opt_d_.state()) ck.arrays.emplace_back("opt_d/" + name, t);
  ck.counters["opt_g.steps"] = opt_g_.steps();
  ck.counters["opt_d.steps"] = opt_d_.steps();
  for (int k = 0; k < 2; ++k) {
    const std::string p = "pool" + std::to_string(k);
    ck.counters[p + ".size"] = static_cast<std::int64_t>(pool_images_[k].size());
    for (std::size_t i = 0; i < pool_images_[k].size(); ++i) {
      ck.arrays.emplace_back(p + "/" + std::to_string(i), pool_images_[k][i]);
      ck.counters[p + ".label." + std::to_string(i)] = pool_labels_[k][i];
    }
  }
  return ck;
}

void Trainer::restore(const CheckpointFile& ck) {
  model_.load_state(ck);
  std::vector<std::pair<std::string, Tensor>> g, d;
  for (const auto& [name, t] : ck.arrays) {
    if (name.rfind("opt_g/", 0) == 0) g.emplace_back(name.substr(6), t);
    if (name.rfind("opt_d/", 0) == 0) d.emplace_back(name.substr(6), t);
  }
  auto counter = [&](const std::string& k) {
    auto it = ck.counters.find(k);
    if (it == ck.counters.end()) throw CheckpointError("checkpoint lacks counter '" + k + "'");
    return it->second;
  };
  opt_g_.load_state(g, counter("opt_g.steps"));
  opt_d_.load_state(d, counter("opt_d.steps"));
  std::istringstream rs(ck.rng_state);
  rs >> rng_;
  if (!rs) throw CheckpointError("checkpoint random state is unreadable");
  for (int k = 0; k < 2; ++k) {
    const std::string p = "pool" + std::to_string(k);
    pool_images_[k].clear();
    pool_labels_[k].clear();
    const auto n = counter(p + ".size");
    for (std::int64_t i = 0; i < n; ++i) {
      pool_images_[k].push_back(ck.array(p + "/" + std::to_string(i)));
      pool_labels_[k].push_back(static_cast<int>(counter(p + ".label." + std::to_string(i))));
    }
  }
}

// ---------------------------------------------------------------------------
// Runs

std::string metrics_header() {
  std::string h = "epoch,step,lr,wall_clock";
  for (const auto& n : losses::LossReport::names()) h += "," + n;
  return h;
}

std::string metrics_row(const StepMetrics& m) {
  std::string r = std::to_string(m.epoch) + "," + std::to_string(m.step) + "," + format_double(m.lr) + "," +
                  format_double(m.wall_clock);
  for (const auto& n : losses::LossReport::names()) r += "," + format_double(m.losses.get(n));
  return r;
}

namespace {

std::filesystem::path checkpoint_name(const std::filesystem::path& out_dir, int epoch) {
  return out_dir / ("ckpt_epoch_" + std::to_string(epoch) + ".bin");
}

void save_epoch(const Trainer& t, const std::filesystem::path& out_dir, int epoch, RunResult& result) {
  const auto path = checkpoint_name(out_dir, epoch);
  write_checkpoint(path, t.snapshot(epoch));
  const auto marker = out_dir / "latest";
  const auto tmp = out_dir / "latest.tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << path.filename().string() << "\n";
    if (!out) throw TrainError("cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, marker);
  result.last_checkpoint = path;
}

RunResult train_epochs(Trainer& t, const data::Manifest& manifest, const std::filesystem::path& out_dir,
                       int first_epoch, int last_epoch, std::ofstream& log, const Progress& progress) {
  RunResult result;
  result.epochs_completed = first_epoch - 1;
  if (first_epoch > last_epoch) return result;
  const auto& cfg = t.config();
  data::BatchStream stream(training_subset(manifest), cfg.batch_size, cfg.augment,
                           data::mix_seed(cfg.seed, kSeedData));
  constexpr int kPrefetch = 8;
  for (int epoch = first_epoch; epoch <= last_epoch; ++epoch) {
    t.begin_epoch(epoch);
    const int steps = stream.steps_per_epoch();
    for (int s0 = 0; s0 < steps; s0 += kPrefetch) {
      const int count = std::min(kPrefetch, steps - s0);
      auto batches = stream.prefetch(epoch - 1, s0, count, cfg.workers);
      for (int k = 0; k < count; ++k) {
        StepMetrics m = t.step(batches[k], epoch, s0 + k);
        log << metrics_row(m) << "\n";
        log.flush();
        if (progress) progress(m);
        result.metrics.push_back(std::move(m));
      }
    }
    save_epoch(t, out_dir, epoch, result);
    result.epochs_completed = epoch;
  }
  return result;
}

void require_both_domains(const data::Manifest& m) {
  const auto train = training_subset(m);
  if (train.count(data::Domain::artifact) == 0 || train.count(data::Domain::clean) == 0) {
    throw TrainError("training manifest must contain both artifact and clean tiles");
  }
}

json comparable_config(const std::string& text) {
  json j = json::parse(text);
  for (const char* k : {"epochs", "workers", "deterministic"}) j.erase(k);
  return j;
}

}  // namespace

RunResult run_training(const TrainConfig& cfg, const data::Manifest& train_manifest,
                       const std::filesystem::path& out_dir, const Progress& progress) {
  cfg.validate();
  require_both_domains(train_manifest);
  std::filesystem::create_directories(out_dir);
  Trainer t(cfg);
  RunResult init;
  save_epoch(t, out_dir, 0, init);
  std::ofstream log(out_dir / "metrics.csv", std::ios::trunc);
  if (!log) throw TrainError("cannot open metrics file in " + out_dir.string());
  log << metrics_header() << "\n";
  log.flush();
  RunResult r = train_epochs(t, train_manifest, out_dir, 1, cfg.epochs, log, progress);
  if (r.last_checkpoint.empty()) r.last_checkpoint = init.last_checkpoint;
  return r;
}

std::filesystem::path resolve_checkpoint(const std::filesystem::path& p) {
  namespace fs = std::filesystem;
  fs::path path = p;
  if (fs::is_directory(path)) path /= "latest";
  if (!fs::exists(path)) throw CheckpointError("checkpoint " + path.string() + " does not exist");
  std::ifstream in(path, std::ios::binary);
  char magic[8] = {};
  in.read(magic, sizeof magic);
  if (in && std::string(magic, 8) == "HCLNCKPT") return path;
  in.clear();
  in.seekg(0);
  std::string name;
  std::getline(in, name);
  while (!name.empty() && std::isspace(static_cast<unsigned char>(name.back()))) name.pop_back();
  if (name.empty()) throw CheckpointError(path.string() + " is neither a checkpoint nor a marker");
  const fs::path target = path.parent_path() / name;
  if (!fs::exists(target)) throw CheckpointError("marker " + path.string() + " points to missing " + target.string());
  return target;
}

RunResult resume(const std::filesystem::path& checkpoint, const data::Manifest& train_manifest,
                 const std::filesystem::path& out_dir, const std::optional<TrainConfig>& expected,
                 std::optional<int> epochs, const Progress& progress) {
  const CheckpointFile ck = read_checkpoint(resolve_checkpoint(checkpoint));
  TrainConfig cfg = TrainConfig::from_json(ck.config_json);
  if (expected) {
    if (comparable_config(expected->to_json()) != comparable_config(ck.config_json)) {
      throw TrainError("config mismatch: checkpoint was trained as variant " + to_string(cfg.variant) +
                       " with a different configuration than requested (variant " + to_string(expected->variant) + ")");
    }
    cfg.epochs = expected->epochs;
    cfg.deterministic = expected->deterministic;
    cfg.workers = expected->workers;
  }
  if (epochs) cfg.epochs = *epochs;
  require_both_domains(train_manifest);
  Trainer t(cfg);
  t.restore(ck);
  const int done = static_cast<int>(ck.epoch);

  // Keep the log consistent with the checkpoint: drop rows of later epochs.
  std::filesystem::create_directories(out_dir);
  const auto log_path = out_dir / "metrics.csv";
  std::vector<std::string> kept;
  if (std::ifstream in(log_path); in) {
    std::string line;
    while (std::getline(in, line)) {
      if (kept.empty()) {
        kept.push_back(line);
        continue;
      }
      if (std::stoi(line.substr(0, line.find(','))) <= done) kept.push_back(line);
    }
  }
  if (kept.empty()) kept.push_back(metrics_header());
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw TrainError("cannot open metrics file in " + out_dir.string());
  for (const auto& line : kept) log << line << "\n";
  log.flush();
  RunResult r = train_epochs(t, train_manifest, out_dir, done + 1, cfg.epochs, log, progress);
  if (r.last_checkpoint.empty()) r.last_checkpoint = resolve_checkpoint(checkpoint);
  return r;
}

LoadedModel load_model(const std::filesystem::path& checkpoint) {
  const CheckpointFile ck = read_checkpoint(resolve_checkpoint(checkpoint));
  LoadedModel lm;
  lm.config = TrainConfig::from_json(ck.config_json);
  lm.epoch = static_cast<int>(ck.epoch);
  lm.model = std::make_unique<CycleGanModel>(lm.config);
  lm.model->load_state(ck);
  return lm;
}

}  // namespace histoclean::train
