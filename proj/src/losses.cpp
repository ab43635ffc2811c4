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

#include "histoclean/losses.hpp"

namespace histoclean::losses {
namespace {

std::vector<double> widen(const Tensor& t) { return std::vector<double>(t.storage().begin(), t.storage().end()); }

// Wraps a double-precision kernel evaluation as a graph node. `grads[k]`
// holds d(loss)/d(input k) and is scaled by the incoming gradient.
Var scalar_node(double value, const std::vector<Var>& inputs, std::vector<std::vector<double>> grads) {
  return make_result(Tensor({1}, static_cast<float>(value)), inputs, [grads = std::move(grads)](Node& self) {
    const float upstream = self.grad[0];
    for (std::size_t k = 0; k < grads.size(); ++k) {
      Node* p = self.parents[k].get();
      if (!p || !p->requires_grad || grads[k].empty()) continue;
      float* g = p->grad_buffer().data();
      for (std::size_t i = 0; i < grads[k].size(); ++i) g[i] += static_cast<float>(grads[k][i]) * upstream;
    }
  });
}

Var l1(const Var& a, const Var& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw LossError(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  const auto av = widen(a.value()), bv = widen(b.value());
  std::vector<double> ga(av.size()), gb(bv.size());
  const double v = kernel::mean_abs_diff<double>(av, bv, ga, gb);
  return scalar_node(v, {a, b}, {std::move(ga), std::move(gb)});
}

}  // namespace

Var lsgan_discriminator_loss(const Var& real_scores, const Var& fake_scores, float real_target) {
  const auto r = widen(real_scores.value()), f = widen(fake_scores.value());
  std::vector<double> gr(r.size()), gf(f.size());
  const double v = kernel::lsgan_discriminator<double>(r, f, real_target, gr, gf);
  return scalar_node(v, {real_scores, fake_scores}, {std::move(gr), std::move(gf)});
}

Var lsgan_generator_loss(const Var& fake_scores) {
  const auto f = widen(fake_scores.value());
  std::vector<double> g(f.size());
  const double v = kernel::lsgan_generator<double>(f, g);
  return scalar_node(v, {fake_scores}, {std::move(g)});
}

Var cycle_loss(const Var& reconstructed, const Var& original) { return l1(reconstructed, original, "cycle_loss"); }

Var identity_loss(const Var& mapped, const Var& original) { return l1(mapped, original, "identity_loss"); }

Var classification_loss(const Var& logits, std::span<const int> labels) {
  const Tensor& t = logits.value();
  if (t.rank() != 2) throw LossError("classification_loss: logits must be (batch, classes)");
  const auto l = widen(t);
  std::vector<double> g(l.size());
  const double v = kernel::cross_entropy<double>(l, labels, static_cast<int>(t.dim(1)), g);
  return scalar_node(v, {logits}, {std::move(g)});
}

Var smoothness_loss(const Var& mask) {
  const Tensor& t = mask.value();
  require_nhwc(t, 1, "smoothness_loss");
  const auto m = widen(t);
  std::vector<double> g(m.size());
  const double v = kernel::total_variation<double>(m, static_cast<std::size_t>(t.batch()),
                                                   static_cast<std::size_t>(t.height()),
                                                   static_cast<std::size_t>(t.width()), g);
  return scalar_node(v, {mask}, {std::move(g)});
}

Var sparsity_loss(const Var& mask) {
  require_nhwc(mask.value(), 1, "sparsity_loss");
  const auto m = widen(mask.value());
  std::vector<double> g(m.size());
  const double v = kernel::mean<double>(m, g);
  return scalar_node(v, {mask}, {std::move(g)});
}

void LossWeights::validate() const {
  for (double w : {aba, bab, id_a, id_b, cls, smooth, sparse}) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw LossError("loss weights must be finite and non-negative");
  }
}

const std::vector<std::string>& LossReport::names() {
  static const std::vector<std::string> kNames = {"g_adv_ab", "g_adv_ba", "cyc_aba", "cyc_bab", "id_a",
                                                  "id_b",     "d_a",      "d_b",     "cls",     "smooth",
                                                  "sparse",   "total_g",  "total_d"};
  return kNames;
}

double LossReport::get(const std::string& name) const {
  auto it = values.find(name);
  if (it == values.end()) throw LossError("missing loss component '" + name + "'");
  return it->second;
}

std::vector<std::pair<std::string, double>> base_terms(const LossWeights& w) {
  return {{"g_adv_ab", 1.0}, {"cyc_aba", w.aba}, {"id_a", w.id_a},
          {"g_adv_ba", 1.0}, {"cyc_bab", w.bab}, {"id_b", w.id_b}};
}

std::vector<std::pair<std::string, double>> ws_terms(const LossWeights& w) {
  auto terms = base_terms(w);
  terms.emplace_back("cls", w.cls);
  terms.emplace_back("smooth", w.smooth);
  terms.emplace_back("sparse", w.sparse);
  return terms;
}

namespace {
Totals compose(const LossReport& c, const std::vector<std::pair<std::string, double>>& terms) {
  Totals t;
  for (const auto& [name, weight] : terms) {
    const double v = c.get(name);
    if (weight != 0.0) t.total_g += weight * v;
  }
  t.total_d = c.get("d_a") + c.get("d_b");
  return t;
}
}  // namespace

Totals compose_base(const LossReport& components, const LossWeights& w) {
  w.validate();
  return compose(components, base_terms(w));
}

Totals compose_ws(const LossReport& components, const LossWeights& w) {
  w.validate();
  return compose(components, ws_terms(w));
}

}  // namespace histoclean::losses
