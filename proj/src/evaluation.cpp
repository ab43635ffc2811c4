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

#include "histoclean/evaluation.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "histoclean/autograd.hpp"
#include "histoclean/losses.hpp"
#include "histoclean/ops.hpp"
#include "histoclean/synthetic.hpp"
#include "histoclean/trainer.hpp"

namespace histoclean::eval {

FeatureStats gaussian_stats(const Eigen::MatrixXd& features) {
  const auto n = features.rows();
  if (n < 2) throw EvalError("gaussian_stats needs at least 2 samples, got " + std::to_string(n));
  FeatureStats s;
  s.n = n;
  s.mu = features.colwise().mean().transpose();
  const Eigen::MatrixXd centered = features.rowwise() - s.mu.transpose();
  s.sigma = (centered.transpose() * centered) / static_cast<double>(n - 1);
  return s;
}

namespace {

// Symmetric PSD square root with small/negative eigenvalues clipped to zero.
Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& m, double* trace_of_root = nullptr) {
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  if (es.info() != Eigen::Success) throw EvalError("eigendecomposition failed");
  Eigen::VectorXd ev = es.eigenvalues();
  const double cutoff = 1e-8 * std::max(ev.maxCoeff(), 0.0);
  for (Eigen::Index i = 0; i < ev.size(); ++i) ev(i) = ev(i) > cutoff ? std::sqrt(ev(i)) : 0.0;
  if (trace_of_root) *trace_of_root = ev.sum();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

bool finite(const FeatureStats& s) { return s.mu.allFinite() && s.sigma.allFinite(); }

}  // namespace

double frechet_distance(const FeatureStats& s1, const FeatureStats& s2) {
  if (s1.mu.size() != s2.mu.size() || s1.sigma.rows() != s1.mu.size() || s2.sigma.rows() != s2.mu.size()) {
    throw EvalError("frechet_distance: dimension mismatch (" + std::to_string(s1.mu.size()) + " vs " +
                    std::to_string(s2.mu.size()) + ")");
  }
  if (!finite(s1) || !finite(s2)) throw EvalError("frechet_distance: non-finite statistics");
  const Eigen::MatrixXd r1 = sqrt_psd(s1.sigma);
  double tr_covmean = 0.0;
  sqrt_psd(r1 * s2.sigma * r1, &tr_covmean);
  const double d = (s1.mu - s2.mu).squaredNorm() + s1.sigma.trace() + s2.sigma.trace() - 2.0 * tr_covmean;
  return std::max(d, 0.0);
}

double fid(const Tensor& images1, const Tensor& images2, const FeatureExtractor& ex) {
  return frechet_distance(gaussian_stats(ex.extract(images1)), gaussian_stats(ex.extract(images2)));
}

double paired_psnr(const Tensor& cleaned, const Tensor& reference) {
  if (cleaned.shape() != reference.shape()) {
    throw ShapeError("paired_psnr: shape " + histoclean::to_string(cleaned.shape()) + " vs " +
                     histoclean::to_string(reference.shape()));
  }
  if (cleaned.size() == 0) throw ShapeError("paired_psnr: empty image");
  double se = 0.0;
  for (std::size_t i = 0; i < cleaned.size(); ++i) {
    const double d = static_cast<double>(cleaned.data()[i]) - reference.data()[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(cleaned.size());
  if (mse < 1e-10) return 99.0;
  return std::min(99.0, -10.0 * std::log10(mse));
}

Tensor to_unit(const Tensor& t) {
  Tensor out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) {
    const float u = std::nearbyint(std::clamp((t.data()[i] + 1.0f) * 127.5f, 0.0f, 255.0f));
    out.data()[i] = u / 255.0f;
  }
  return out;
}

Image8 render_mosaic(const Tensor& inputs, const Tensor& outputs, const std::optional<Tensor>& masks) {
  require_nhwc(inputs, 3, "mosaic inputs");
  require_nhwc(outputs, 3, "mosaic outputs");
  const std::int64_t cols = inputs.batch();
  if (outputs.batch() != cols || (masks && masks->batch() != cols)) {
    throw EvalError("render_mosaic: inputs, outputs and masks must have equal length");
  }
  if (masks) require_nhwc(*masks, 1, "mosaic masks");
  if (cols == 0) throw EvalError("render_mosaic: no samples");
  const int rows = masks ? 3 : 2;
  constexpr int c = kMosaicCell, g = kMosaicGutter;
  Image8 img;
  img.height = rows * c + (rows + 1) * g;
  img.width = static_cast<int>(cols * c + (cols + 1) * g);
  img.channels = 3;
  img.pixels.assign(static_cast<std::size_t>(img.height) * img.width * 3, 255);
  auto place = [&](const Tensor& src, std::int64_t k, int row, bool gray) {
    Tensor cell = ops::bilinear_resize(src.slice_batch(k, 1), c, c);
    const int y0 = g + row * (c + g), x0 = static_cast<int>(g + k * (c + g));
    for (int y = 0; y < c; ++y)
      for (int x = 0; x < c; ++x)
        for (int ch = 0; ch < 3; ++ch) {
          const float v = gray ? cell.at(0, y, x, 0) * 255.0f : (cell.at(0, y, x, ch) + 1.0f) * 127.5f;
          img.pixels[(static_cast<std::size_t>(y0 + y) * img.width + x0 + x) * 3 + ch] =
              static_cast<std::uint8_t>(std::nearbyint(std::clamp(v, 0.0f, 255.0f)));
        }
  };
  for (std::int64_t k = 0; k < cols; ++k) {
    place(inputs, k, 0, false);
    place(outputs, k, 1, false);
    if (masks) place(*masks, k, 2, true);
  }
  return img;
}

void render_mosaic(const Tensor& inputs, const Tensor& outputs, const std::optional<Tensor>& masks,
                   const std::filesystem::path& out_path) {
  write_png(out_path, render_mosaic(inputs, outputs, masks));
}

namespace {

using json = nlohmann::json;

Tensor load_eval(const data::Manifest& m, const data::TileRecord& r, const data::AugmentConfig& cfg) {
  return data::eval_transform(data::load_tile(m.resolve(r), m.tile_size), cfg);
}

Tensor load_mask(const std::filesystem::path& p, int tile_size, const data::AugmentConfig& cfg) {
  const Image8 img = read_png(p);
  if (img.channels != 1 || img.height != tile_size || img.width != tile_size) {
    throw EvalError("mask " + p.string() + " has unexpected geometry");
  }
  Tensor t({1, img.height, img.width, 1});
  for (std::size_t i = 0; i < img.pixels.size(); ++i) t.data()[i] = img.pixels[i] / 255.0f;
  return data::eval_transform(t, cfg);
}

double mask_tv(const Tensor& m) {
  std::span<const float> v(m.data(), m.size());
  return losses::kernel::total_variation<float>(v, 1, m.height(), m.width());
}

double soft_dice(const Tensor& pred, const Tensor& truth) {
  double inter = 0.0, sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    inter += static_cast<double>(pred.data()[i]) * truth.data()[i];
    sum += static_cast<double>(pred.data()[i]) + truth.data()[i];
  }
  return sum > 0.0 ? 2.0 * inter / sum : 1.0;
}

Eigen::MatrixXd stack_rows(const std::vector<Eigen::MatrixXd>& parts) {
  Eigen::Index n = 0;
  for (const auto& p : parts) n += p.rows();
  Eigen::MatrixXd out(n, parts.empty() ? 0 : parts.front().cols());
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p;
    r += p.rows();
  }
  return out;
}

SplitReport evaluate_split(const train::LoadedModel& lm, const data::Manifest& full, const data::Manifest& split,
                           const FeatureExtractor& ex, const EvalOptions& opts) {
  const auto& cfg = lm.config.augment;
  const auto& model = *lm.model;
  std::vector<const data::TileRecord*> art, ref;
  for (const auto& r : split.records) (r.domain == data::Domain::artifact ? art : ref).push_back(&r);
  if (opts.max_per_split > 0) {
    if (static_cast<std::int64_t>(art.size()) > opts.max_per_split) art.resize(opts.max_per_split);
    if (static_cast<std::int64_t>(ref.size()) > opts.max_per_split) ref.resize(opts.max_per_split);
  }
  if (art.size() < 2 || ref.size() < 2) throw EvalError("empty split: need at least 2 artifact and 2 clean tiles");

  SplitReport rep;
  rep.n_cleaned = static_cast<std::int64_t>(art.size());
  rep.n_reference = static_cast<std::int64_t>(ref.size());
  std::vector<Eigen::MatrixXd> f_out, f_ref;
  PsnrStats ps;
  MaskMetrics mm;
  double overlap_sum = 0.0;
  std::int64_t overlap_n = 0, correct = 0;
  const int bs = std::max(1, opts.batch);

  for (std::size_t i = 0; i < art.size(); i += bs) {
    std::vector<Tensor> imgs;
    std::vector<int> labels;
    for (std::size_t k = i; k < std::min(art.size(), i + bs); ++k) {
      imgs.push_back(load_eval(full, *art[k], cfg));
      labels.push_back(art[k]->label.value_or(-1));
    }
    const Tensor a = concat_batch(imgs);
    const auto cleaned = model.clean(a);
    f_out.push_back(ex.extract(cleaned.image));
    if (cleaned.mask && model.classifier) {
      NoGradGuard no_grad;
      const Tensor logits = (*model.classifier)(Var::constant(a), Var::constant(*cleaned.mask)).value();
      for (std::size_t k = 0; k < labels.size(); ++k) {
        const float* row = logits.data() + k * nets::kNumClasses;
        const int pred = static_cast<int>(std::max_element(row, row + nets::kNumClasses) - row);
        if (pred == labels[k]) ++correct;
      }
    }
    for (std::size_t k = 0; k < imgs.size(); ++k) {
      const auto* r = art[i + k];
      const auto idx = static_cast<std::int64_t>(k);
      if (r->paired_clean_id) {
        if (const auto* pc = full.find(*r->paired_clean_id)) {
          const Tensor truth = to_unit(load_eval(full, *pc, cfg));
          const double pc_out = paired_psnr(to_unit(cleaned.image.slice_batch(idx, 1)), truth);
          const double pc_in = paired_psnr(to_unit(imgs[k]), truth);
          ps.mean_cleaned += pc_out;
          ps.mean_input += pc_in;
          if (pc_out > pc_in) ps.fraction_improved += 1.0;
          ++ps.n;
        }
      }
      if (cleaned.mask) {
        const Tensor m = cleaned.mask->slice_batch(idx, 1);
        double s = 0.0;
        for (float v : m.values()) s += v;
        mm.mean_sparsity += s / static_cast<double>(m.size());
        mm.mean_tv += mask_tv(m);
        if (const auto mp = data::mask_path_for(full, *r); !mp.empty()) {
          overlap_sum += soft_dice(m, load_mask(mp, full.tile_size, cfg));
          ++overlap_n;
        }
      }
    }
  }
  for (std::size_t i = 0; i < ref.size(); i += bs) {
    std::vector<Tensor> imgs;
    for (std::size_t k = i; k < std::min(ref.size(), i + bs); ++k) imgs.push_back(load_eval(full, *ref[k], cfg));
    f_ref.push_back(ex.extract(concat_batch(imgs)));
  }
  rep.fid = frechet_distance(gaussian_stats(stack_rows(f_out)), gaussian_stats(stack_rows(f_ref)));
  if (ps.n > 0) {
    ps.mean_cleaned /= static_cast<double>(ps.n);
    ps.mean_input /= static_cast<double>(ps.n);
    ps.fraction_improved /= static_cast<double>(ps.n);
    rep.psnr = ps;
  }
  if (model.alpha) {
    mm.mean_sparsity /= static_cast<double>(art.size());
    mm.mean_tv /= static_cast<double>(art.size());
    if (overlap_n > 0) mm.overlap = overlap_sum / static_cast<double>(overlap_n);
    rep.mask = mm;
  }
  if (model.classifier) rep.classifier_accuracy = static_cast<double>(correct) / static_cast<double>(art.size());
  return rep;
}

json split_json(const SplitReport& s) {
  json j = {{"fid", s.fid}, {"n_cleaned", s.n_cleaned}, {"n_reference", s.n_reference}};
  if (s.psnr) {
    j["psnr"] = {{"mean_cleaned", s.psnr->mean_cleaned},
                 {"mean_input", s.psnr->mean_input},
                 {"fraction_improved", s.psnr->fraction_improved},
                 {"n", s.psnr->n}};
  }
  if (s.mask) {
    j["mask"] = {{"mean_sparsity", s.mask->mean_sparsity}, {"mean_tv", s.mask->mean_tv}};
    j["mask"]["overlap"] = s.mask->overlap ? json(*s.mask->overlap) : json(nullptr);
  }
  if (s.classifier_accuracy) j["classifier_accuracy"] = *s.classifier_accuracy;
  return j;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

EvalReport evaluate_model(const std::filesystem::path& checkpoint, const data::Manifest& manifest,
                          const FeatureExtractor& ex, const EvalOptions& opts) {
  const train::LoadedModel lm = train::load_model(checkpoint);
  EvalReport report;
  report.variant = train::to_string(lm.config.variant);
  report.extractor = ex.describe();
  report.epoch = lm.epoch;
  bool any_split = false;
  for (const auto& r : manifest.records) any_split = any_split || r.split.has_value();
  if (!any_split) {
    report.test = evaluate_split(lm, manifest, manifest, ex, opts);
    return report;
  }
  for (auto split : {data::Split::train, data::Split::test}) {
    const data::Manifest sub = manifest.subset(split);
    if (sub.records.empty()) continue;
    auto rep = evaluate_split(lm, manifest, sub, ex, opts);
    (split == data::Split::train ? report.train : report.test) = std::move(rep);
  }
  if (!report.train && !report.test) throw EvalError("manifest has no tiles to evaluate");
  return report;
}

std::string EvalReport::to_json() const {
  json j;
  j["variant"] = variant;
  j["extractor"] = extractor;
  j["epoch"] = epoch;
  j["train"] = train ? split_json(*train) : json(nullptr);
  j["test"] = test ? split_json(*test) : json(nullptr);
  json ref = json::array();
  for (const auto& p : kPublishedFid) ref.push_back({{"variant", p.variant}, {"train_fid", p.train}, {"test_fid", p.test}});
  j["published_reference"] = {{"values", ref}, {"reproducible", kPublishedFidReproducible}};
  return j.dump(2);
}

std::string EvalReport::to_table() const {
  std::ostringstream o;
  o << "variant " << variant << " (epoch " << epoch << "), extractor " << extractor << "\n";
  o << "split   FID        n_cleaned  n_reference  PSNR_out  PSNR_in  improved  sparsity  TV      overlap  cls_acc\n";
  for (const auto& [name, s] : {std::pair{"train", &train}, std::pair{"test", &test}}) {
    if (!*s) continue;
    const SplitReport& r = **s;
    std::string label = name;
    label.resize(8, ' ');
    o << label;
    o << fmt("%-10.4f ", r.fid) << fmt("%-10.0f ", static_cast<double>(r.n_cleaned))
      << fmt("%-12.0f ", static_cast<double>(r.n_reference));
    if (r.psnr) {
      o << fmt("%-9.3f ", r.psnr->mean_cleaned) << fmt("%-8.3f ", r.psnr->mean_input)
        << fmt("%-9.3f ", r.psnr->fraction_improved);
    } else {
      o << "-         -        -         ";
    }
    if (r.mask) {
      o << fmt("%-9.4f ", r.mask->mean_sparsity) << fmt("%-7.4f ", r.mask->mean_tv)
        << (r.mask->overlap ? fmt("%-8.4f ", *r.mask->overlap) : std::string("-        "));
    } else {
      o << "-         -       -        ";
    }
    o << (r.classifier_accuracy ? fmt("%.3f", *r.classifier_accuracy) : std::string("-")) << "\n";
  }
  return o.str();
}

std::string comparison_table(const std::vector<EvalReport>& reports) {
  std::ostringstream o;
  o << "model       train FID   test FID    n_train/n_ref  n_test/n_ref  extractor\n";
  for (const auto& r : reports) {
    auto cell = [](const std::optional<SplitReport>& s) { return s ? fmt("%-11.4f ", s->fid) : std::string("-           "); };
    auto counts = [](const std::optional<SplitReport>& s) {
      return s ? std::to_string(s->n_cleaned) + "/" + std::to_string(s->n_reference) : std::string("-");
    };
    std::string name = r.variant;
    name.resize(std::max<std::size_t>(name.size(), 11), ' ');
    std::string c1 = counts(r.train), c2 = counts(r.test);
    c1.resize(std::max<std::size_t>(c1.size(), 14), ' ');
    c2.resize(std::max<std::size_t>(c2.size(), 13), ' ');
    o << name << " " << cell(r.train) << cell(r.test) << c1 << " " << c2 << " " << r.extractor << "\n";
  }
  o << "published (different data and embedding, not reproducible here):\n";
  for (const auto& p : kPublishedFid) {
    std::string name = p.variant;
    name.resize(11, ' ');
    o << name << " " << fmt("%-11.2f ", p.train) << fmt("%-11.2f ", p.test) << "\n";
  }
  return o.str();
}

}  // namespace histoclean::eval
