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

#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "fixtures.hpp"
#include "histoclean/evaluation.hpp"
#include "histoclean/features.hpp"

using namespace histoclean;
using namespace histoclean::eval;
using histoclean::testing::random_tensor;
using histoclean::testing::read_file;
using histoclean::testing::TempDir;
using histoclean::testing::tiny_config;
using histoclean::testing::tiny_corpus;

namespace {

Eigen::MatrixXd random_rows(int n, int d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Eigen::MatrixXd m(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = nd(rng) * (j + 1) + 0.1 * j;
  return m;
}

FeatureStats stats_of(Eigen::VectorXd mu, Eigen::MatrixXd sigma) {
  FeatureStats s;
  s.mu = std::move(mu);
  s.sigma = std::move(sigma);
  s.n = 10;
  return s;
}

}  // namespace

TEST_CASE("gaussian_stats") {
  Eigen::MatrixXd two(2, 2);
  two << 0, 0, 2, 2;
  const auto s = gaussian_stats(two);
  CHECK(s.n == 2);
  CHECK(s.mu(0) == doctest::Approx(1.0));
  CHECK(s.mu(1) == doctest::Approx(1.0));
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) CHECK(s.sigma(i, j) == doctest::Approx(2.0));

  Eigen::MatrixXd constant = Eigen::MatrixXd::Constant(6, 3, 4.5);
  CHECK(gaussian_stats(constant).sigma.norm() == 0.0);

  // Two-pass loop oracle.
  const Eigen::MatrixXd x = random_rows(50, 5, 1);
  const auto st = gaussian_stats(x);
  for (int j = 0; j < 5; ++j) {
    double mean = 0;
    for (int i = 0; i < 50; ++i) mean += x(i, j);
    mean /= 50;
    CHECK(st.mu(j) == doctest::Approx(mean).epsilon(1e-10));
  }
  double worst = 0;
  for (int a = 0; a < 5; ++a)
    for (int b = 0; b < 5; ++b) {
      double c = 0;
      for (int i = 0; i < 50; ++i) c += (x(i, a) - st.mu(a)) * (x(i, b) - st.mu(b));
      worst = std::max(worst, std::abs(c / 49 - st.sigma(a, b)));
    }
  CHECK(worst < 1e-8);

  Eigen::MatrixXd reversed = x.colwise().reverse();
  CHECK((gaussian_stats(reversed).sigma - st.sigma).cwiseAbs().maxCoeff() < 1e-12);

  CHECK_THROWS_AS(gaussian_stats(Eigen::MatrixXd(1, 3)), EvalError);
}

TEST_CASE("frechet_distance") {
  const auto s = gaussian_stats(random_rows(40, 6, 2));
  CHECK(frechet_distance(s, s) < 1e-6);

  Eigen::MatrixXd one(1, 1), four(1, 1);
  one << 1.0;
  four << 4.0;
  Eigen::VectorXd zero = Eigen::VectorXd::Zero(1);
  // (0 - 0)^2 + 1 + 4 - 2 * sqrt(4) = 1
  CHECK(frechet_distance(stats_of(zero, one), stats_of(zero, four)) == doctest::Approx(1.0).epsilon(1e-9));

  Eigen::VectorXd m1(2), m2(2);
  m1 << 0, 0;
  m2 << 1, 1;
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(2, 2);
  const Eigen::MatrixXd two_id = 4.0 * id;
  // |mu|^2 = 2, trace term 2 * (1 + 4 - 2 * 2) = 2
  CHECK(frechet_distance(stats_of(m1, id), stats_of(m2, two_id)) == doctest::Approx(4.0).epsilon(1e-9));

  const auto t = gaussian_stats(random_rows(40, 6, 3));
  CHECK(frechet_distance(s, t) == doctest::Approx(frechet_distance(t, s)).epsilon(1e-8));
  CHECK(frechet_distance(s, t) > 0.0);

  const auto small = gaussian_stats(random_rows(10, 3, 4));
  CHECK_THROWS_AS(frechet_distance(s, small), EvalError);
}

TEST_CASE("paired PSNR") {
  const Tensor a({1, 4, 4, 3}, 0.5f);
  CHECK(paired_psnr(a, a) == 99.0);
  const Tensor b({1, 4, 4, 3}, 0.6f);
  CHECK(paired_psnr(a, b) == doctest::Approx(20.0).epsilon(1e-5));
  CHECK(paired_psnr(Tensor({1, 2, 2, 3}, 0.0f), Tensor({1, 2, 2, 3}, 1.0f)) == doctest::Approx(0.0));
  CHECK_THROWS_AS(paired_psnr(a, Tensor({1, 4, 4, 1})), ShapeError);

  const Tensor u = to_unit(Tensor({1, 1, 1, 3}, std::vector<float>{-1.0f, 0.0f, 1.0f}));
  CHECK(u[0] == 0.0f);
  CHECK(u[2] == 1.0f);
  CHECK(u[1] * 255.0f == doctest::Approx(std::round(u[1] * 255.0f)));
}

TEST_CASE("random projection extractor") {
  const auto ex = FeatureExtractor::random_projection(7, 64, 16);
  CHECK(ex.kind() == ExtractorKind::seeded_random_projection);
  CHECK(ex.dim() == 64);
  CHECK_FALSE(ex.describe().empty());

  Tensor imgs = random_tensor({5, 32, 32, 3}, 8);
  const auto f = ex.extract(imgs);
  CHECK(f.rows() == 5);
  CHECK(f.cols() == 64);

  // Duplicated sample gives duplicated rows.
  Tensor dup = imgs.slice_batch(0, 1);
  const std::vector<Tensor> pair{dup, dup};
  const auto fd = ex.extract(concat_batch(pair));
  CHECK((fd.row(0) - fd.row(1)).norm() == 0.0);
  // Float GEMM blocking depends on the batch size, so only near-equal across batches.
  CHECK((fd.row(0) - f.row(0)).cwiseAbs().maxCoeff() < 1e-5);

  const auto twin = FeatureExtractor::random_projection(7, 64, 16);
  CHECK(twin.extract(imgs) == f);
  CHECK(FeatureExtractor::random_projection(8, 64, 16).extract(imgs) != f);

  CHECK(fid(imgs, imgs, ex) < 1e-6);
  CHECK(fid(imgs, random_tensor({5, 32, 32, 3}, 9), ex) > 0.0);

  CHECK_THROWS_WITH_AS(FeatureExtractor::inception("/nonexistent/inception.bin"), doctest::Contains("not found"),
                       Error);
}

TEST_CASE("mosaic geometry") {
  const Tensor in = random_tensor({8, 32, 32, 3}, 10);
  const Tensor out = random_tensor({8, 32, 32, 3}, 11);
  const Tensor masks = random_tensor({8, 32, 32, 1}, 12, 0.0f, 1.0f);
  const Image8 m = render_mosaic(in, out, masks);
  CHECK(m.width == 8 * kMosaicCell + 9 * kMosaicGutter);
  CHECK(m.width == 1060);
  CHECK(m.height == 400);
  CHECK(m.channels == 3);

  const Image8 plain = render_mosaic(in, out, std::nullopt);
  CHECK(plain.height == 2 * kMosaicCell + 3 * kMosaicGutter);
  CHECK(plain.width == 1060);

  CHECK_THROWS_AS(render_mosaic(in, out.slice_batch(0, 7), std::nullopt), Error);

  TempDir dir("mosaic");
  render_mosaic(in, out, masks, dir / "m.png");
  CHECK(std::filesystem::file_size(dir / "m.png") > 0);
}

TEST_CASE("model evaluation leaves the checkpoint untouched") {
  TempDir dir("evalrun");
  auto m = tiny_corpus(dir / "data", 8, 32);
  m = data::split_manifest(m, 0.5, 3);
  train::TrainConfig cfg = tiny_config(train::Variant::ws);
  cfg.epochs = 1;
  cfg.batch_size = 4;
  const auto run = train::run_training(cfg, m, dir / "run");
  const std::string before = read_file(run.last_checkpoint);

  const auto ex = FeatureExtractor::random_projection(1, 32, 16);
  const auto report = evaluate_model(dir / "run", m, ex);
  CHECK(read_file(run.last_checkpoint) == before);

  CHECK(report.variant == "ws");
  CHECK(report.epoch == 1);
  CHECK(report.extractor == ex.describe());
  REQUIRE(report.train);
  REQUIRE(report.test);
  for (const auto* s : {&*report.train, &*report.test}) {
    CHECK(std::isfinite(s->fid));
    CHECK(s->fid >= 0.0);
    REQUIRE(s->psnr);
    CHECK(s->psnr->n == s->n_cleaned);
    CHECK(s->psnr->mean_input > 0.0);
    REQUIRE(s->mask);
    CHECK(s->mask->overlap.has_value());
    CHECK(s->classifier_accuracy.has_value());
  }
  CHECK(report.train->n_cleaned + report.test->n_cleaned == 24);
  CHECK(report.to_json().find("\"extractor\"") != std::string::npos);
  CHECK_FALSE(report.to_table().empty());
  CHECK(comparison_table({report}).find("45.09") != std::string::npos);

  // Unsplit manifests are evaluated as a single test split.
  const auto unsplit = tiny_corpus(dir / "data2", 3, 32);
  const auto r2 = evaluate_model(dir / "run", unsplit, ex);
  CHECK_FALSE(r2.train);
  REQUIRE(r2.test);
  CHECK(r2.test->n_cleaned == 9);
}
