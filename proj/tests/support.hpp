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

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "histoclean/autograd.hpp"
#include "histoclean/tensor.hpp"

namespace histoclean::testing {

/// Fresh directory under the system temp area, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("histoclean_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline Tensor random_tensor(Shape shape, std::uint64_t seed, float lo = -1.0f, float hi = 1.0f) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(lo, hi);
  Tensor t(std::move(shape));
  for (float& v : t.values()) v = u(rng);
  return t;
}

/// Largest relative deviation between the autograd gradient of a scalar
/// function and central differences, over every element of `inputs[which]`.
inline double max_grad_error(const std::function<Var(const std::vector<Var>&)>& f, std::vector<Tensor> inputs,
                             std::size_t which, float step = 1e-2f) {
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(Var::parameter(t));
  Var out = f(vars);
  backward(out);
  const Tensor analytic = vars[which].grad();
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs[which].size(); ++i) {
    auto eval_at = [&](float delta) {
      std::vector<Tensor> in = inputs;
      in[which][i] += delta;
      std::vector<Var> v;
      for (const auto& t : in) v.push_back(Var::constant(t));
      return static_cast<double>(f(v).value()[0]);
    };
    const double numeric = (eval_at(step) - eval_at(-step)) / (2.0 * step);
    const double a = analytic[i];
    const double err = std::abs(a - numeric) / std::max(1.0, std::max(std::abs(a), std::abs(numeric)));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace histoclean::testing
