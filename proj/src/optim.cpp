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

#include "histoclean/optim.hpp"

#include <cmath>
#include <map>

namespace histoclean::optim {

Adam::Adam(std::vector<std::pair<std::string, Var>> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  for (const auto& [name, v] : params_) {
    m_.emplace_back(v.shape());
    v_.emplace_back(v.shape());
  }
}

void Adam::step() {
  ++steps_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
  const auto b1 = static_cast<float>(cfg_.beta1), b2 = static_cast<float>(cfg_.beta2);
  const auto step = static_cast<float>(cfg_.lr / bc1);
  const auto inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
  const auto eps = static_cast<float>(cfg_.eps);
  const auto decay = static_cast<float>(1.0 - cfg_.lr * cfg_.weight_decay);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Var& p = params_[k].second;
    if (!p.has_grad()) continue;
    const float* g = p.grad().data();
    float* w = p.mutable_value().data();
    float* m = m_[k].data();
    float* v = v_[k].data();
    for (std::size_t i = 0; i < m_[k].size(); ++i) {
      m[i] = b1 * m[i] + (1.0f - b1) * g[i];
      v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
      w[i] *= decay;
      w[i] -= step * m[i] / (std::sqrt(v[i]) * inv_sqrt_bc2 + eps);
    }
  }
}

void Adam::zero_grad() {
  for (auto& [name, v] : params_) v.zero_grad();
}

std::vector<std::pair<std::string, Tensor>> Adam::state() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    out.emplace_back(params_[k].first + ".m", m_[k]);
    out.emplace_back(params_[k].first + ".v", v_[k]);
  }
  return out;
}

void Adam::load_state(const std::vector<std::pair<std::string, Tensor>>& named, std::int64_t steps) {
  std::map<std::string, const Tensor*> index;
  for (const auto& [name, t] : named) index[name] = &t;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    for (auto [suffix, dst] : {std::pair{".m", &m_[k]}, std::pair{".v", &v_[k]}}) {
      auto it = index.find(params_[k].first + suffix);
      if (it == index.end()) throw Error("optimizer state missing '" + params_[k].first + suffix + "'");
      if (it->second->shape() != dst->shape()) throw ShapeError("optimizer state shape mismatch for " + it->first);
      *dst = *it->second;
    }
  }
  steps_ = steps;
}

}  // namespace histoclean::optim
