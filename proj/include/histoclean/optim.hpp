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

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "histoclean/autograd.hpp"

namespace histoclean::optim {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;  // decoupled (applied to the weights, not the gradient)
};

/// Adam with decoupled weight decay over a fixed, named parameter group.
/// Parameters that received no gradient in a step are left untouched.
class Adam {
 public:
  Adam(std::vector<std::pair<std::string, Var>> params, AdamConfig cfg);

  void step();
  void zero_grad();
  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }
  std::int64_t steps() const { return steps_; }

  /// Moment estimates as named tensors ("<param>.m", "<param>.v").
  std::vector<std::pair<std::string, Tensor>> state() const;
  void load_state(const std::vector<std::pair<std::string, Tensor>>& named, std::int64_t steps);

 private:
  std::vector<std::pair<std::string, Var>> params_;
  std::vector<Tensor> m_, v_;
  AdamConfig cfg_;
  std::int64_t steps_ = 0;
};

}  // namespace histoclean::optim
