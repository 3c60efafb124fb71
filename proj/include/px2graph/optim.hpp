// Copyright 2026 The px2graph Authors.
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
#include <string>
#include <vector>

#include "px2graph/autodiff.hpp"

namespace px2graph::ad {

enum class OptimMethod { sgd, adam };

struct OptimConfig {
  OptimMethod method = OptimMethod::adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Plain SGD or Adam over a ParamStore. Gradients are zeroed after each step.
/// A non-finite gradient aborts the step before any value is touched.
template <typename T>
class Optimizer {
 public:
  explicit Optimizer(OptimConfig cfg) : cfg_(cfg) {}

  const OptimConfig& config() const { return cfg_; }
  int steps_taken() const { return t_; }

  void step(ParamStore<T>& params) {
    for (size_t i = 0; i < params.size(); ++i) {
      if (!all_finite(params.at(i).gradient)) {
        fail("optimizer: non-finite gradient in parameter '" + params.at(i).name + "'");
      }
    }
    ++t_;
    if (cfg_.method == OptimMethod::sgd) {
      for (size_t i = 0; i < params.size(); ++i) {
        auto& p = params.at(i);
        for (size_t j = 0; j < p.value.numel(); ++j) {
          p.value[j] -= static_cast<T>(cfg_.lr) * p.gradient[j];
        }
      }
    } else {
      if (m_.size() != params.size()) init_state(params);
      const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
      const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
      for (size_t i = 0; i < params.size(); ++i) {
        auto& p = params.at(i);
        auto& m = m_[i];
        auto& v = v_[i];
        for (size_t j = 0; j < p.value.numel(); ++j) {
          const double g = static_cast<double>(p.gradient[j]);
          m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
          v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
          const double mhat = m[j] / bc1;
          const double vhat = v[j] / bc2;
          p.value[j] -= static_cast<T>(cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
        }
      }
    }
    params.zero_gradients();
  }

 private:
  void init_state(ParamStore<T>& params) {
    m_.assign(params.size(), {});
    v_.assign(params.size(), {});
    for (size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(params.at(i).value.numel(), 0.0);
      v_[i].assign(params.at(i).value.numel(), 0.0);
    }
  }

  OptimConfig cfg_;
  int t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace px2graph::ad
