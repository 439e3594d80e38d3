// Copyright 2026 The ODiMO Authors. All Rights Reserved.
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

#include "odimo/optim.hpp"

#include <cmath>

namespace odimo {

Sgd::Sgd(std::vector<Tensor> params, double lr, double momentum, double weight_decay)
    : params_(std::move(params)), lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
  velocity_.resize(params_.size());
  for (size_t p = 0; p < params_.size(); ++p)
    velocity_[p].assign(params_[p].data().size(), real{0});
}

void Sgd::step() {
  for (size_t p = 0; p < params_.size(); ++p) {
    auto& param = params_[p];
    if (!param.has_grad()) continue;
    auto& data = param.data();
    const auto& grad = param.grad();
    auto& vel = velocity_[p];
    for (size_t i = 0; i < data.size(); ++i) {
      real g = grad[i] + static_cast<real>(weight_decay_) * data[i];
      vel[i] = static_cast<real>(momentum_) * vel[i] + g;
      data[i] -= static_cast<real>(lr_) * vel[i];
    }
  }
}

void Sgd::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

Adam::Adam(std::vector<Tensor> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (size_t p = 0; p < params_.size(); ++p) {
    m_[p].assign(params_[p].data().size(), 0.0);
    v_[p].assign(params_[p].data().size(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t p = 0; p < params_.size(); ++p) {
    auto& param = params_[p];
    if (!param.has_grad()) continue;
    auto& data = param.data();
    const auto& grad = param.grad();
    for (size_t i = 0; i < data.size(); ++i) {
      const double g = grad[i];
      m_[p][i] = beta1_ * m_[p][i] + (1.0 - beta1_) * g;
      v_[p][i] = beta2_ * v_[p][i] + (1.0 - beta2_) * g * g;
      const double mhat = m_[p][i] / bc1;
      const double vhat = v_[p][i] / bc2;
      data[i] -= static_cast<real>(lr_ * mhat / (std::sqrt(vhat) + eps_));
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace odimo
