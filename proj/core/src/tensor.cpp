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

#include "odimo/tensor.hpp"

#include <algorithm>
#include <unordered_set>

namespace odimo {

namespace {
thread_local bool g_grad_enabled = true;
}

NoGradGuard::NoGradGuard() : saved_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = saved_; }

bool grad_enabled() { return g_grad_enabled; }

void TensorImpl::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), real{0});
}

void TensorImpl::zero_grad() {
  if (!grad.empty()) std::fill(grad.begin(), grad.end(), real{0});
}

void TensorImpl::accumulate_grad(const std::vector<real>& g) {
  ODIMO_CHECK(g.size() == data.size(),
              strcat_msg("gradient size ", g.size(), " does not match tensor size ",
                         data.size()));
  ensure_grad();
  for (size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), real{0}, requires_grad);
}

Tensor Tensor::full(Shape shape, real value, bool requires_grad) {
  for (int64_t d : shape)
    ODIMO_CHECK(d > 0, strcat_msg("non-positive dimension in shape ", shape_str(shape)));
  auto impl = std::make_shared<TensorImpl>();
  impl->data.assign(static_cast<size_t>(numel(shape)), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from_data(Shape shape, std::vector<real> data, bool requires_grad) {
  ODIMO_CHECK(static_cast<int64_t>(data.size()) == numel(shape),
              strcat_msg("data length ", data.size(), " does not match shape ",
                         shape_str(shape)));
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(real value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

Tensor Tensor::randn(Shape shape, Rng& rng, double mean, double stddev,
                     bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (auto& v : t.data()) v = static_cast<real>(rng.normal(mean, stddev));
  return t;
}

Tensor Tensor::rand_uniform(Shape shape, Rng& rng, double lo, double hi,
                            bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (auto& v : t.data()) v = static_cast<real>(rng.uniform(lo, hi));
  return t;
}

std::vector<real>& Tensor::grad() {
  impl_->ensure_grad();
  return impl_->grad;
}

const std::vector<real>& Tensor::grad() const {
  ODIMO_CHECK(!impl_->grad.empty(), "tensor has no gradient (backward not run?)");
  return impl_->grad;
}

Tensor& Tensor::set_requires_grad(bool value) {
  impl_->requires_grad = value;
  return *this;
}

real Tensor::item() const {
  ODIMO_CHECK(size() == 1, strcat_msg("item() on non-scalar tensor of shape ",
                                      shape_str(shape())));
  return impl_->data[0];
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  impl->requires_grad = false;
  return Tensor(std::move(impl));
}

Tensor Tensor::clone() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  impl->requires_grad = impl_->requires_grad;
  return Tensor(std::move(impl));
}

void Tensor::copy_from(const Tensor& src) {
  ODIMO_CHECK(src.size() == size(),
              strcat_msg("copy_from size mismatch: ", shape_str(src.shape()), " vs ",
                         shape_str(shape())));
  impl_->data = src.impl_->data;
}

Tensor Tensor::make_op(const char* op, Shape shape, std::vector<real> data,
                       std::vector<Tensor> parents,
                       std::function<void(TensorImpl&)> backward_fn) {
  Tensor out = from_data(std::move(shape), std::move(data));
  out.impl_->op = op;
  if (!grad_enabled()) return out;
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.impl()->requires_grad;
  if (!needs) return out;
  out.impl_->requires_grad = true;
  out.impl_->parents.reserve(parents.size());
  for (auto& p : parents) out.impl_->parents.push_back(p.impl());
  out.impl_->backward_fn = std::move(backward_fn);
  return out;
}

void Tensor::backward() {
  ODIMO_CHECK(size() == 1, "backward() requires a scalar loss");
  ODIMO_CHECK(impl_->requires_grad,
              "backward() on a tensor that does not require grad");

  // Iterative DFS for reverse topological order; each node visited once.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  struct Frame {
    TensorImpl* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({impl_.get(), 0});
  visited.insert(impl_.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      TensorImpl* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  impl_->ensure_grad();
  impl_->grad[0] += real{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = *it;
    if (node->backward_fn) {
      node->ensure_grad();
      node->backward_fn(*node);
    }
  }
}

}  // namespace odimo
