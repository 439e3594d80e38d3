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

#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "odimo/common.hpp"
#include "odimo/rng.hpp"

namespace odimo {

class Tensor;

// One node of the reverse-mode computation graph. Tensors produced by ops
// keep shared ownership of their inputs, so the graph stays alive as long
// as the output does; backward() visits each node once in reverse
// topological order and accumulates (sums) into leaf grads.
struct TensorImpl {
  Shape shape;
  std::vector<real> data;
  std::vector<real> grad;  // allocated lazily, same length as data
  bool requires_grad = false;

  // Graph edges. backward_fn reads this->grad and pushes into parents.
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(TensorImpl&)> backward_fn;
  const char* op = "leaf";

  int64_t size() const { return static_cast<int64_t>(data.size()); }
  void ensure_grad();
  void zero_grad();
  void accumulate_grad(const std::vector<real>& g);
};

// Grad-mode switch. Ops skip building graph edges while a NoGradGuard is
// alive (evaluation passes, calibration statistics).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool saved_;
};

bool grad_enabled();

// Dense N-dimensional float tensor. Value-semantic handle sharing storage,
// like the usual framework convention; copying a Tensor aliases its data.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, real value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<real> data,
                          bool requires_grad = false);
  static Tensor scalar(real value, bool requires_grad = false);
  // N(mean, stddev) / U(lo, hi) init from the run's seeded generator.
  static Tensor randn(Shape shape, Rng& rng, double mean = 0.0,
                      double stddev = 1.0, bool requires_grad = false);
  static Tensor rand_uniform(Shape shape, Rng& rng, double lo, double hi,
                             bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int64_t size() const { return impl_->size(); }
  int64_t dim(int i) const { return impl_->shape.at(static_cast<size_t>(i)); }
  int rank() const { return static_cast<int>(impl_->shape.size()); }

  std::vector<real>& data() { return impl_->data; }
  const std::vector<real>& data() const { return impl_->data; }
  std::vector<real>& grad();
  const std::vector<real>& grad() const;
  bool has_grad() const { return impl_ && !impl_->grad.empty(); }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool value);

  real item() const;

  void zero_grad() { impl_->zero_grad(); }

  // Runs reverse-mode accumulation from this scalar. Grads sum over all
  // paths; callers zero grads explicitly between backward passes.
  void backward();

  // Same values, detached from the graph (no parents, requires_grad=false).
  Tensor detach() const;
  // Deep copy of values (used for best-state snapshots).
  Tensor clone() const;
  void copy_from(const Tensor& src);

  const char* op() const { return impl_->op; }
  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

  // Factory for ops (including custom-differentiable ops defined outside
  // the tensor engine, e.g. fake-quantizers). Wires parents and the
  // backward rule iff grad mode is on and some parent requires grad.
  static Tensor make_op(const char* op, Shape shape, std::vector<real> data,
                        std::vector<Tensor> parents,
                        std::function<void(TensorImpl&)> backward_fn);

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
};

}  // namespace odimo
