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

#include <utility>

#include "odimo/tensor.hpp"

namespace odimo {

// Symmetric weight quantizer with a trainable log-domain scale s
// (effective scale e^s):
//
//   Q(x) = e^s / (2^{n-1}-1) * round((2^{n-1}-1) * clip(x / e^s, -1, 1))
//
// n = 2 ternarizes to {-e^s, 0, e^s}; n = 8 is the usual symmetric 8-bit
// grid. The round is straight-through: dQ/dx is 1 inside the clip range
// and 0 outside; the scale receives the clipped-range gradient
// dQ/ds = Q(x) - x inside, +-e^s outside.
struct WeightQuantizer {
  int bit_width = 8;  // n >= 2
  Tensor log_scale;   // scalar s, trainable

  double scale() const { return std::exp(static_cast<double>(log_scale.item())); }
  int64_t levels() const { return (int64_t{1} << (bit_width - 1)) - 1; }
};

Tensor fake_quantize_weights(const Tensor& x, const WeightQuantizer& q);

// Unsigned activation quantizer over a learned range e^t with 2^n - 1
// steps; values land on k * e^t / (2^n - 1). Same straight-through rule.
Tensor fake_quantize_act(const Tensor& x, int bits, const Tensor& log_range);

// Per-tensor activation range: a moving-average of batch maxima during the
// first search epoch, then a trainable log-range parameter.
class ActQuantizer {
 public:
  ActQuantizer() : log_range_(Tensor::scalar(0.0f, true)) {}

  // Calibration observes batch maxima only while gradients are enabled,
  // so validation passes never perturb the estimate.
  Tensor apply(const Tensor& x, int bits) const;

  void begin_calibration();
  void end_calibration();
  bool calibrating() const { return calibrating_; }

  Tensor& log_range() { return log_range_; }
  const Tensor& log_range() const { return log_range_; }
  // The range the quantizer is currently using (EMA estimate while
  // calibrating, e^t afterwards).
  double current_range() const;

 private:
  Tensor log_range_;
  bool calibrating_ = false;
  mutable double ema_ = 0.0;
  mutable bool ema_seeded_ = false;
};

// Drops the least-significant bit of the 8-bit integer code: value
// m * r/255 maps to floor(m/2) * r/127. Models the 7-bit D/A and A/D
// converters at analog-channel boundaries. Straight-through gradient.
// With `checked`, inputs off the 8-bit grid raise an error.
Tensor truncate_lsb(const Tensor& x, double range, bool checked = true);

struct BnParams {
  Tensor gamma;  // [C]
  Tensor beta;   // [C]
  Tensor mean;   // [C] running mean
  Tensor var;    // [C] running variance
  double eps = 1e-5;
};

// Folds inference-mode batch normalization into the preceding conv/fc:
//   W'_c = W_c * gamma_c / sqrt(var_c + eps)
//   b'_c = (b_c - mean_c) * gamma_c / sqrt(var_c + eps) + beta_c
// An undefined bias folds as zero.
std::pair<Tensor, Tensor> fold_bn(const Tensor& conv_weight, const Tensor& conv_bias,
                                  const BnParams& bn);

}  // namespace odimo
