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

#include "odimo/quantize.hpp"

#include <algorithm>
#include <cmath>

namespace odimo {

Tensor fake_quantize_weights(const Tensor& x, const WeightQuantizer& q) {
  ODIMO_CHECK(q.bit_width >= 2,
              strcat_msg("weight quantizer needs bit_width >= 2, got ", q.bit_width));
  ODIMO_CHECK(q.log_scale.defined() && q.log_scale.size() == 1,
              "weight quantizer scale must be a scalar tensor");
  const double scale = std::exp(static_cast<double>(q.log_scale.data()[0]));
  const double levels = static_cast<double>(q.levels());
  const double step = scale / levels;

  std::vector<real> out(x.data().size());
  for (size_t i = 0; i < out.size(); ++i) {
    const double u = static_cast<double>(x.data()[i]) / scale;
    const double uc = std::clamp(u, -1.0, 1.0);
    out[i] = static_cast<real>(step * std::round(levels * uc));
  }

  Tensor s = q.log_scale;
  return Tensor::make_op(
      "fake_quantize_weights", x.shape(), std::move(out), {x, s},
      [x, s, scale](TensorImpl& node) {
        const bool need_x = x.impl()->requires_grad;
        const bool need_s = s.impl()->requires_grad;
        if (need_x) x.impl()->ensure_grad();
        if (need_s) s.impl()->ensure_grad();
        double gs = 0.0;
        for (size_t i = 0; i < node.grad.size(); ++i) {
          const double xi = x.data()[i];
          const bool inside = std::abs(xi / scale) <= 1.0;
          if (need_x && inside) x.impl()->grad[i] += node.grad[i];
          if (need_s)
            gs += static_cast<double>(node.grad[i]) *
                  (static_cast<double>(node.data[i]) - (inside ? xi : 0.0));
        }
        if (need_s) s.impl()->grad[0] += static_cast<real>(gs);
      });
}

Tensor fake_quantize_act(const Tensor& x, int bits, const Tensor& log_range) {
  ODIMO_CHECK(bits >= 2 && bits <= 16, strcat_msg("activation bits out of range: ", bits));
  ODIMO_CHECK(log_range.defined() && log_range.size() == 1,
              "activation quantizer range must be a scalar tensor");
  const double range = std::exp(static_cast<double>(log_range.data()[0]));
  const double levels = static_cast<double>((int64_t{1} << bits) - 1);
  const double step = range / levels;

  std::vector<real> out(x.data().size());
  for (size_t i = 0; i < out.size(); ++i) {
    const double u = static_cast<double>(x.data()[i]) / range;
    const double uc = std::clamp(u, 0.0, 1.0);
    out[i] = static_cast<real>(step * std::round(levels * uc));
  }

  Tensor t = log_range;
  return Tensor::make_op(
      "fake_quantize_act", x.shape(), std::move(out), {x, t},
      [x, t, range](TensorImpl& node) {
        const bool need_x = x.impl()->requires_grad;
        const bool need_t = t.impl()->requires_grad;
        if (need_x) x.impl()->ensure_grad();
        if (need_t) t.impl()->ensure_grad();
        double gt = 0.0;
        for (size_t i = 0; i < node.grad.size(); ++i) {
          const double xi = x.data()[i];
          const bool inside = xi >= 0.0 && xi <= range;
          if (need_x && inside) x.impl()->grad[i] += node.grad[i];
          if (need_t)
            gt += static_cast<double>(node.grad[i]) *
                  (static_cast<double>(node.data[i]) - (inside ? xi : 0.0));
        }
        if (need_t) t.impl()->grad[0] += static_cast<real>(gt);
      });
}

Tensor ActQuantizer::apply(const Tensor& x, int bits) const {
  if (calibrating_) {
    if (grad_enabled()) {
      double mx = 0.0;
      for (real v : x.data()) mx = std::max(mx, static_cast<double>(v));
      if (!ema_seeded_) {
        ema_ = mx;
        ema_seeded_ = true;
      } else {
        ema_ = 0.9 * ema_ + 0.1 * mx;
      }
    }
    // Quantize against the current estimate without training the range.
    Tensor frozen = Tensor::scalar(static_cast<real>(std::log(std::max(ema_, 1e-6))));
    return fake_quantize_act(x, bits, frozen);
  }
  return fake_quantize_act(x, bits, log_range_);
}

double ActQuantizer::current_range() const {
  if (calibrating_) return std::max(ema_, 1e-6);
  return std::exp(static_cast<double>(log_range_.item()));
}

void ActQuantizer::begin_calibration() {
  calibrating_ = true;
  ema_seeded_ = false;
  ema_ = 0.0;
}

void ActQuantizer::end_calibration() {
  calibrating_ = false;
  if (ema_seeded_)
    log_range_.data()[0] = static_cast<real>(std::log(std::max(ema_, 1e-6)));
}

Tensor truncate_lsb(const Tensor& x, double range, bool checked) {
  ODIMO_CHECK(range > 0, "truncate_lsb: range must be positive");
  std::vector<real> out(x.data().size());
  for (size_t i = 0; i < out.size(); ++i) {
    const double code = static_cast<double>(x.data()[i]) * 255.0 / range;
    const double rounded = std::round(code);
    if (checked)
      ODIMO_CHECK(std::abs(code - rounded) <= 1e-2,
                  strcat_msg("truncate_lsb: value ", x.data()[i],
                             " is not on the 8-bit grid of range ", range));
    const int64_t m = std::clamp<int64_t>(static_cast<int64_t>(rounded), 0, 255);
    const int64_t k = m >> 1;
    out[i] = static_cast<real>(range * (static_cast<double>(k) / 127.0));
  }
  return Tensor::make_op("truncate_lsb", x.shape(), std::move(out), {x},
                         [x](TensorImpl& node) {
                           if (!x.impl()->requires_grad) return;
                           x.impl()->ensure_grad();
                           for (size_t i = 0; i < node.grad.size(); ++i)
                             x.impl()->grad[i] += node.grad[i];
                         });
}

std::pair<Tensor, Tensor> fold_bn(const Tensor& conv_weight, const Tensor& conv_bias,
                                  const BnParams& bn) {
  const int64_t c = conv_weight.dim(0);
  for (const Tensor* t : {&bn.gamma, &bn.beta, &bn.mean, &bn.var})
    ODIMO_CHECK(t->defined() && t->size() == c,
                strcat_msg("fold_bn: BN parameter size does not match C_out=", c));
  if (conv_bias.defined())
    ODIMO_CHECK(conv_bias.size() == c, "fold_bn: bias size does not match C_out");

  const int64_t per_ch = conv_weight.size() / c;
  Tensor w = Tensor::zeros(conv_weight.shape());
  Tensor b = Tensor::zeros({c});
  for (int64_t ch = 0; ch < c; ++ch) {
    const double denom = static_cast<double>(bn.var.data()[static_cast<size_t>(ch)]) + bn.eps;
    ODIMO_CHECK(denom > 0, strcat_msg("fold_bn: var + eps <= 0 for channel ", ch));
    const double f = static_cast<double>(bn.gamma.data()[static_cast<size_t>(ch)]) / std::sqrt(denom);
    for (int64_t i = 0; i < per_ch; ++i)
      w.data()[static_cast<size_t>(ch * per_ch + i)] =
          static_cast<real>(conv_weight.data()[static_cast<size_t>(ch * per_ch + i)] * f);
    const double bias_in = conv_bias.defined()
                               ? static_cast<double>(conv_bias.data()[static_cast<size_t>(ch)])
                               : 0.0;
    b.data()[static_cast<size_t>(ch)] = static_cast<real>(
        (bias_in - static_cast<double>(bn.mean.data()[static_cast<size_t>(ch)])) * f +
        static_cast<double>(bn.beta.data()[static_cast<size_t>(ch)]));
  }
  return {w, b};
}

}  // namespace odimo
