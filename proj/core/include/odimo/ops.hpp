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

#include <vector>

#include "odimo/tensor.hpp"

namespace odimo {

// Elementwise / scalar arithmetic.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
// 1/sqrt(v + eps); used by batch-norm statistics.
Tensor rsqrt(const Tensor& v, double eps);

// y[n,co,oy,ox] = b[co] + sum_{ci,ky,kx} x[n,g*Cg+ci,...] * w[co,ci,ky,kx],
// cross-correlation with zero padding. groups=1 is a dense conv; groups=C_in
// with one filter per channel is a depthwise conv. Bias may be undefined.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
              int padding, int groups = 1);
// y = x * w^T + b for x:[N,F_in], w:[F_out,F_in]. Bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor relu(const Tensor& x);
Tensor max_pool2d(const Tensor& x, int window, int stride);
// [N,C,H,W] -> [N,C]
Tensor global_avg_pool(const Tensor& x);

// Row-wise softmax with temperature over the last axis, max-subtracted.
Tensor softmax_temp(const Tensor& x, double tau);
// Mean negative log-likelihood of integer labels under softmax(logits).
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// beta * log(sum_i exp(v_i / beta)) over scalar tensors. Upper-bounds the
// true max by at most beta*ln(n) and converges to it as beta -> 0.
Tensor smooth_max(const std::vector<Tensor>& values, double beta);

// Reductions.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// [R,C] -> [C], summing each column.
Tensor col_sum(const Tensor& m);
// [K] (or flat) -> scalar view of element i.
Tensor index_scalar(const Tensor& v, int64_t i);

// Broadcast arithmetic along the leading / channel dimension.
Tensor scale_rows(const Tensor& t, const Tensor& coeffs);        // t[d0,...] * c[d0]
Tensor scale_channels(const Tensor& x, const Tensor& g);         // x[N,C,H,W] * g[C]
Tensor shift_channels(const Tensor& x, const Tensor& b);         // x[N,C,H,W] + b[C]
Tensor channel_mean(const Tensor& x);                            // mean over N,H,W -> [C]

// Exact ceil in the forward pass, identity gradient in the backward pass.
// Keeps training-time cost terms numerically equal to the discrete cost.
Tensor ceil_ste(const Tensor& x);

// Same data in row-major order under a new shape (element count preserved).
Tensor reshape(const Tensor& x, Shape shape);

// [R,C] -> [R], selecting one column.
Tensor col_select(const Tensor& m, int64_t col);

// Row gather/scatter along dim0 (weights) and channel gather/scatter for
// activations ([N,C,H,W] or [N,C]); used to assemble per-accelerator
// channel groups.
Tensor gather_rows(const Tensor& t, const std::vector<int64_t>& idx);
Tensor gather_channels(const Tensor& x, const std::vector<int64_t>& idx);
Tensor scatter_channels(const std::vector<Tensor>& parts,
                        const std::vector<std::vector<int64_t>>& positions,
                        int64_t total_channels);

// Non-differentiable helpers.
int64_t argmax_row(const std::vector<real>& data, int64_t row, int64_t cols);

}  // namespace odimo
