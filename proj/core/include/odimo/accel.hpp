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

#include <string>
#include <vector>

#include "odimo/config.hpp"
#include "odimo/tensor.hpp"

namespace odimo {

enum class LayerKind { Conv, Depthwise, Fc };
enum class LatencyModel { Aimc, Digital, OpsProportional };

std::string layer_kind_name(LayerKind k);
LayerKind layer_kind_from_name(const std::string& s);

// Geometry of one conv/fc layer as seen by the cost models. FC layers are
// 1x1 convs with o_x = o_y = 1; depthwise layers reduce over a single
// input channel, so they carry c_in = 1 here.
struct LayerSpec {
  int64_t c_in = 1;
  int64_t c_out = 1;
  int64_t f_x = 1, f_y = 1;
  int64_t o_x = 1, o_y = 1;
  LayerKind kind = LayerKind::Conv;
};

// One compute domain. Latency in cycles, power in arbitrary consistent
// units; the models are relative rank oracles, not absolute-time
// predictors. The parallelism constants default to the shipped
// accelerator-array sizes but are plain fields so abstract models can
// reuse the same machinery.
struct AcceleratorSpec {
  std::string name;
  int weight_bits = 8;
  int activation_bits = 8;
  LatencyModel model = LatencyModel::Digital;
  double p_act = 1.0;
  double p_idle = 0.0;
  std::vector<LayerKind> supported = {LayerKind::Conv, LayerKind::Depthwise,
                                      LayerKind::Fc};
  bool analog = false;  // counts toward the analog-channel fraction

  // aimc model: ceil(C_in*f_x*f_y / mac_block) * ceil(c/cout_block) * o_x*o_y
  //             + dma_factor * C_in * ceil(c/cout_block)
  int64_t mac_block = 1152;
  int64_t cout_block = 512;
  int64_t dma_factor = 8;  // 2 bytes/cycle * 4, weight DMA
  // digital model: ceil(c/cout_parallel) * ceil(o_y/oy_parallel)
  //                * C_in*o_x*f_x*f_y + C_in*c*f_x*f_y
  int64_t cout_parallel = 16;
  int64_t oy_parallel = 16;
  // ops_proportional model: ops_scale * C_in*f_x*f_y*o_x*o_y*c
  double ops_scale = 1.0;

  bool supports(LayerKind k) const;
};

// Exact cycle count for `c_out_assigned` output channels of `layer` on one
// accelerator; 0 channels cost 0 cycles.
int64_t exact_latency(const AcceleratorSpec& acc, const LayerSpec& layer,
                      int64_t c_out_assigned);

// Differentiable counterpart over an expected (real-valued) channel count.
// Ceils are exact in the forward pass with straight-through gradients, so
// the training-time cost equals the discrete cost at integer counts.
Tensor diff_latency(const AcceleratorSpec& acc, const LayerSpec& layer,
                    const Tensor& c_out_assigned);

// Per-layer cost with every accelerator running its share in parallel.
struct CostBreakdown {
  std::vector<int64_t> lat;  // per-accelerator cycles
  int64_t latency = 0;       // M = max_i lat_i
  double energy = 0.0;       // sum_i P_act_i*lat_i + P_idle_i*(M - lat_i)
};

CostBreakdown cost_breakdown_exact(const LayerSpec& layer,
                                   const std::vector<int64_t>& counts,
                                   const std::vector<AcceleratorSpec>& accels);

// Smooth-mode layer cost for training: M is the log-sum-exp relaxation of
// the max, so it upper-bounds the exact latency by at most beta*ln(N).
Tensor layer_latency_smooth(const LayerSpec& layer, const std::vector<Tensor>& counts,
                            const std::vector<AcceleratorSpec>& accels, double beta);
Tensor layer_energy_smooth(const LayerSpec& layer, const std::vector<Tensor>& counts,
                           const std::vector<AcceleratorSpec>& accels, double beta);

// Expected per-accelerator channel counts from softmaxed architecture
// weights: C_out_i = sum_c alpha_bar[c,i]. Rows must be probability
// vectors; the counts always sum back to C_out.
Tensor expected_channels(const Tensor& alpha_bar);

// [accelerator NAME] sections from a structured text config; order in the
// file defines accelerator indices.
std::vector<AcceleratorSpec> load_accelerators(const ConfigFile& cfg);
std::vector<AcceleratorSpec> load_accelerators_file(const std::string& path);

}  // namespace odimo
