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

#include "odimo/dataset.hpp"
#include "odimo/mapping.hpp"
#include "odimo/network.hpp"
#include "odimo/quantize.hpp"

namespace odimo {

enum class Objective { Latency, Energy };
Objective objective_from_name(const std::string& s);
std::string objective_name(Objective o);

// Knobs shared by the float/search/fine-tune training loops. Weights use
// SGD with momentum; architecture parameters and quantizer scales/ranges
// use Adam.
struct TrainOptions {
  int epochs = 30;
  int patience = 20;
  int64_t batch_size = 64;
  double lr_w = 0.05;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double lr_alpha = 0.05;
  double lr_scale = 0.01;
  bool verbose = false;
};

struct SearchOptions {
  TrainOptions train;
  double lambda = 0.0;
  Objective objective = Objective::Latency;
  double tau = 1.0;
  double tau_anneal = 1.0;    // per-epoch multiplier on tau
  double beta_scale = 0.01;   // smooth-max beta = beta_scale * mean initial latency
};

struct FitResult {
  double best_val_acc = 0.0;
  int epochs_run = 0;
  std::vector<double> epoch_loss;     // mean train loss per epoch
  std::vector<double> epoch_val_acc;  // validation accuracy per epoch
};

// Plain float training of the network (batch norm live).
FitResult pretrain(Network& net, const Dataset& ds, const TrainOptions& opts, Rng& rng);

// A network paired with its quantizers: one weight quantizer per
// (conv/fc layer, accelerator) and one activation quantizer per stored
// tensor (entry 0 quantizes the network input).
struct QuantizedModel {
  Network net;
  std::vector<AcceleratorSpec> accels;
  std::vector<std::vector<WeightQuantizer>> weight_quant;
  std::vector<ActQuantizer> act_quant;
  bool calibrated = false;

  std::vector<Tensor> quant_params() const;
};

// Builds quantizers for a BN-folded network; weight scales start at the
// per-layer max |w|, activation ranges calibrate during the first epoch.
QuantizedModel make_quantized(Network net, std::vector<AcceleratorSpec> accels);

// Per output channel c: W_eff[c] = sum_i alpha_bar[c,i] * copies[i][c].
Tensor effective_weights(const std::vector<Tensor>& quant_copies, const Tensor& alpha_bar);

struct SearchState {
  QuantizedModel model;
  std::vector<Tensor> alpha;       // per layer [C_out, N], trainable
  std::vector<Tensor> alpha_mask;  // additive constants, 0 or -1e30 for
                                   // unsupported accelerators
  std::vector<double> layer_beta;  // smooth-max temperature per layer
  SearchOptions opts;
  double tau = 1.0;
  FitResult fit;
};

SearchState init_search(Network folded_net, std::vector<AcceleratorSpec> accels,
                        SearchOptions opts);

struct SearchLoss {
  Tensor loss;       // task + lambda * regularizer
  Tensor task_loss;
  Tensor reg;        // modeled cost (cycles or energy units)
  Tensor logits;
};

// One differentiable evaluation of the regularized objective on a batch.
SearchLoss search_loss(const SearchState& state, const Tensor& x,
                       const std::vector<int>& labels);

// Joint minimization over (W, alpha, scales) with validation early stop;
// restores the best-validation snapshot into the state. Aborts on NaN loss.
void run_search(SearchState& state, const Dataset& ds, Rng& rng);

// Per channel, the supported accelerator with the largest alpha; exact
// ties resolve to the lower accelerator index.
MappingDecision discretize(const SearchState& state);

// log10 of the number of distinct channel-to-accelerator mappings.
double search_space_log10(const Network& net, const std::vector<AcceleratorSpec>& accels);

// Fine-tunes weights and quantizer scales under a frozen mapping on the
// task loss only: 8-bit activation storage with LSB truncation at
// analog-channel boundaries, per-channel weight formats per the decision.
FitResult finetune(QuantizedModel& model, const MappingDecision& decision,
                   const Dataset& ds, const TrainOptions& opts, Rng& rng);

// Fake-quantized forward under a frozen mapping (the fine-tune forward
// path); used for validation inside training loops.
Tensor quantized_forward(const QuantizedModel& model, const MappingDecision& decision,
                         const Tensor& x);
double quantized_val_accuracy(const QuantizedModel& model, const MappingDecision& decision,
                              const Dataset& ds, int64_t batch_size = 256);

// Checkpoint round trips for the CLI pipeline.
void save_quantized_model(const QuantizedModel& model, const std::string& path);
QuantizedModel load_quantized_model(const std::string& path, NetworkDesc desc,
                                    std::vector<AcceleratorSpec> accels);
void save_search_state(const SearchState& state, const std::string& path);
SearchState load_search_state(const std::string& path, NetworkDesc desc,
                              std::vector<AcceleratorSpec> accels, SearchOptions opts);

}  // namespace odimo
