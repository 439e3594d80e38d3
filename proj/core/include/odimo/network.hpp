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
#include <string>
#include <vector>

#include "odimo/accel.hpp"
#include "odimo/config.hpp"
#include "odimo/quantize.hpp"
#include "odimo/tensor.hpp"
#include "odimo/tensor_io.hpp"

namespace odimo {

enum class NodeKind { Input, Conv, Fc, MaxPool, Gap, Add };

// Declarative layer-list description. Nodes are listed in topological
// order; `inputs` name earlier nodes ("input" refers to the network
// input). Conv/fc nodes carry an optional fused post-ReLU and optional
// batch norm (trained during float pretraining, folded before search).
struct NodeDesc {
  NodeKind kind = NodeKind::Conv;
  std::string name;
  std::vector<std::string> inputs;

  int64_t out_channels = 0;
  int kernel = 1;
  int stride = 1;
  int padding = 0;
  bool depthwise = false;
  bool relu_act = true;
  bool batch_norm = false;

  int pool_window = 2;
  int pool_stride = 2;
};

struct NodeShape {
  int64_t c = 0, h = 0, w = 0;
  bool flat = false;  // true after gap/fc: [N, c]
};

struct NetworkDesc {
  std::string name;
  int64_t in_channels = 1, in_h = 8, in_w = 8;
  int64_t num_classes = 2;
  std::vector<NodeDesc> nodes;

  int node_index(const std::string& name) const;  // -1 for "input"
};

NetworkDesc load_network(const ConfigFile& cfg);
NetworkDesc load_network_file(const std::string& path);

// Per conv/fc node hooks for the quantized forward modes. layer_op
// replaces the plain conv/fc computation (input is the already-quantized
// tensor feeding the node); output_quant runs on every stored tensor
// (after the fused ReLU), with idx = -1 for the network input.
struct ForwardHooks {
  std::function<Tensor(int idx, const Tensor& x)> layer_op;
  std::function<Tensor(int idx, const Tensor& x)> output_quant;
};

// A description bound to parameter tensors. Copyable via clone().
class Network {
 public:
  struct NodeState {
    Tensor weight;  // conv: [C_out,C_in/g,K,K]; fc: [F_out,F_in]
    Tensor bias;    // [C_out]
    // batch-norm state, live only while desc.batch_norm
    Tensor bn_gamma, bn_beta, bn_mean, bn_var;
  };

  static Network build(NetworkDesc desc, Rng& rng);

  const NetworkDesc& desc() const { return desc_; }
  NetworkDesc& desc() { return desc_; }
  const std::vector<NodeShape>& shapes() const { return shapes_; }
  NodeState& state(int idx) { return states_[static_cast<size_t>(idx)]; }
  const NodeState& state(int idx) const { return states_[static_cast<size_t>(idx)]; }

  // Indices of conv/fc nodes, in order: the mapping-relevant layers.
  const std::vector<int>& quantizable() const { return quantizable_; }
  // Cost-model geometry for a conv/fc node (depthwise reduces over a
  // single input channel, so it carries c_in = 1; fc is a 1x1 conv with
  // o_x = o_y = 1).
  LayerSpec layer_spec(int idx) const;

  // Forward to logits. `training` switches batch-norm to batch statistics
  // and updates running stats.
  Tensor forward(const Tensor& x, bool training = false,
                 const ForwardHooks* hooks = nullptr) const;

  std::vector<Tensor> parameters() const;  // trainable floats (w, b, bn affine)
  void zero_grad() const;

  // Folds every batch-norm into its conv/fc using running statistics;
  // the folded network computes the same function in eval mode.
  void fold_batch_norm();
  bool has_batch_norm() const;

  Network clone() const;

  void save_params(Checkpoint& ckpt, const std::string& prefix = "") const;
  void load_params(const Checkpoint& ckpt, const std::string& prefix = "");

 private:
  // Per-node running batch-norm stats are updated in place during
  // training-mode forward; they are buffers, not graph parameters.
  NetworkDesc desc_;
  std::vector<NodeShape> shapes_;
  std::vector<NodeState> states_;
  std::vector<int> quantizable_;
};

// argmax-vs-label accuracy in [0,100].
double accuracy_pct(const Tensor& logits, const std::vector<int>& labels);

}  // namespace odimo
