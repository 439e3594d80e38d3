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

#include "odimo/mapping.hpp"
#include "odimo/network.hpp"

namespace odimo {

// Bijection over output channels: order[new_pos] = old_pos.
struct ChannelPermutation {
  std::vector<int64_t> order;
  std::vector<int64_t> inverse;

  static ChannelPermutation identity(int64_t n);
  static ChannelPermutation from_order(std::vector<int64_t> order);
  int64_t size() const { return static_cast<int64_t>(order.size()); }
  bool is_identity() const;

  template <typename T>
  std::vector<T> apply(const std::vector<T>& v) const {
    std::vector<T> out(v.size());
    for (size_t i = 0; i < v.size(); ++i)
      out[i] = v[static_cast<size_t>(order[i])];
    return out;
  }
};

// Stable grouping permutation: channels sorted by accelerator index,
// original relative order preserved within each group.
ChannelPermutation plan_permutation(const std::vector<int>& assignments);

// One deployable slice of a layer: a contiguous output-channel range that
// runs entirely on one accelerator (full input-channel view).
struct SubLayer {
  int accelerator = 0;
  int64_t out_start = 0;
  int64_t out_count = 0;
};

// Maximal runs of equal accelerator in the (reordered) assignment vector.
// A grouped layer yields one sub-layer per accelerator in use; layers
// constrained to a shared permutation may yield more (flagged upstream).
std::vector<SubLayer> split_layer(const std::vector<int>& assignments);

struct LayerReorderInfo {
  std::string name;
  ChannelPermutation perm;
  std::vector<int> assignments;     // after reordering
  std::vector<SubLayer> sub_layers;
  bool contiguous = true;  // one sub-layer per accelerator in use
};

// The reordered network plus everything needed to interpret it: the
// per-layer permutations/slices and the final output permutation that maps
// reordered logits back to class order.
struct ReorderedNetwork {
  Network net;
  MappingDecision decision;  // assignments in the reordered channel order
  std::vector<LayerReorderInfo> layers;
  ChannelPermutation output_perm;

  std::string manifest_json() const;
};

// Permutes producer output channels (weights + bias), compensates every
// consumer along its input channels, and records contiguous sub-layer
// slices. Producers feeding a common elementwise add share one
// permutation, taken from the earliest producer in the group; the network
// function is preserved exactly up to the recorded output permutation.
ReorderedNetwork apply_reorder(const Network& net, const MappingDecision& decision);

}  // namespace odimo
