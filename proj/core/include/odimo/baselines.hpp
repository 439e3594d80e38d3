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
#include "odimo/search.hpp"

namespace odimo {

// The accelerator whose channel count breaks cost ties: highest weight
// precision, lowest index among equals.
int digital_index(const std::vector<AcceleratorSpec>& accels);

// Every channel of every layer on one accelerator. Layers the accelerator
// cannot execute fall back to the lowest-index supporting accelerator and
// produce a warning.
MappingDecision all_single(const Network& net, const std::vector<AcceleratorSpec>& accels,
                           int accel_index, std::vector<std::string>* warnings = nullptr);

// First and last conv/fc layers fully on the highest-precision
// accelerator, everything between on the lowest-precision one (subject to
// per-layer support). Requires at least three conv/fc layers.
MappingDecision io8_backbone_ternary(const Network& net,
                                     const std::vector<AcceleratorSpec>& accels);

// Accuracy-agnostic per-layer optimum: the channel split minimizing the
// exact latency (max over accelerators) or exact energy. Among minimizers
// the digital channel count is maximized, then counts compare
// lexicographically (digital first, then accelerator index order). N = 2
// is solved by enumerating the C_out+1 splits, N > 2 by dynamic
// programming over accelerators.
MappingDecision min_cost(const Network& net, const std::vector<AcceleratorSpec>& accels,
                         Objective objective);

// The split min_cost chose for one layer (exposed for verification).
std::vector<int64_t> min_cost_layer(const LayerSpec& layer,
                                    const std::vector<AcceleratorSpec>& accels,
                                    Objective objective);

}  // namespace odimo
