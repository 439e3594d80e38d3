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

#include "odimo/accel.hpp"
#include "odimo/network.hpp"

namespace odimo {

// Per-layer accelerator assignment, one entry per output channel, aligned
// with Network::quantizable() order.
//
// JSON schema: {"layers": [{"name": <layer>, "assignments": [<int>, ...]}]}
struct MappingDecision {
  std::vector<std::string> layer_names;
  std::vector<std::vector<int>> assignments;

  size_t layer_count() const { return layer_names.size(); }

  // Channels per accelerator for one layer.
  std::vector<int64_t> counts(size_t layer, size_t num_accels) const;

  // Fraction of all channels on analog-flagged accelerators, in percent.
  double analog_channel_pct(const std::vector<AcceleratorSpec>& accels) const;

  // Every channel must sit on an accelerator that supports the layer kind.
  void validate(const Network& net, const std::vector<AcceleratorSpec>& accels) const;

  std::string to_json() const;
  static MappingDecision from_json(const std::string& text);
  void save(const std::string& path) const;
  static MappingDecision load(const std::string& path);
};

}  // namespace odimo
