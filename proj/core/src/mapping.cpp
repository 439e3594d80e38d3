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

#include "odimo/mapping.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace odimo {

using ordered_json = nlohmann::ordered_json;

std::vector<int64_t> MappingDecision::counts(size_t layer, size_t num_accels) const {
  ODIMO_CHECK(layer < assignments.size(), "layer index out of range");
  std::vector<int64_t> c(num_accels, 0);
  for (int a : assignments[layer]) {
    ODIMO_CHECK(a >= 0 && a < static_cast<int>(num_accels),
                strcat_msg("assignment ", a, " outside accelerator range"));
    ++c[static_cast<size_t>(a)];
  }
  return c;
}

double MappingDecision::analog_channel_pct(const std::vector<AcceleratorSpec>& accels) const {
  int64_t total = 0, analog = 0;
  for (const auto& layer : assignments)
    for (int a : layer) {
      ++total;
      if (accels.at(static_cast<size_t>(a)).analog) ++analog;
    }
  return total == 0 ? 0.0 : 100.0 * static_cast<double>(analog) / static_cast<double>(total);
}

void MappingDecision::validate(const Network& net,
                               const std::vector<AcceleratorSpec>& accels) const {
  const auto& layers = net.quantizable();
  ODIMO_CHECK(layer_names.size() == layers.size() && assignments.size() == layers.size(),
              strcat_msg("decision covers ", layer_names.size(), " layers, network has ",
                         layers.size()));
  for (size_t l = 0; l < layers.size(); ++l) {
    const NodeDesc& nd = net.desc().nodes[static_cast<size_t>(layers[l])];
    ODIMO_CHECK(layer_names[l] == nd.name,
                strcat_msg("decision layer '", layer_names[l], "' does not match network '",
                           nd.name, "'"));
    ODIMO_CHECK(static_cast<int64_t>(assignments[l].size()) == nd.out_channels,
                strcat_msg("layer '", nd.name, "': ", assignments[l].size(),
                           " assignments for ", nd.out_channels, " channels"));
    const LayerKind kind = net.layer_spec(layers[l]).kind;
    for (int a : assignments[l]) {
      ODIMO_CHECK(a >= 0 && a < static_cast<int>(accels.size()),
                  strcat_msg("layer '", nd.name, "': accelerator index ", a, " out of range"));
      ODIMO_CHECK(accels[static_cast<size_t>(a)].supports(kind),
                  strcat_msg("layer '", nd.name, "': accelerator '",
                             accels[static_cast<size_t>(a)].name, "' does not support ",
                             layer_kind_name(kind), " layers"));
    }
  }
}

std::string MappingDecision::to_json() const {
  ordered_json doc;
  doc["layers"] = ordered_json::array();
  for (size_t l = 0; l < layer_names.size(); ++l) {
    ordered_json layer;
    layer["name"] = layer_names[l];
    layer["assignments"] = assignments[l];
    doc["layers"].push_back(std::move(layer));
  }
  return doc.dump(2) + "\n";
}

MappingDecision MappingDecision::from_json(const std::string& text) {
  MappingDecision d;
  ordered_json doc;
  try {
    doc = ordered_json::parse(text);
  } catch (const std::exception& e) {
    fail(strcat_msg("invalid mapping JSON: ", e.what()));
  }
  ODIMO_CHECK(doc.contains("layers") && doc["layers"].is_array(),
              "mapping JSON must contain a 'layers' array");
  for (const auto& layer : doc["layers"]) {
    ODIMO_CHECK(layer.contains("name") && layer.contains("assignments"),
                "mapping JSON layer needs 'name' and 'assignments'");
    d.layer_names.push_back(layer["name"].get<std::string>());
    d.assignments.push_back(layer["assignments"].get<std::vector<int>>());
  }
  return d;
}

void MappingDecision::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  ODIMO_CHECK(os.good(), strcat_msg("cannot open ", path, " for writing"));
  os << to_json();
  ODIMO_CHECK(os.good(), strcat_msg("write failed for ", path));
}

MappingDecision MappingDecision::load(const std::string& path) {
  std::ifstream is(path);
  ODIMO_CHECK(is.good(), strcat_msg("cannot open ", path));
  std::stringstream ss;
  ss << is.rdbuf();
  return from_json(ss.str());
}

}  // namespace odimo
