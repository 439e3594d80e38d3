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

#include "odimo/reorder.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "json.hpp"

namespace odimo {

using ordered_json = nlohmann::ordered_json;

ChannelPermutation ChannelPermutation::identity(int64_t n) {
  ChannelPermutation p;
  p.order.resize(static_cast<size_t>(n));
  std::iota(p.order.begin(), p.order.end(), int64_t{0});
  p.inverse = p.order;
  return p;
}

ChannelPermutation ChannelPermutation::from_order(std::vector<int64_t> order) {
  ChannelPermutation p;
  p.inverse.assign(order.size(), -1);
  for (size_t i = 0; i < order.size(); ++i) {
    const int64_t o = order[i];
    ODIMO_CHECK(o >= 0 && o < static_cast<int64_t>(order.size()) &&
                    p.inverse[static_cast<size_t>(o)] < 0,
                "permutation is not a bijection");
    p.inverse[static_cast<size_t>(o)] = static_cast<int64_t>(i);
  }
  p.order = std::move(order);
  return p;
}

bool ChannelPermutation::is_identity() const {
  for (size_t i = 0; i < order.size(); ++i)
    if (order[i] != static_cast<int64_t>(i)) return false;
  return true;
}

ChannelPermutation plan_permutation(const std::vector<int>& assignments) {
  std::vector<int64_t> order(assignments.size());
  std::iota(order.begin(), order.end(), int64_t{0});
  std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
    return assignments[static_cast<size_t>(a)] < assignments[static_cast<size_t>(b)];
  });
  return ChannelPermutation::from_order(std::move(order));
}

std::vector<SubLayer> split_layer(const std::vector<int>& assignments) {
  std::vector<SubLayer> slices;
  for (size_t c = 0; c < assignments.size();) {
    size_t end = c;
    while (end < assignments.size() && assignments[end] == assignments[c]) ++end;
    slices.push_back({assignments[c], static_cast<int64_t>(c),
                      static_cast<int64_t>(end - c)});
    c = end;
  }
  return slices;
}

namespace {

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(size_t n) : parent(n) {
    std::iota(parent.begin(), parent.end(), 0);
  }
  int find(int x) {
    while (parent[static_cast<size_t>(x)] != x) {
      parent[static_cast<size_t>(x)] = parent[static_cast<size_t>(parent[static_cast<size_t>(x)])];
      x = parent[static_cast<size_t>(x)];
    }
    return x;
  }
  void unite(int a, int b) { parent[static_cast<size_t>(find(a))] = find(b); }
};

// Permutes dim0 slices of a тensor. (order[new] = old)
Tensor permute_rows(const Tensor& t, const ChannelPermutation& p) {
  ODIMO_CHECK(t.dim(0) == p.size(), "permutation size does not match rows");
  const int64_t rest = t.size() / t.dim(0);
  Tensor out = Tensor::zeros(t.shape(), t.requires_grad());
  for (int64_t r = 0; r < p.size(); ++r)
    std::copy_n(t.data().begin() + p.order[static_cast<size_t>(r)] * rest, rest,
                out.data().begin() + r * rest);
  return out;
}

// Permutes the input-channel dimension (dim1) of a conv weight.
Tensor permute_in_channels(const Tensor& w, const ChannelPermutation& p) {
  ODIMO_CHECK(w.rank() == 4 && w.dim(1) == p.size(),
              "input-channel permutation does not match weight");
  const int64_t cout = w.dim(0), cin = w.dim(1), inner = w.dim(2) * w.dim(3);
  Tensor out = Tensor::zeros(w.shape(), w.requires_grad());
  for (int64_t co = 0; co < cout; ++co)
    for (int64_t ci = 0; ci < cin; ++ci)
      std::copy_n(w.data().begin() + (co * cin + p.order[static_cast<size_t>(ci)]) * inner,
                  inner, out.data().begin() + (co * cin + ci) * inner);
  return out;
}

// Permutes fc input features given the channel permutation of the
// producing tensor; spatial = H*W of the flattened input (1 when the
// producer is already flat).
Tensor permute_fc_inputs(const Tensor& w, const ChannelPermutation& p, int64_t spatial) {
  ODIMO_CHECK(w.rank() == 2 && w.dim(1) == p.size() * spatial,
              strcat_msg("fc weight has ", w.dim(1), " inputs, permutation covers ",
                         p.size() * spatial));
  const int64_t fout = w.dim(0), fin = w.dim(1);
  Tensor out = Tensor::zeros(w.shape(), w.requires_grad());
  for (int64_t fo = 0; fo < fout; ++fo)
    for (int64_t c = 0; c < p.size(); ++c)
      std::copy_n(w.data().begin() + fo * fin + p.order[static_cast<size_t>(c)] * spatial,
                  spatial, out.data().begin() + fo * fin + c * spatial);
  return out;
}

}  // namespace

std::string ReorderedNetwork::manifest_json() const {
  ordered_json doc;
  doc["layers"] = ordered_json::array();
  for (const auto& l : layers) {
    ordered_json layer;
    layer["name"] = l.name;
    layer["permutation"] = l.perm.order;
    layer["assignments"] = l.assignments;
    layer["sub_layers"] = ordered_json::array();
    for (const auto& s : l.sub_layers) {
      ordered_json sub;
      sub["accelerator"] = s.accelerator;
      sub["out_start"] = s.out_start;
      sub["out_count"] = s.out_count;
      layer["sub_layers"].push_back(std::move(sub));
    }
    layer["contiguous"] = l.contiguous;
    doc["layers"].push_back(std::move(layer));
  }
  doc["output_permutation"] = output_perm.order;
  return doc.dump(2) + "\n";
}

ReorderedNetwork apply_reorder(const Network& net, const MappingDecision& decision) {
  const NetworkDesc& desc = net.desc();
  const auto& quantizable = net.quantizable();
  ODIMO_CHECK(decision.assignments.size() == quantizable.size(),
              strcat_msg("decision covers ", decision.assignments.size(),
                         " layers, network has ", quantizable.size()));

  // Group nodes whose channel orders are structurally tied. Node ids are
  // offset by one so the network input occupies slot 0. Convs and fcs own
  // their output order; depthwise/pool/gap propagate their input's order;
  // adds tie both inputs and their own output together.
  const size_t n_nodes = desc.nodes.size();
  UnionFind uf(n_nodes + 1);
  for (size_t i = 0; i < n_nodes; ++i) {
    const NodeDesc& nd = desc.nodes[i];
    const int self = static_cast<int>(i) + 1;
    const bool propagates = nd.kind == NodeKind::MaxPool || nd.kind == NodeKind::Gap ||
                            nd.kind == NodeKind::Add ||
                            (nd.kind == NodeKind::Conv && nd.depthwise);
    if (!propagates) continue;
    for (const auto& in : nd.inputs)
      uf.unite(self, desc.node_index(in) + 1);
  }

  // Decision lookup per node index.
  std::vector<int> layer_of(n_nodes, -1);
  for (size_t l = 0; l < quantizable.size(); ++l)
    layer_of[static_cast<size_t>(quantizable[l])] = static_cast<int>(l);

  // One permutation per group: identity when the group touches the
  // network input, otherwise planned from its earliest conv/fc producer.
  std::vector<int> group_primary(n_nodes + 1, -1);  // node id + 1, 0 = input
  for (size_t i = 0; i < n_nodes; ++i) {
    const NodeDesc& nd = desc.nodes[i];
    const bool owns = (nd.kind == NodeKind::Conv && !nd.depthwise) || nd.kind == NodeKind::Fc;
    if (!owns) continue;
    const int root = uf.find(static_cast<int>(i) + 1);
    if (group_primary[static_cast<size_t>(root)] < 0)
      group_primary[static_cast<size_t>(root)] = static_cast<int>(i) + 1;
  }
  const int input_root = uf.find(0);
  group_primary[static_cast<size_t>(input_root)] = 0;  // input pins identity

  auto group_perm_of = [&](int node_plus1) -> ChannelPermutation {
    const int root = uf.find(node_plus1);
    const int primary = group_primary[static_cast<size_t>(root)];
    ODIMO_CHECK(primary >= 0, "channel group has no order owner");
    int64_t channels;
    if (node_plus1 == 0) {
      channels = desc.in_channels;
    } else {
      const NodeShape& sh = net.shapes()[static_cast<size_t>(node_plus1 - 1)];
      channels = sh.c;
    }
    if (primary == 0) return ChannelPermutation::identity(channels);
    const int l = layer_of[static_cast<size_t>(primary - 1)];
    ODIMO_CHECK(l >= 0, "group primary is not a mapped layer");
    ChannelPermutation p = plan_permutation(decision.assignments[static_cast<size_t>(l)]);
    ODIMO_CHECK(p.size() == channels, "tied nodes disagree on channel count");
    return p;
  };

  ReorderedNetwork result;
  result.net = net.clone();
  result.decision = decision;

  // Producer side: permute conv/fc output channels and their assignments.
  for (size_t l = 0; l < quantizable.size(); ++l) {
    const int idx = quantizable[l];
    const ChannelPermutation p = group_perm_of(idx + 1);
    auto& st = result.net.state(idx);
    st.weight = permute_rows(st.weight, p);
    st.bias = permute_rows(st.bias, p);
    result.decision.assignments[l] = p.apply(decision.assignments[l]);

    LayerReorderInfo info;
    info.name = decision.layer_names[l];
    info.perm = p;
    info.assignments = result.decision.assignments[l];
    info.sub_layers = split_layer(info.assignments);
    std::set<int> used(info.assignments.begin(), info.assignments.end());
    info.contiguous = info.sub_layers.size() == used.size();
    result.layers.push_back(std::move(info));
  }

  // Consumer side: compensate along input channels.
  for (size_t i = 0; i < n_nodes; ++i) {
    const NodeDesc& nd = desc.nodes[i];
    if (nd.kind != NodeKind::Conv && nd.kind != NodeKind::Fc) continue;
    if (nd.kind == NodeKind::Conv && nd.depthwise) continue;  // dim1 == 1
    const int in_plus1 = desc.node_index(nd.inputs[0]) + 1;
    const ChannelPermutation p = group_perm_of(in_plus1);
    if (p.is_identity()) continue;
    auto& st = result.net.state(static_cast<int>(i));
    if (nd.kind == NodeKind::Conv) {
      st.weight = permute_in_channels(st.weight, p);
    } else {
      const int64_t fin = st.weight.dim(1);
      const int64_t spatial = fin / p.size();
      ODIMO_CHECK(spatial * p.size() == fin,
                  strcat_msg("fc '", nd.name, "' input features (", fin,
                             ") are not a multiple of producer channels (", p.size(), ")"));
      st.weight = permute_fc_inputs(st.weight, p, spatial);
    }
  }

  // The network output order follows the last node's group.
  result.output_perm = group_perm_of(static_cast<int>(n_nodes - 1) + 1);
  return result;
}

}  // namespace odimo
