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

#include "odimo/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace odimo {

int digital_index(const std::vector<AcceleratorSpec>& accels) {
  ODIMO_CHECK(!accels.empty(), "no accelerators");
  int best = 0;
  for (size_t i = 1; i < accels.size(); ++i)
    if (accels[i].weight_bits > accels[static_cast<size_t>(best)].weight_bits)
      best = static_cast<int>(i);
  return best;
}

namespace {

int fallback_accel(const std::vector<AcceleratorSpec>& accels, LayerKind kind) {
  for (size_t i = 0; i < accels.size(); ++i)
    if (accels[i].supports(kind)) return static_cast<int>(i);
  fail(strcat_msg("no accelerator supports ", layer_kind_name(kind), " layers"));
}

MappingDecision skeleton(const Network& net) {
  MappingDecision d;
  for (int idx : net.quantizable()) {
    d.layer_names.push_back(net.desc().nodes[static_cast<size_t>(idx)].name);
    d.assignments.emplace_back(
        static_cast<size_t>(net.desc().nodes[static_cast<size_t>(idx)].out_channels), 0);
  }
  return d;
}

}  // namespace

MappingDecision all_single(const Network& net, const std::vector<AcceleratorSpec>& accels,
                           int accel_index, std::vector<std::string>* warnings) {
  ODIMO_CHECK(accel_index >= 0 && accel_index < static_cast<int>(accels.size()),
              strcat_msg("accelerator index ", accel_index, " out of range"));
  MappingDecision d = skeleton(net);
  for (size_t l = 0; l < d.assignments.size(); ++l) {
    const LayerKind kind = net.layer_spec(net.quantizable()[l]).kind;
    int target = accel_index;
    if (!accels[static_cast<size_t>(target)].supports(kind)) {
      target = fallback_accel(accels, kind);
      if (warnings)
        warnings->push_back(strcat_msg("layer '", d.layer_names[l], "' (",
                                       layer_kind_name(kind), ") is not supported by '",
                                       accels[static_cast<size_t>(accel_index)].name,
                                       "', falling back to '",
                                       accels[static_cast<size_t>(target)].name, "'"));
    }
    std::fill(d.assignments[l].begin(), d.assignments[l].end(), target);
  }
  return d;
}

MappingDecision io8_backbone_ternary(const Network& net,
                                     const std::vector<AcceleratorSpec>& accels) {
  const size_t n_layers = net.quantizable().size();
  ODIMO_CHECK(n_layers >= 3,
              strcat_msg("io/backbone mapping needs at least 3 conv/fc layers, network has ",
                         n_layers));
  const int io = digital_index(accels);
  int backbone = 0;
  for (size_t i = 1; i < accels.size(); ++i)
    if (accels[i].weight_bits < accels[static_cast<size_t>(backbone)].weight_bits)
      backbone = static_cast<int>(i);

  MappingDecision d = skeleton(net);
  for (size_t l = 0; l < n_layers; ++l) {
    const LayerKind kind = net.layer_spec(net.quantizable()[l]).kind;
    int target = (l == 0 || l + 1 == n_layers) ? io : backbone;
    if (!accels[static_cast<size_t>(target)].supports(kind))
      target = fallback_accel(accels, kind);
    std::fill(d.assignments[l].begin(), d.assignments[l].end(), target);
  }
  return d;
}

namespace {

constexpr int64_t kUnreachable = std::numeric_limits<int64_t>::max() / 4;

// Candidate comparator for min-cost splits: cost, then digital channels
// (max), then lexicographically larger counts with the digital
// accelerator hoisted first.
struct SplitCandidate {
  double cost = std::numeric_limits<double>::infinity();
  std::vector<int64_t> counts;
};

bool better_split(const SplitCandidate& a, const SplitCandidate& b, int digital) {
  if (a.cost != b.cost) return a.cost < b.cost;
  if (a.counts.empty() || b.counts.empty()) return !a.counts.empty();
  const int64_t ad = a.counts[static_cast<size_t>(digital)];
  const int64_t bd = b.counts[static_cast<size_t>(digital)];
  if (ad != bd) return ad > bd;
  for (size_t i = 0; i < a.counts.size(); ++i) {
    if (static_cast<int>(i) == digital) continue;
    if (a.counts[i] != b.counts[i]) return a.counts[i] > b.counts[i];
  }
  return false;
}

double split_cost(const LayerSpec& layer, const std::vector<int64_t>& counts,
                  const std::vector<AcceleratorSpec>& accels, Objective objective) {
  const CostBreakdown bd = cost_breakdown_exact(layer, counts, accels);
  return objective == Objective::Latency ? static_cast<double>(bd.latency) : bd.energy;
}

// Exhaustive scan over the C_out+1 two-way splits (plus the degenerate
// single-accelerator case).
SplitCandidate enumerate_small(const LayerSpec& layer,
                               const std::vector<AcceleratorSpec>& accels,
                               Objective objective, const std::vector<bool>& usable,
                               int digital) {
  const size_t n = accels.size();
  SplitCandidate best;
  std::vector<int64_t> counts(n, 0);
  if (n == 1) {
    counts[0] = layer.c_out;
    ODIMO_CHECK(usable[0], "single accelerator cannot run this layer");
    return {split_cost(layer, counts, accels, objective), counts};
  }
  for (int64_t c0 = 0; c0 <= layer.c_out; ++c0) {
    counts[0] = c0;
    counts[1] = layer.c_out - c0;
    if ((counts[0] > 0 && !usable[0]) || (counts[1] > 0 && !usable[1])) continue;
    SplitCandidate cand{split_cost(layer, counts, accels, objective), counts};
    if (better_split(cand, best, digital)) best = cand;
  }
  ODIMO_CHECK(!best.counts.empty(), "no feasible split for layer");
  return best;
}

// Suffix DP over the accelerator sequence `order` (digital hoisted first):
// best[i][c] = minimal completion value for accels order[i..] given c
// channels. For latency the completion value is the max; for energy the
// (P_act - P_idle)-weighted latency sum under a cap M on every latency.
struct SuffixDp {
  // value table and, per (i, c), nothing else: reconstruction re-queries.
  std::vector<std::vector<double>> best;
};

SuffixDp run_suffix_dp(const LayerSpec& layer, const std::vector<AcceleratorSpec>& accels,
                       const std::vector<int>& order, const std::vector<bool>& usable,
                       bool latency_mode, double cap) {
  const size_t n = order.size();
  const int64_t c_out = layer.c_out;
  SuffixDp dp;
  dp.best.assign(n + 1, std::vector<double>(static_cast<size_t>(c_out) + 1,
                                            std::numeric_limits<double>::infinity()));
  dp.best[n][0] = 0.0;
  for (size_t i = n; i-- > 0;) {
    const auto& acc = accels[static_cast<size_t>(order[i])];
    const double weight = acc.p_act - acc.p_idle;
    for (int64_t c = 0; c <= c_out; ++c) {
      const int64_t kmax = usable[static_cast<size_t>(order[i])] ? c : 0;
      for (int64_t k = 0; k <= kmax; ++k) {
        const double lat = static_cast<double>(exact_latency(acc, layer, k));
        if (!latency_mode && lat > cap) continue;
        const double rest = dp.best[i + 1][static_cast<size_t>(c - k)];
        if (rest == std::numeric_limits<double>::infinity()) continue;
        const double value = latency_mode ? std::max(lat, rest) : weight * lat + rest;
        if (value < dp.best[i][static_cast<size_t>(c)])
          dp.best[i][static_cast<size_t>(c)] = value;
      }
    }
  }
  return dp;
}

// Greedy reconstruction: at each position take the largest k that still
// reaches the optimal value; with digital hoisted first this realizes the
// documented tie-break exactly.
std::vector<int64_t> reconstruct(const LayerSpec& layer,
                                 const std::vector<AcceleratorSpec>& accels,
                                 const std::vector<int>& order,
                                 const std::vector<bool>& usable, bool latency_mode,
                                 double cap, const SuffixDp& dp) {
  const size_t n = order.size();
  std::vector<int64_t> counts(accels.size(), 0);
  int64_t c = layer.c_out;
  double target = dp.best[0][static_cast<size_t>(c)];
  ODIMO_CHECK(target != std::numeric_limits<double>::infinity(),
              "no feasible split for layer");
  for (size_t i = 0; i < n; ++i) {
    const auto& acc = accels[static_cast<size_t>(order[i])];
    const double weight = acc.p_act - acc.p_idle;
    const int64_t kmax = usable[static_cast<size_t>(order[i])] ? c : 0;
    for (int64_t k = kmax; k >= 0; --k) {
      const double lat = static_cast<double>(exact_latency(acc, layer, k));
      if (!latency_mode && lat > cap) continue;
      const double rest = dp.best[i + 1][static_cast<size_t>(c - k)];
      if (rest == std::numeric_limits<double>::infinity()) continue;
      const double value = latency_mode ? std::max(lat, rest) : weight * lat + rest;
      if (value <= target + 1e-9) {
        counts[static_cast<size_t>(order[i])] = k;
        c -= k;
        target = latency_mode ? target : target - weight * lat;
        break;
      }
    }
  }
  ODIMO_CHECK(c == 0, "reconstruction failed to place all channels");
  return counts;
}

SplitCandidate solve_dp(const LayerSpec& layer, const std::vector<AcceleratorSpec>& accels,
                        Objective objective, const std::vector<bool>& usable, int digital) {
  std::vector<int> order;
  order.push_back(digital);
  for (size_t i = 0; i < accels.size(); ++i)
    if (static_cast<int>(i) != digital) order.push_back(static_cast<int>(i));

  if (objective == Objective::Latency) {
    SuffixDp dp = run_suffix_dp(layer, accels, order, usable, true, 0.0);
    auto counts = reconstruct(layer, accels, order, usable, true, 0.0, dp);
    return {split_cost(layer, counts, accels, objective), counts};
  }

  // Energy depends on the layer makespan M; scan the finite set of
  // achievable per-accelerator latencies as caps and keep the best
  // resulting split under the documented comparator.
  std::set<int64_t> caps;
  for (size_t i = 0; i < accels.size(); ++i) {
    if (!usable[i]) continue;
    for (int64_t k = 0; k <= layer.c_out; ++k)
      caps.insert(exact_latency(accels[i], layer, k));
  }
  double idle_sum = 0.0;
  for (const auto& acc : accels) idle_sum += acc.p_idle;
  (void)idle_sum;

  SplitCandidate best;
  for (int64_t cap : caps) {
    SuffixDp dp = run_suffix_dp(layer, accels, order, usable, false,
                                static_cast<double>(cap));
    if (dp.best[0][static_cast<size_t>(layer.c_out)] ==
        std::numeric_limits<double>::infinity())
      continue;
    auto counts =
        reconstruct(layer, accels, order, usable, false, static_cast<double>(cap), dp);
    SplitCandidate cand{split_cost(layer, counts, accels, objective), counts};
    if (better_split(cand, best, digital)) best = cand;
  }
  ODIMO_CHECK(!best.counts.empty(), "no feasible split for layer");
  return best;
}

}  // namespace

std::vector<int64_t> min_cost_layer(const LayerSpec& layer,
                                    const std::vector<AcceleratorSpec>& accels,
                                    Objective objective) {
  std::vector<bool> usable(accels.size());
  for (size_t i = 0; i < accels.size(); ++i) usable[i] = accels[i].supports(layer.kind);
  const int digital = digital_index(accels);
  const SplitCandidate best =
      accels.size() <= 2 ? enumerate_small(layer, accels, objective, usable, digital)
                         : solve_dp(layer, accels, objective, usable, digital);
  return best.counts;
}

MappingDecision min_cost(const Network& net, const std::vector<AcceleratorSpec>& accels,
                         Objective objective) {
  MappingDecision d = skeleton(net);
  for (size_t l = 0; l < d.assignments.size(); ++l) {
    const LayerSpec spec = net.layer_spec(net.quantizable()[l]);
    const auto counts = min_cost_layer(spec, accels, objective);
    auto& assign = d.assignments[l];
    size_t c = 0;
    for (size_t a = 0; a < counts.size(); ++a)
      for (int64_t k = 0; k < counts[a]; ++k) assign[c++] = static_cast<int>(a);
    ODIMO_CHECK(c == assign.size(), "split does not cover the layer");
  }
  return d;
}

}  // namespace odimo
