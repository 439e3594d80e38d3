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

#include "odimo/accel.hpp"

#include <algorithm>
#include <cmath>

#include "odimo/ops.hpp"

namespace odimo {

namespace {

int64_t ceil_div(int64_t a, int64_t b) { return (a + b - 1) / b; }

void check_count(const LayerSpec& layer, int64_t c) {
  ODIMO_CHECK(c >= 0, strcat_msg("negative channel count ", c));
  ODIMO_CHECK(c <= layer.c_out,
              strcat_msg("channel count ", c, " exceeds layer C_out=", layer.c_out));
}

}  // namespace

std::string layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "conv";
    case LayerKind::Depthwise: return "depthwise";
    case LayerKind::Fc: return "fc";
  }
  fail("unknown layer kind");
}

LayerKind layer_kind_from_name(const std::string& s) {
  if (s == "conv") return LayerKind::Conv;
  if (s == "depthwise") return LayerKind::Depthwise;
  if (s == "fc") return LayerKind::Fc;
  fail(strcat_msg("unknown layer kind '", s, "'"));
}

bool AcceleratorSpec::supports(LayerKind k) const {
  return std::find(supported.begin(), supported.end(), k) != supported.end();
}

int64_t exact_latency(const AcceleratorSpec& acc, const LayerSpec& layer,
                      int64_t c_out_assigned) {
  check_count(layer, c_out_assigned);
  const int64_t c = c_out_assigned;
  if (c == 0) return 0;
  switch (acc.model) {
    case LatencyModel::Aimc:
      return ceil_div(layer.c_in * layer.f_x * layer.f_y, acc.mac_block) *
                 ceil_div(c, acc.cout_block) * layer.o_x * layer.o_y +
             acc.dma_factor * layer.c_in * ceil_div(c, acc.cout_block);
    case LatencyModel::Digital:
      return ceil_div(c, acc.cout_parallel) * ceil_div(layer.o_y, acc.oy_parallel) *
                 layer.c_in * layer.o_x * layer.f_x * layer.f_y +
             layer.c_in * c * layer.f_x * layer.f_y;
    case LatencyModel::OpsProportional:
      return std::llround(acc.ops_scale * static_cast<double>(layer.c_in * layer.f_x *
                                                              layer.f_y * layer.o_x *
                                                              layer.o_y * c));
  }
  fail("unknown latency model");
}

Tensor diff_latency(const AcceleratorSpec& acc, const LayerSpec& layer,
                    const Tensor& c_out_assigned) {
  ODIMO_CHECK(c_out_assigned.size() == 1, "diff_latency expects a scalar channel count");
  const Tensor& c = c_out_assigned;
  switch (acc.model) {
    case LatencyModel::Aimc: {
      const double compute = static_cast<double>(
          ceil_div(layer.c_in * layer.f_x * layer.f_y, acc.mac_block) * layer.o_x *
          layer.o_y);
      const double dma = static_cast<double>(acc.dma_factor * layer.c_in);
      Tensor blocks = ceil_ste(mul_scalar(c, 1.0 / static_cast<double>(acc.cout_block)));
      return mul_scalar(blocks, compute + dma);
    }
    case LatencyModel::Digital: {
      const double tile = static_cast<double>(ceil_div(layer.o_y, acc.oy_parallel) *
                                              layer.c_in * layer.o_x * layer.f_x *
                                              layer.f_y);
      Tensor blocks = ceil_ste(mul_scalar(c, 1.0 / static_cast<double>(acc.cout_parallel)));
      Tensor dma = mul_scalar(c, static_cast<double>(layer.c_in * layer.f_x * layer.f_y));
      return add(mul_scalar(blocks, tile), dma);
    }
    case LatencyModel::OpsProportional:
      return mul_scalar(c, acc.ops_scale * static_cast<double>(layer.c_in * layer.f_x *
                                                               layer.f_y * layer.o_x *
                                                               layer.o_y));
  }
  fail("unknown latency model");
}

CostBreakdown cost_breakdown_exact(const LayerSpec& layer,
                                   const std::vector<int64_t>& counts,
                                   const std::vector<AcceleratorSpec>& accels) {
  ODIMO_CHECK(counts.size() == accels.size(),
              "one channel count per accelerator required");
  int64_t total = 0;
  for (int64_t c : counts) total += c;
  ODIMO_CHECK(total == layer.c_out,
              strcat_msg("channel counts sum to ", total, ", layer has C_out=", layer.c_out));
  CostBreakdown bd;
  bd.lat.resize(accels.size());
  for (size_t i = 0; i < accels.size(); ++i) {
    bd.lat[i] = exact_latency(accels[i], layer, counts[i]);
    bd.latency = std::max(bd.latency, bd.lat[i]);
  }
  for (size_t i = 0; i < accels.size(); ++i)
    bd.energy += accels[i].p_act * static_cast<double>(bd.lat[i]) +
                 accels[i].p_idle * static_cast<double>(bd.latency - bd.lat[i]);
  return bd;
}

namespace {

std::vector<Tensor> diff_lats(const LayerSpec& layer, const std::vector<Tensor>& counts,
                              const std::vector<AcceleratorSpec>& accels) {
  ODIMO_CHECK(counts.size() == accels.size(),
              "one channel count per accelerator required");
  double total = 0.0;
  for (const auto& c : counts) total += c.item();
  ODIMO_CHECK(std::abs(total - static_cast<double>(layer.c_out)) <= 1e-4 * std::max<double>(1, layer.c_out),
              strcat_msg("expected channel counts sum to ", total, ", layer has C_out=",
                         layer.c_out));
  std::vector<Tensor> lats;
  lats.reserve(accels.size());
  for (size_t i = 0; i < accels.size(); ++i)
    lats.push_back(diff_latency(accels[i], layer, counts[i]));
  return lats;
}

}  // namespace

Tensor layer_latency_smooth(const LayerSpec& layer, const std::vector<Tensor>& counts,
                            const std::vector<AcceleratorSpec>& accels, double beta) {
  return smooth_max(diff_lats(layer, counts, accels), beta);
}

Tensor layer_energy_smooth(const LayerSpec& layer, const std::vector<Tensor>& counts,
                           const std::vector<AcceleratorSpec>& accels, double beta) {
  auto lats = diff_lats(layer, counts, accels);
  Tensor m = smooth_max(lats, beta);
  Tensor energy;
  for (size_t i = 0; i < accels.size(); ++i) {
    Tensor term = add(mul_scalar(lats[i], accels[i].p_act - accels[i].p_idle),
                      mul_scalar(m, accels[i].p_idle));
    energy = energy.defined() ? add(energy, term) : term;
  }
  return energy;
}

Tensor expected_channels(const Tensor& alpha_bar) {
  ODIMO_CHECK(alpha_bar.rank() == 2, "expected_channels: alpha_bar must be [C_out,N]");
  const int64_t c = alpha_bar.dim(0), n = alpha_bar.dim(1);
  for (int64_t r = 0; r < c; ++r) {
    double s = 0.0;
    for (int64_t j = 0; j < n; ++j) s += alpha_bar.data()[static_cast<size_t>(r * n + j)];
    ODIMO_CHECK(std::abs(s - 1.0) <= 1e-4,
                strcat_msg("expected_channels: row ", r, " sums to ", s,
                           ", not a probability vector"));
  }
  return col_sum(alpha_bar);
}

namespace {

LatencyModel model_from_name(const std::string& s) {
  if (s == "aimc") return LatencyModel::Aimc;
  if (s == "digital") return LatencyModel::Digital;
  if (s == "ops_proportional") return LatencyModel::OpsProportional;
  fail(strcat_msg("unknown latency_model '", s,
                  "' (expected aimc | digital | ops_proportional)"));
}

}  // namespace

std::vector<AcceleratorSpec> load_accelerators(const ConfigFile& cfg) {
  std::vector<AcceleratorSpec> out;
  for (const ConfigSection* s : cfg.sections_of("accelerator")) {
    s->check_keys({"weight_bits", "activation_bits", "latency_model", "p_act", "p_idle",
                   "supported", "analog", "mac_block", "cout_block", "dma_factor",
                   "cout_parallel", "oy_parallel", "ops_scale"},
                  cfg.path);
    AcceleratorSpec a;
    ODIMO_CHECK(!s->name.empty(),
                strcat_msg(cfg.path, ": accelerator section needs a name, e.g. "
                                     "[accelerator digital]"));
    a.name = s->name;
    a.weight_bits = static_cast<int>(s->get_int("weight_bits"));
    ODIMO_CHECK(a.weight_bits >= 2, strcat_msg("accelerator ", a.name,
                                               ": weight_bits must be >= 2"));
    a.activation_bits = static_cast<int>(s->get_int("activation_bits"));
    a.model = model_from_name(s->get("latency_model"));
    a.p_act = s->get_double("p_act");
    a.p_idle = s->get_double("p_idle");
    ODIMO_CHECK(a.p_act >= a.p_idle && a.p_idle >= 0,
                strcat_msg("accelerator ", a.name, ": requires p_act >= p_idle >= 0"));
    if (s->has("supported")) {
      a.supported.clear();
      for (const auto& k : s->get_list("supported"))
        a.supported.push_back(layer_kind_from_name(k));
      ODIMO_CHECK(!a.supported.empty(),
                  strcat_msg("accelerator ", a.name, ": empty supported list"));
    }
    a.analog = s->get_bool_or("analog", a.model == LatencyModel::Aimc);
    a.mac_block = s->get_int_or("mac_block", a.mac_block);
    a.cout_block = s->get_int_or("cout_block", a.cout_block);
    a.dma_factor = s->get_int_or("dma_factor", a.dma_factor);
    a.cout_parallel = s->get_int_or("cout_parallel", a.cout_parallel);
    a.oy_parallel = s->get_int_or("oy_parallel", a.oy_parallel);
    a.ops_scale = s->get_double_or("ops_scale", a.ops_scale);
    out.push_back(std::move(a));
  }
  ODIMO_CHECK(!out.empty(), strcat_msg(cfg.path, ": no [accelerator] sections found"));
  for (size_t i = 0; i < out.size(); ++i)
    for (size_t j = i + 1; j < out.size(); ++j)
      ODIMO_CHECK(out[i].name != out[j].name,
                  strcat_msg(cfg.path, ": duplicate accelerator name '", out[i].name, "'"));
  return out;
}

std::vector<AcceleratorSpec> load_accelerators_file(const std::string& path) {
  return load_accelerators(parse_config_file(path));
}

}  // namespace odimo
