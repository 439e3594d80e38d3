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

#include "odimo/network.hpp"

#include <algorithm>
#include <cmath>

#include "odimo/ops.hpp"

namespace odimo {

int NetworkDesc::node_index(const std::string& node_name) const {
  if (node_name == "input") return -1;
  for (size_t i = 0; i < nodes.size(); ++i)
    if (nodes[i].name == node_name) return static_cast<int>(i);
  fail(strcat_msg("network '", name, "' has no node named '", node_name, "'"));
}

namespace {

NodeKind node_kind_from(const std::string& s) {
  if (s == "conv") return NodeKind::Conv;
  if (s == "fc") return NodeKind::Fc;
  if (s == "maxpool") return NodeKind::MaxPool;
  if (s == "gap") return NodeKind::Gap;
  if (s == "add") return NodeKind::Add;
  fail(strcat_msg("unknown layer type '", s, "'"));
}

// Shape inference; validates topology and arity as it goes.
std::vector<NodeShape> infer_shapes(const NetworkDesc& desc) {
  std::vector<NodeShape> shapes(desc.nodes.size());
  auto shape_of = [&](int idx) -> NodeShape {
    if (idx < 0) return NodeShape{desc.in_channels, desc.in_h, desc.in_w, false};
    return shapes[static_cast<size_t>(idx)];
  };
  for (size_t i = 0; i < desc.nodes.size(); ++i) {
    const NodeDesc& nd = desc.nodes[i];
    std::vector<int> in_idx;
    for (const auto& in : nd.inputs) {
      const int idx = desc.node_index(in);
      ODIMO_CHECK(idx < static_cast<int>(i),
                  strcat_msg("node '", nd.name, "' consumes '", in,
                             "' which is not defined before it"));
      in_idx.push_back(idx);
    }
    switch (nd.kind) {
      case NodeKind::Input:
        fail("explicit input nodes are not allowed; reference 'input'");
      case NodeKind::Conv: {
        ODIMO_CHECK(in_idx.size() == 1, strcat_msg("conv '", nd.name, "' needs one input"));
        NodeShape in = shape_of(in_idx[0]);
        ODIMO_CHECK(!in.flat, strcat_msg("conv '", nd.name, "' cannot consume a flat tensor"));
        if (nd.depthwise)
          ODIMO_CHECK(nd.out_channels == in.c,
                      strcat_msg("depthwise '", nd.name, "' must keep C=", in.c,
                                 ", got out=", nd.out_channels));
        const int64_t oh = (in.h + 2 * nd.padding - nd.kernel) / nd.stride + 1;
        const int64_t ow = (in.w + 2 * nd.padding - nd.kernel) / nd.stride + 1;
        ODIMO_CHECK(oh > 0 && ow > 0, strcat_msg("conv '", nd.name, "' output collapses"));
        shapes[i] = {nd.out_channels, oh, ow, false};
        break;
      }
      case NodeKind::Fc: {
        ODIMO_CHECK(in_idx.size() == 1, strcat_msg("fc '", nd.name, "' needs one input"));
        shapes[i] = {nd.out_channels, 1, 1, true};
        break;
      }
      case NodeKind::MaxPool: {
        ODIMO_CHECK(in_idx.size() == 1, strcat_msg("maxpool '", nd.name, "' needs one input"));
        NodeShape in = shape_of(in_idx[0]);
        ODIMO_CHECK(!in.flat, "maxpool cannot consume a flat tensor");
        const int64_t oh = (in.h - nd.pool_window) / nd.pool_stride + 1;
        const int64_t ow = (in.w - nd.pool_window) / nd.pool_stride + 1;
        ODIMO_CHECK(oh > 0 && ow > 0, strcat_msg("maxpool '", nd.name, "' output collapses"));
        shapes[i] = {in.c, oh, ow, false};
        break;
      }
      case NodeKind::Gap: {
        ODIMO_CHECK(in_idx.size() == 1, strcat_msg("gap '", nd.name, "' needs one input"));
        NodeShape in = shape_of(in_idx[0]);
        ODIMO_CHECK(!in.flat, "gap cannot consume a flat tensor");
        shapes[i] = {in.c, 1, 1, true};
        break;
      }
      case NodeKind::Add: {
        ODIMO_CHECK(in_idx.size() == 2, strcat_msg("add '", nd.name, "' needs two inputs"));
        NodeShape a = shape_of(in_idx[0]), b = shape_of(in_idx[1]);
        ODIMO_CHECK(a.c == b.c && a.h == b.h && a.w == b.w && a.flat == b.flat,
                    strcat_msg("add '", nd.name, "' input shapes differ"));
        shapes[i] = a;
        break;
      }
    }
  }
  return shapes;
}

}  // namespace

NetworkDesc load_network(const ConfigFile& cfg) {
  const ConfigSection& net = cfg.require_one("network");
  net.check_keys({"name", "input", "classes"}, cfg.path);
  NetworkDesc desc;
  desc.name = net.get_or("name", "net");
  desc.num_classes = net.get_int("classes");
  {
    auto dims = net.get_list("input");
    // input = CxHxW written with commas or 'x'
    if (dims.size() == 1) {
      std::vector<std::string> parts;
      std::string cur;
      for (char ch : dims[0]) {
        if (ch == 'x') {
          parts.push_back(cur);
          cur.clear();
        } else {
          cur += ch;
        }
      }
      parts.push_back(cur);
      dims = parts;
    }
    ODIMO_CHECK(dims.size() == 3, strcat_msg(cfg.path, ": input must be CxHxW"));
    desc.in_channels = std::stoll(dims[0]);
    desc.in_h = std::stoll(dims[1]);
    desc.in_w = std::stoll(dims[2]);
  }

  for (const ConfigSection* s : cfg.sections_of("layer")) {
    ODIMO_CHECK(!s->name.empty(), strcat_msg(cfg.path, ": layer section needs a name"));
    NodeDesc nd;
    nd.name = s->name;
    nd.kind = node_kind_from(s->get("type"));
    nd.inputs = s->get_list("from");
    switch (nd.kind) {
      case NodeKind::Conv:
        s->check_keys({"type", "from", "out", "kernel", "stride", "pad", "bn", "act",
                       "depthwise"},
                      cfg.path);
        nd.out_channels = s->get_int("out");
        nd.kernel = static_cast<int>(s->get_int_or("kernel", 3));
        nd.stride = static_cast<int>(s->get_int_or("stride", 1));
        nd.padding = static_cast<int>(s->get_int_or("pad", nd.kernel / 2));
        nd.depthwise = s->get_bool_or("depthwise", false);
        nd.batch_norm = s->get_bool_or("bn", false);
        nd.relu_act = s->get_or("act", "relu") == "relu";
        break;
      case NodeKind::Fc:
        s->check_keys({"type", "from", "out", "act"}, cfg.path);
        nd.out_channels = s->get_int("out");
        nd.relu_act = s->get_or("act", "none") == "relu";
        break;
      case NodeKind::MaxPool:
        s->check_keys({"type", "from", "window", "stride"}, cfg.path);
        nd.pool_window = static_cast<int>(s->get_int_or("window", 2));
        nd.pool_stride = static_cast<int>(s->get_int_or("stride", nd.pool_window));
        break;
      case NodeKind::Gap:
      case NodeKind::Add:
        s->check_keys({"type", "from"}, cfg.path);
        break;
      case NodeKind::Input:
        break;
    }
    for (const auto& other : desc.nodes)
      ODIMO_CHECK(other.name != nd.name,
                  strcat_msg(cfg.path, ": duplicate layer name '", nd.name, "'"));
    desc.nodes.push_back(std::move(nd));
  }
  ODIMO_CHECK(!desc.nodes.empty(), strcat_msg(cfg.path, ": no [layer] sections"));
  infer_shapes(desc);  // validates
  return desc;
}

NetworkDesc load_network_file(const std::string& path) {
  return load_network(parse_config_file(path));
}

Network Network::build(NetworkDesc desc, Rng& rng) {
  Network net;
  net.shapes_ = infer_shapes(desc);
  net.desc_ = std::move(desc);
  net.states_.resize(net.desc_.nodes.size());

  for (size_t i = 0; i < net.desc_.nodes.size(); ++i) {
    const NodeDesc& nd = net.desc_.nodes[i];
    NodeState& st = net.states_[i];
    const auto in_shape = [&]() -> NodeShape {
      const int idx = net.desc_.node_index(nd.inputs.at(0));
      if (idx < 0)
        return NodeShape{net.desc_.in_channels, net.desc_.in_h, net.desc_.in_w, false};
      return net.shapes_[static_cast<size_t>(idx)];
    };
    if (nd.kind == NodeKind::Conv) {
      net.quantizable_.push_back(static_cast<int>(i));
      const NodeShape in = in_shape();
      const int64_t cg = nd.depthwise ? 1 : in.c;
      const double fan_in = static_cast<double>(cg * nd.kernel * nd.kernel);
      st.weight = Tensor::randn({nd.out_channels, cg, nd.kernel, nd.kernel}, rng, 0.0,
                                std::sqrt(2.0 / fan_in), true);
      st.bias = Tensor::zeros({nd.out_channels}, true);
      if (nd.batch_norm) {
        st.bn_gamma = Tensor::full({nd.out_channels}, 1.0f, true);
        st.bn_beta = Tensor::zeros({nd.out_channels}, true);
        st.bn_mean = Tensor::zeros({nd.out_channels});
        st.bn_var = Tensor::full({nd.out_channels}, 1.0f);
      }
    } else if (nd.kind == NodeKind::Fc) {
      net.quantizable_.push_back(static_cast<int>(i));
      const NodeShape in = in_shape();
      const int64_t fin = in.flat ? in.c : in.c * in.h * in.w;
      st.weight = Tensor::randn({nd.out_channels, fin}, rng, 0.0,
                                std::sqrt(2.0 / static_cast<double>(fin)), true);
      st.bias = Tensor::zeros({nd.out_channels}, true);
    }
  }
  return net;
}

LayerSpec Network::layer_spec(int idx) const {
  const NodeDesc& nd = desc_.nodes.at(static_cast<size_t>(idx));
  const NodeShape& out = shapes_.at(static_cast<size_t>(idx));
  LayerSpec spec;
  spec.c_out = nd.out_channels;
  if (nd.kind == NodeKind::Fc) {
    spec.kind = LayerKind::Fc;
    spec.c_in = state(idx).weight.dim(1);
    spec.f_x = spec.f_y = 1;
    spec.o_x = spec.o_y = 1;
  } else {
    spec.kind = nd.depthwise ? LayerKind::Depthwise : LayerKind::Conv;
    spec.c_in = state(idx).weight.dim(1);  // 1 for depthwise
    spec.f_x = spec.f_y = nd.kernel;
    spec.o_x = out.w;
    spec.o_y = out.h;
  }
  return spec;
}

Tensor Network::forward(const Tensor& x, bool training, const ForwardHooks* hooks) const {
  ODIMO_CHECK(x.rank() == 4 && x.dim(1) == desc_.in_channels && x.dim(2) == desc_.in_h &&
                  x.dim(3) == desc_.in_w,
              strcat_msg("network input must be [N,", desc_.in_channels, ",", desc_.in_h,
                         ",", desc_.in_w, "], got ", shape_str(x.shape())));
  auto quant = [&](int idx, Tensor t) {
    if (hooks && hooks->output_quant) return hooks->output_quant(idx, t);
    return t;
  };

  std::vector<Tensor> outs(desc_.nodes.size());
  Tensor input = quant(-1, x);
  auto value_of = [&](int idx) { return idx < 0 ? input : outs[static_cast<size_t>(idx)]; };

  for (size_t i = 0; i < desc_.nodes.size(); ++i) {
    const NodeDesc& nd = desc_.nodes[i];
    const NodeState& st = states_[i];
    Tensor out;
    switch (nd.kind) {
      case NodeKind::Conv:
      case NodeKind::Fc: {
        Tensor in = value_of(desc_.node_index(nd.inputs[0]));
        if (nd.kind == NodeKind::Fc && in.rank() == 4)
          in = reshape(in, {in.dim(0), in.dim(1) * in.dim(2) * in.dim(3)});
        if (hooks && hooks->layer_op) {
          out = hooks->layer_op(static_cast<int>(i), in);
        } else {
          out = nd.kind == NodeKind::Fc
                    ? linear(in, st.weight, st.bias)
                    : conv2d(in, st.weight, st.bias, nd.stride, nd.padding,
                             nd.depthwise ? static_cast<int>(in.dim(1)) : 1);
        }
        if (nd.batch_norm) {
          if (training) {
            Tensor mu = channel_mean(out);
            Tensor centered = shift_channels(out, neg(mu));
            Tensor var_b = channel_mean(mul(centered, centered));
            Tensor inv = rsqrt(var_b, 1e-5);
            out = shift_channels(scale_channels(centered, mul(inv, st.bn_gamma)),
                                 st.bn_beta);
            // running stats (buffers, not part of the graph)
            auto& m = const_cast<Tensor&>(st.bn_mean).data();
            auto& v = const_cast<Tensor&>(st.bn_var).data();
            for (size_t c = 0; c < m.size(); ++c) {
              m[c] = static_cast<real>(0.9 * m[c] + 0.1 * mu.data()[c]);
              v[c] = static_cast<real>(0.9 * v[c] + 0.1 * var_b.data()[c]);
            }
          } else {
            Tensor f = rsqrt(st.bn_var, 1e-5);
            Tensor scale = mul(st.bn_gamma, f);
            Tensor offset = sub(st.bn_beta, mul(st.bn_mean, scale));
            out = shift_channels(scale_channels(out, scale), offset);
          }
        }
        if (nd.relu_act) out = relu(out);
        break;
      }
      case NodeKind::MaxPool:
        out = max_pool2d(value_of(desc_.node_index(nd.inputs[0])), nd.pool_window,
                         nd.pool_stride);
        break;
      case NodeKind::Gap:
        out = global_avg_pool(value_of(desc_.node_index(nd.inputs[0])));
        break;
      case NodeKind::Add:
        out = add(value_of(desc_.node_index(nd.inputs[0])),
                  value_of(desc_.node_index(nd.inputs[1])));
        break;
      case NodeKind::Input:
        fail("unexpected input node");
    }
    // the final node's output is the logits and stays unquantized
    const bool is_last = i + 1 == desc_.nodes.size();
    outs[i] = is_last ? out : quant(static_cast<int>(i), out);
  }
  return outs.back();
}

std::vector<Tensor> Network::parameters() const {
  std::vector<Tensor> params;
  for (size_t i = 0; i < states_.size(); ++i) {
    const NodeState& st = states_[i];
    if (st.weight.defined()) params.push_back(st.weight);
    if (st.bias.defined()) params.push_back(st.bias);
    if (st.bn_gamma.defined()) params.push_back(st.bn_gamma);
    if (st.bn_beta.defined()) params.push_back(st.bn_beta);
  }
  return params;
}

void Network::zero_grad() const {
  for (const auto& p : parameters()) const_cast<Tensor&>(p).zero_grad();
}

bool Network::has_batch_norm() const {
  return std::any_of(desc_.nodes.begin(), desc_.nodes.end(),
                     [](const NodeDesc& nd) { return nd.batch_norm; });
}

void Network::fold_batch_norm() {
  for (size_t i = 0; i < desc_.nodes.size(); ++i) {
    NodeDesc& nd = desc_.nodes[i];
    if (!nd.batch_norm) continue;
    NodeState& st = states_[i];
    BnParams bn{st.bn_gamma, st.bn_beta, st.bn_mean, st.bn_var, 1e-5};
    auto [w, b] = fold_bn(st.weight, st.bias, bn);
    st.weight = w.set_requires_grad(true);
    st.bias = b.set_requires_grad(true);
    st.bn_gamma = st.bn_beta = st.bn_mean = st.bn_var = Tensor();
    nd.batch_norm = false;
  }
}

Network Network::clone() const {
  Network copy;
  copy.desc_ = desc_;
  copy.shapes_ = shapes_;
  copy.quantizable_ = quantizable_;
  copy.states_.resize(states_.size());
  for (size_t i = 0; i < states_.size(); ++i) {
    const NodeState& src = states_[i];
    NodeState& dst = copy.states_[i];
    auto cl = [](const Tensor& t) { return t.defined() ? t.clone() : Tensor(); };
    dst.weight = cl(src.weight);
    dst.bias = cl(src.bias);
    dst.bn_gamma = cl(src.bn_gamma);
    dst.bn_beta = cl(src.bn_beta);
    dst.bn_mean = cl(src.bn_mean);
    dst.bn_var = cl(src.bn_var);
  }
  return copy;
}

void Network::save_params(Checkpoint& ckpt, const std::string& prefix) const {
  for (size_t i = 0; i < desc_.nodes.size(); ++i) {
    const NodeState& st = states_[i];
    const std::string base = prefix + desc_.nodes[i].name;
    if (st.weight.defined()) ckpt.put_tensor(base + ".weight", st.weight);
    if (st.bias.defined()) ckpt.put_tensor(base + ".bias", st.bias);
    if (st.bn_gamma.defined()) {
      ckpt.put_tensor(base + ".bn.gamma", st.bn_gamma);
      ckpt.put_tensor(base + ".bn.beta", st.bn_beta);
      ckpt.put_tensor(base + ".bn.mean", st.bn_mean);
      ckpt.put_tensor(base + ".bn.var", st.bn_var);
    }
  }
}

void Network::load_params(const Checkpoint& ckpt, const std::string& prefix) {
  for (size_t i = 0; i < desc_.nodes.size(); ++i) {
    NodeState& st = states_[i];
    const std::string base = prefix + desc_.nodes[i].name;
    auto load_into = [&](Tensor& dst, const std::string& name, bool trainable) {
      if (!ckpt.has(name)) {
        ODIMO_CHECK(!dst.defined(), strcat_msg("checkpoint is missing record '", name, "'"));
        return;
      }
      Tensor t = ckpt.get_tensor(name);
      ODIMO_CHECK(dst.defined() && dst.shape() == t.shape(),
                  strcat_msg("checkpoint record '", name, "' has shape ",
                             shape_str(t.shape()), ", expected ",
                             dst.defined() ? shape_str(dst.shape()) : "none"));
      dst.copy_from(t);
      dst.set_requires_grad(trainable);
    };
    load_into(st.weight, base + ".weight", true);
    load_into(st.bias, base + ".bias", true);
    if (st.bn_gamma.defined()) {
      load_into(st.bn_gamma, base + ".bn.gamma", true);
      load_into(st.bn_beta, base + ".bn.beta", true);
      load_into(st.bn_mean, base + ".bn.mean", false);
      load_into(st.bn_var, base + ".bn.var", false);
    }
  }
}

double accuracy_pct(const Tensor& logits, const std::vector<int>& labels) {
  ODIMO_CHECK(logits.rank() == 2 && logits.dim(0) == static_cast<int64_t>(labels.size()),
              "accuracy: logits/labels mismatch");
  const int64_t n = logits.dim(0), k = logits.dim(1);
  int64_t correct = 0;
  for (int64_t i = 0; i < n; ++i)
    if (argmax_row(logits.data(), i, k) == labels[static_cast<size_t>(i)]) ++correct;
  return 100.0 * static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace odimo
