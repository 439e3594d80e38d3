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

#include "odimo/search.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "json.hpp"
#include "odimo/ops.hpp"
#include "odimo/optim.hpp"

namespace odimo {

using ordered_json = nlohmann::ordered_json;

Objective objective_from_name(const std::string& s) {
  if (s == "latency") return Objective::Latency;
  if (s == "energy") return Objective::Energy;
  fail(strcat_msg("unknown objective '", s, "' (expected latency | energy)"));
}

std::string objective_name(Objective o) {
  return o == Objective::Latency ? "latency" : "energy";
}

namespace {

constexpr real kMaskedLogit = -1e30f;

std::vector<Tensor> weight_params(const Network& net) {
  std::vector<Tensor> out;
  for (int idx : net.quantizable()) {
    out.push_back(net.state(idx).weight);
    out.push_back(net.state(idx).bias);
  }
  return out;
}

// Copies of parameter values for best-state snapshots.
struct Snapshot {
  std::vector<std::vector<real>> values;

  static Snapshot take(const std::vector<Tensor>& params) {
    Snapshot s;
    s.values.reserve(params.size());
    for (const auto& p : params) s.values.push_back(p.data());
    return s;
  }
  void restore(std::vector<Tensor>& params) const {
    ODIMO_CHECK(params.size() == values.size(), "snapshot/parameter mismatch");
    for (size_t i = 0; i < params.size(); ++i) params[i].data() = values[i];
  }
};

double mean_epoch_loss(const std::vector<double>& losses) {
  double s = 0.0;
  for (double v : losses) s += v;
  return losses.empty() ? 0.0 : s / static_cast<double>(losses.size());
}

std::vector<int64_t> val_indices(const Dataset& ds) {
  std::vector<int64_t> idx;
  for (int64_t i = ds.train_count; i < ds.size(); ++i) idx.push_back(i);
  return idx;
}

double validate(const Dataset& ds, int64_t batch_size,
                const std::function<Tensor(const Tensor&)>& fwd) {
  NoGradGuard ng;
  auto idx = val_indices(ds);
  ODIMO_CHECK(!idx.empty(), "dataset has no validation split");
  int64_t correct = 0;
  for (size_t start = 0; start < idx.size(); start += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(idx.size(), start + static_cast<size_t>(batch_size));
    std::vector<int64_t> chunk(idx.begin() + static_cast<int64_t>(start),
                               idx.begin() + static_cast<int64_t>(end));
    auto [x, labels] = make_batch(ds, chunk);
    Tensor logits = fwd(x);
    for (int64_t i = 0; i < logits.dim(0); ++i)
      if (argmax_row(logits.data(), i, logits.dim(1)) == labels[static_cast<size_t>(i)])
        ++correct;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(idx.size());
}

}  // namespace

FitResult pretrain(Network& net, const Dataset& ds, const TrainOptions& opts, Rng& rng) {
  Sgd sgd(net.parameters(), opts.lr_w, opts.momentum, opts.weight_decay);
  auto params = net.parameters();
  Snapshot best = Snapshot::take(params);
  FitResult fit;
  int stale = 0;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    std::vector<double> losses;
    for (const auto& batch : epoch_batches(ds, opts.batch_size, rng)) {
      auto [x, labels] = make_batch(ds, batch);
      sgd.zero_grad();
      Tensor loss = cross_entropy(net.forward(x, /*training=*/true), labels);
      ODIMO_CHECK(std::isfinite(static_cast<double>(loss.item())),
                  strcat_msg("pretrain diverged (non-finite loss) at epoch ", epoch));
      loss.backward();
      sgd.step();
      losses.push_back(loss.item());
    }
    const double val_acc =
        validate(ds, opts.batch_size, [&](const Tensor& x) { return net.forward(x, false); });
    fit.epoch_loss.push_back(mean_epoch_loss(losses));
    fit.epoch_val_acc.push_back(val_acc);
    ++fit.epochs_run;
    if (opts.verbose)
      std::printf("pretrain epoch %3d  loss %.4f  val %.2f%%\n", epoch,
                  fit.epoch_loss.back(), val_acc);
    if (val_acc > fit.best_val_acc) {
      fit.best_val_acc = val_acc;
      best = Snapshot::take(params);
      stale = 0;
    } else if (++stale >= opts.patience) {
      break;
    }
  }
  best.restore(params);
  return fit;
}

std::vector<Tensor> QuantizedModel::quant_params() const {
  std::vector<Tensor> out;
  for (const auto& per_layer : weight_quant)
    for (const auto& wq : per_layer) out.push_back(wq.log_scale);
  for (const auto& aq : act_quant) out.push_back(aq.log_range());
  return out;
}

QuantizedModel make_quantized(Network net, std::vector<AcceleratorSpec> accels) {
  ODIMO_CHECK(!net.has_batch_norm(), "fold batch norm before building quantizers");
  ODIMO_CHECK(!accels.empty(), "at least one accelerator required");
  QuantizedModel m;
  m.accels = std::move(accels);
  m.weight_quant.resize(net.quantizable().size());
  for (size_t l = 0; l < net.quantizable().size(); ++l) {
    const Tensor& w = net.state(net.quantizable()[l]).weight;
    double mx = 1e-3;
    for (real v : w.data()) mx = std::max(mx, std::abs(static_cast<double>(v)));
    for (const auto& acc : m.accels) {
      WeightQuantizer q;
      q.bit_width = acc.weight_bits;
      q.log_scale = Tensor::scalar(static_cast<real>(std::log(mx)), true);
      m.weight_quant[l].push_back(std::move(q));
    }
  }
  m.act_quant.resize(net.desc().nodes.size() + 1);
  m.net = std::move(net);
  return m;
}

Tensor effective_weights(const std::vector<Tensor>& quant_copies, const Tensor& alpha_bar) {
  ODIMO_CHECK(!quant_copies.empty(), "effective_weights: no quantized copies");
  ODIMO_CHECK(alpha_bar.rank() == 2 &&
                  alpha_bar.dim(1) == static_cast<int64_t>(quant_copies.size()),
              strcat_msg("effective_weights: alpha_bar ", shape_str(alpha_bar.shape()),
                         " does not match ", quant_copies.size(), " copies"));
  Tensor out;
  for (size_t i = 0; i < quant_copies.size(); ++i) {
    ODIMO_CHECK(quant_copies[i].shape() == quant_copies[0].shape(),
                "effective_weights: quantized copies must share a shape");
    ODIMO_CHECK(quant_copies[i].dim(0) == alpha_bar.dim(0),
                strcat_msg("effective_weights: ", alpha_bar.dim(0), " alpha rows for ",
                           quant_copies[i].dim(0), " output channels"));
    Tensor term = scale_rows(quant_copies[i], col_select(alpha_bar, static_cast<int64_t>(i)));
    out = out.defined() ? add(out, term) : term;
  }
  return out;
}

SearchState init_search(Network folded_net, std::vector<AcceleratorSpec> accels,
                        SearchOptions opts) {
  SearchState st;
  st.model = make_quantized(std::move(folded_net), std::move(accels));
  st.opts = opts;
  st.tau = opts.tau;
  const auto& net = st.model.net;
  const size_t n_acc = st.model.accels.size();
  for (size_t l = 0; l < net.quantizable().size(); ++l) {
    const int idx = net.quantizable()[l];
    const LayerSpec spec = net.layer_spec(idx);
    const int64_t c = spec.c_out;
    st.alpha.push_back(Tensor::zeros({c, static_cast<int64_t>(n_acc)}, true));
    Tensor mask = Tensor::zeros({c, static_cast<int64_t>(n_acc)});
    int supported = 0;
    for (size_t a = 0; a < n_acc; ++a) {
      if (st.model.accels[a].supports(spec.kind)) {
        ++supported;
        continue;
      }
      for (int64_t ch = 0; ch < c; ++ch)
        mask.data()[static_cast<size_t>(ch * static_cast<int64_t>(n_acc) +
                                        static_cast<int64_t>(a))] = kMaskedLogit;
    }
    ODIMO_CHECK(supported > 0,
                strcat_msg("no accelerator supports layer '",
                           net.desc().nodes[static_cast<size_t>(idx)].name, "'"));
    st.alpha_mask.push_back(std::move(mask));

    // Smooth-max temperature scaled to the layer's initial cost magnitude.
    double mean_lat = 0.0;
    for (size_t a = 0; a < n_acc; ++a) {
      if (!st.model.accels[a].supports(spec.kind)) continue;
      const int64_t share = (c + supported - 1) / supported;
      mean_lat += static_cast<double>(exact_latency(st.model.accels[a], spec, share));
    }
    mean_lat /= static_cast<double>(supported);
    st.layer_beta.push_back(std::max(1e-6, opts.beta_scale * mean_lat));
  }
  return st;
}

namespace {

// Shared context for the search-mode forward: per-batch softmaxed alphas
// plus hooks that mix per-accelerator fake-quantized weight copies.
struct SearchForward {
  const SearchState* state;
  std::vector<Tensor> alpha_bar;  // per layer
  int act_bits;
  ForwardHooks hooks;

  explicit SearchForward(const SearchState& st) : state(&st) {
    const auto& model = st.model;
    act_bits = 16;
    for (const auto& acc : model.accels) act_bits = std::min(act_bits, acc.activation_bits);
    alpha_bar.reserve(st.alpha.size());
    for (size_t l = 0; l < st.alpha.size(); ++l)
      alpha_bar.push_back(softmax_temp(add(st.alpha[l], st.alpha_mask[l]), st.tau));

    hooks.layer_op = [this](int idx, const Tensor& x) { return layer(idx, x); };
    hooks.output_quant = [this](int idx, const Tensor& t) {
      auto& aq = const_cast<QuantizedModel&>(state->model).act_quant[static_cast<size_t>(idx + 1)];
      return aq.apply(t, act_bits);
    };
  }

  int layer_ordinal(int idx) const {
    const auto& q = state->model.net.quantizable();
    const auto it = std::find(q.begin(), q.end(), idx);
    ODIMO_CHECK(it != q.end(), "node is not a quantizable layer");
    return static_cast<int>(it - q.begin());
  }

  Tensor layer(int idx, const Tensor& x) const {
    const auto& model = state->model;
    const NodeDesc& nd = model.net.desc().nodes[static_cast<size_t>(idx)];
    const Network::NodeState& ns = model.net.state(idx);
    const int l = layer_ordinal(idx);
    const LayerKind kind = model.net.layer_spec(idx).kind;

    std::vector<Tensor> copies;
    std::vector<int64_t> copy_accels;
    for (size_t a = 0; a < model.accels.size(); ++a) {
      if (!model.accels[a].supports(kind)) continue;
      copies.push_back(fake_quantize_weights(ns.weight, model.weight_quant[static_cast<size_t>(l)][a]));
      copy_accels.push_back(static_cast<int64_t>(a));
    }
    // Mix only supported copies; masked columns are exactly zero anyway.
    Tensor w_eff;
    for (size_t k = 0; k < copies.size(); ++k) {
      Tensor term =
          scale_rows(copies[k], col_select(alpha_bar[static_cast<size_t>(l)], copy_accels[k]));
      w_eff = w_eff.defined() ? add(w_eff, term) : term;
    }
    if (nd.kind == NodeKind::Fc) return linear(x, w_eff, ns.bias);
    return conv2d(x, w_eff, ns.bias, nd.stride, nd.padding,
                  nd.depthwise ? static_cast<int>(x.dim(1)) : 1);
  }

  // Modeled cost term over the expected per-accelerator channel counts.
  Tensor regularizer() const {
    const auto& model = state->model;
    Tensor total;
    for (size_t l = 0; l < alpha_bar.size(); ++l) {
      const int idx = model.net.quantizable()[l];
      const LayerSpec spec = model.net.layer_spec(idx);
      Tensor counts = expected_channels(alpha_bar[l]);
      std::vector<Tensor> per_acc;
      for (size_t a = 0; a < model.accels.size(); ++a)
        per_acc.push_back(index_scalar(counts, static_cast<int64_t>(a)));
      Tensor cost =
          state->opts.objective == Objective::Latency
              ? layer_latency_smooth(spec, per_acc, model.accels, state->layer_beta[l])
              : layer_energy_smooth(spec, per_acc, model.accels, state->layer_beta[l]);
      total = total.defined() ? add(total, cost) : cost;
    }
    return total;
  }
};

}  // namespace

SearchLoss search_loss(const SearchState& state, const Tensor& x,
                       const std::vector<int>& labels) {
  SearchForward fwd(state);
  SearchLoss out;
  out.logits = state.model.net.forward(x, false, &fwd.hooks);
  out.task_loss = cross_entropy(out.logits, labels);
  out.reg = fwd.regularizer();
  out.loss = add(out.task_loss, mul_scalar(out.reg, state.opts.lambda));
  return out;
}

void run_search(SearchState& state, const Dataset& ds, Rng& rng) {
  auto& model = state.model;
  auto wparams = weight_params(model.net);
  auto qparams = model.quant_params();
  Sgd sgd(wparams, state.opts.train.lr_w, state.opts.train.momentum,
          state.opts.train.weight_decay);
  Adam adam_alpha(state.alpha, state.opts.train.lr_alpha);
  Adam adam_scale(qparams, state.opts.train.lr_scale);

  std::vector<Tensor> all_params = wparams;
  all_params.insert(all_params.end(), state.alpha.begin(), state.alpha.end());
  all_params.insert(all_params.end(), qparams.begin(), qparams.end());
  Snapshot best = Snapshot::take(all_params);

  FitResult fit;
  int stale = 0;
  for (int epoch = 0; epoch < state.opts.train.epochs; ++epoch) {
    const bool calibrating = epoch == 0 && !model.calibrated;
    if (calibrating)
      for (auto& aq : model.act_quant) aq.begin_calibration();

    std::vector<double> losses;
    for (const auto& batch : epoch_batches(ds, state.opts.train.batch_size, rng)) {
      auto [x, labels] = make_batch(ds, batch);
      sgd.zero_grad();
      adam_alpha.zero_grad();
      adam_scale.zero_grad();
      SearchLoss out = search_loss(state, x, labels);
      ODIMO_CHECK(std::isfinite(static_cast<double>(out.loss.item())),
                  strcat_msg("search diverged (non-finite loss) at epoch ", epoch,
                             "; lower lr_w/lr_alpha or lambda"));
      out.loss.backward();
      sgd.step();
      adam_alpha.step();
      adam_scale.step();
      losses.push_back(out.loss.item());
    }
    if (calibrating) {
      for (auto& aq : model.act_quant) aq.end_calibration();
      model.calibrated = true;
    }

    const double val_acc = validate(ds, state.opts.train.batch_size, [&](const Tensor& x) {
      SearchForward fwd(state);
      return model.net.forward(x, false, &fwd.hooks);
    });
    fit.epoch_loss.push_back(mean_epoch_loss(losses));
    fit.epoch_val_acc.push_back(val_acc);
    ++fit.epochs_run;
    if (state.opts.train.verbose)
      std::printf("search epoch %3d  loss %.4f  val %.2f%%  tau %.3f\n", epoch,
                  fit.epoch_loss.back(), val_acc, state.tau);

    if (val_acc > fit.best_val_acc) {
      fit.best_val_acc = val_acc;
      best = Snapshot::take(all_params);
      stale = 0;
    } else if (++stale >= state.opts.train.patience) {
      break;
    }
    state.tau *= state.opts.tau_anneal;
  }
  best.restore(all_params);
  state.fit = fit;
}

MappingDecision discretize(const SearchState& state) {
  MappingDecision d;
  const auto& net = state.model.net;
  for (size_t l = 0; l < state.alpha.size(); ++l) {
    const int idx = net.quantizable()[l];
    const LayerKind kind = net.layer_spec(idx).kind;
    d.layer_names.push_back(net.desc().nodes[static_cast<size_t>(idx)].name);
    const Tensor& a = state.alpha[l];
    const int64_t c = a.dim(0), n = a.dim(1);
    std::vector<int> assign(static_cast<size_t>(c));
    for (int64_t ch = 0; ch < c; ++ch) {
      int best = -1;
      real best_v = 0;
      for (int64_t acc = 0; acc < n; ++acc) {
        if (!state.model.accels[static_cast<size_t>(acc)].supports(kind)) continue;
        const real v = a.data()[static_cast<size_t>(ch * n + acc)];
        // strict >: exact ties keep the lower accelerator index
        if (best < 0 || v > best_v) {
          best = static_cast<int>(acc);
          best_v = v;
        }
      }
      ODIMO_CHECK(best >= 0, "no supported accelerator for channel");
      assign[static_cast<size_t>(ch)] = best;
    }
    d.assignments.push_back(std::move(assign));
  }
  return d;
}

double search_space_log10(const Network& net, const std::vector<AcceleratorSpec>& accels) {
  double total = 0.0;
  for (int idx : net.quantizable()) {
    const LayerSpec spec = net.layer_spec(idx);
    int supported = 0;
    for (const auto& acc : accels)
      if (acc.supports(spec.kind)) ++supported;
    total += static_cast<double>(spec.c_out) * std::log10(std::max(1, supported));
  }
  return total;
}

namespace {

// Frozen-mapping forward: per-accelerator channel groups with the exact
// storage formats (8-bit activations, LSB truncation at analog
// boundaries). Shared by fine-tuning and validation.
struct GroupedForward {
  const QuantizedModel* model;
  // per layer: (accelerator, channel indices), non-empty groups only
  std::vector<std::vector<std::pair<int, std::vector<int64_t>>>> groups;
  ForwardHooks hooks;

  GroupedForward(const QuantizedModel& m, const MappingDecision& decision) : model(&m) {
    decision.validate(m.net, m.accels);
    const auto& q = m.net.quantizable();
    groups.resize(q.size());
    for (size_t l = 0; l < q.size(); ++l) {
      for (size_t a = 0; a < m.accels.size(); ++a) {
        std::vector<int64_t> ch;
        for (size_t c = 0; c < decision.assignments[l].size(); ++c)
          if (decision.assignments[l][c] == static_cast<int>(a))
            ch.push_back(static_cast<int64_t>(c));
        if (!ch.empty()) groups[l].emplace_back(static_cast<int>(a), std::move(ch));
      }
      const NodeDesc& nd = m.net.desc().nodes[static_cast<size_t>(q[l])];
      if (nd.depthwise)
        ODIMO_CHECK(groups[l].size() == 1,
                    strcat_msg("depthwise layer '", nd.name,
                               "' cannot be split across accelerators"));
    }
    hooks.layer_op = [this](int idx, const Tensor& x) { return layer(idx, x); };
    hooks.output_quant = [this](int idx, const Tensor& t) { return quant(idx, t); };
  }

  int layer_ordinal(int idx) const {
    const auto& q = model->net.quantizable();
    const auto it = std::find(q.begin(), q.end(), idx);
    ODIMO_CHECK(it != q.end(), "node is not a quantizable layer");
    return static_cast<int>(it - q.begin());
  }

  Tensor layer(int idx, const Tensor& x) const {
    const NodeDesc& nd = model->net.desc().nodes[static_cast<size_t>(idx)];
    const Network::NodeState& ns = model->net.state(idx);
    const int l = layer_ordinal(idx);
    const int producer = model->net.desc().node_index(nd.inputs[0]);
    const double in_range =
        model->act_quant[static_cast<size_t>(producer + 1)].current_range();

    std::vector<Tensor> parts;
    std::vector<std::vector<int64_t>> positions;
    for (const auto& [a, channels] : groups[static_cast<size_t>(l)]) {
      const auto& acc = model->accels[static_cast<size_t>(a)];
      Tensor xin = acc.activation_bits == 7 ? truncate_lsb(x, in_range) : x;
      Tensor wg = gather_rows(ns.weight, channels);
      Tensor bg = gather_rows(ns.bias, channels);
      Tensor wq = fake_quantize_weights(wg, model->weight_quant[static_cast<size_t>(l)][static_cast<size_t>(a)]);
      Tensor part = nd.kind == NodeKind::Fc
                        ? linear(xin, wq, bg)
                        : conv2d(xin, wq, bg, nd.stride, nd.padding,
                                 nd.depthwise ? static_cast<int>(xin.dim(1)) : 1);
      parts.push_back(std::move(part));
      positions.push_back(channels);
    }
    if (parts.size() == 1 && positions[0].size() == static_cast<size_t>(nd.out_channels)) {
      bool identity = true;
      for (size_t c = 0; c < positions[0].size(); ++c)
        identity = identity && positions[0][c] == static_cast<int64_t>(c);
      if (identity) return parts[0];
    }
    return scatter_channels(parts, positions, nd.out_channels);
  }

  Tensor quant(int idx, const Tensor& t) const {
    auto& aq = const_cast<QuantizedModel*>(model)->act_quant[static_cast<size_t>(idx + 1)];
    Tensor q8 = aq.apply(t, 8);
    if (idx < 0) return q8;
    const auto& q = model->net.quantizable();
    const auto it = std::find(q.begin(), q.end(), idx);
    if (it == q.end()) return q8;  // pools and adds stay on the storage grid
    const int l = static_cast<int>(it - q.begin());

    bool any_analog = false;
    for (const auto& [a, channels] : groups[static_cast<size_t>(l)])
      any_analog = any_analog || model->accels[static_cast<size_t>(a)].activation_bits == 7;
    if (!any_analog) return q8;

    // channels produced by a 7-bit A/D lose their stored LSB
    const double r = aq.current_range();
    std::vector<Tensor> parts;
    std::vector<std::vector<int64_t>> positions;
    for (const auto& [a, channels] : groups[static_cast<size_t>(l)]) {
      Tensor part = gather_channels(q8, channels);
      if (model->accels[static_cast<size_t>(a)].activation_bits == 7)
        part = truncate_lsb(part, r);
      parts.push_back(std::move(part));
      positions.push_back(channels);
    }
    return scatter_channels(parts, positions, q8.dim(1));
  }
};

}  // namespace

Tensor quantized_forward(const QuantizedModel& model, const MappingDecision& decision,
                         const Tensor& x) {
  GroupedForward fwd(model, decision);
  return model.net.forward(x, false, &fwd.hooks);
}

double quantized_val_accuracy(const QuantizedModel& model, const MappingDecision& decision,
                              const Dataset& ds, int64_t batch_size) {
  GroupedForward fwd(model, decision);
  return validate(ds, batch_size,
                  [&](const Tensor& x) { return model.net.forward(x, false, &fwd.hooks); });
}

FitResult finetune(QuantizedModel& model, const MappingDecision& decision,
                   const Dataset& ds, const TrainOptions& opts, Rng& rng) {
  GroupedForward fwd(model, decision);
  auto wparams = weight_params(model.net);
  auto qparams = model.quant_params();
  Sgd sgd(wparams, opts.lr_w, opts.momentum, opts.weight_decay);
  Adam adam_scale(qparams, opts.lr_scale);

  std::vector<Tensor> all_params = wparams;
  all_params.insert(all_params.end(), qparams.begin(), qparams.end());
  Snapshot best = Snapshot::take(all_params);

  FitResult fit;
  int stale = 0;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    const bool calibrating = epoch == 0 && !model.calibrated;
    if (calibrating)
      for (auto& aq : model.act_quant) aq.begin_calibration();

    std::vector<double> losses;
    for (const auto& batch : epoch_batches(ds, opts.batch_size, rng)) {
      auto [x, labels] = make_batch(ds, batch);
      sgd.zero_grad();
      adam_scale.zero_grad();
      Tensor loss = cross_entropy(model.net.forward(x, false, &fwd.hooks), labels);
      ODIMO_CHECK(std::isfinite(static_cast<double>(loss.item())),
                  strcat_msg("fine-tune diverged (non-finite loss) at epoch ", epoch));
      loss.backward();
      sgd.step();
      adam_scale.step();
      losses.push_back(loss.item());
    }
    if (calibrating) {
      for (auto& aq : model.act_quant) aq.end_calibration();
      model.calibrated = true;
    }

    const double val_acc = validate(ds, opts.batch_size, [&](const Tensor& x) {
      return model.net.forward(x, false, &fwd.hooks);
    });
    fit.epoch_loss.push_back(mean_epoch_loss(losses));
    fit.epoch_val_acc.push_back(val_acc);
    ++fit.epochs_run;
    if (opts.verbose)
      std::printf("finetune epoch %3d  loss %.4f  val %.2f%%\n", epoch,
                  fit.epoch_loss.back(), val_acc);

    if (val_acc > fit.best_val_acc) {
      fit.best_val_acc = val_acc;
      best = Snapshot::take(all_params);
      stale = 0;
    } else if (++stale >= opts.patience) {
      break;
    }
  }
  best.restore(all_params);
  return fit;
}

namespace {

void put_quant_records(Checkpoint& ckpt, const QuantizedModel& model) {
  model.net.save_params(ckpt);
  const auto& q = model.net.quantizable();
  for (size_t l = 0; l < q.size(); ++l) {
    const std::string lname = model.net.desc().nodes[static_cast<size_t>(q[l])].name;
    for (size_t a = 0; a < model.accels.size(); ++a)
      ckpt.put_tensor(strcat_msg("wq.", lname, ".", model.accels[a].name),
                      model.weight_quant[l][a].log_scale);
  }
  for (size_t i = 0; i < model.act_quant.size(); ++i) {
    const std::string name =
        i == 0 ? "input" : model.net.desc().nodes[i - 1].name;
    ckpt.put_tensor("act_range." + name, model.act_quant[i].log_range());
  }
}

void get_quant_records(const Checkpoint& ckpt, QuantizedModel& model) {
  model.net.load_params(ckpt);
  const auto& q = model.net.quantizable();
  for (size_t l = 0; l < q.size(); ++l) {
    const std::string lname = model.net.desc().nodes[static_cast<size_t>(q[l])].name;
    for (size_t a = 0; a < model.accels.size(); ++a) {
      Tensor t = ckpt.get_tensor(strcat_msg("wq.", lname, ".", model.accels[a].name));
      model.weight_quant[l][a].log_scale.copy_from(t);
    }
  }
  for (size_t i = 0; i < model.act_quant.size(); ++i) {
    const std::string name = i == 0 ? "input" : model.net.desc().nodes[i - 1].name;
    model.act_quant[i].log_range().copy_from(ckpt.get_tensor("act_range." + name));
  }
}

NetworkDesc strip_bn(NetworkDesc desc) {
  for (auto& nd : desc.nodes) nd.batch_norm = false;
  return desc;
}

}  // namespace

void save_quantized_model(const QuantizedModel& model, const std::string& path) {
  Checkpoint ckpt;
  put_quant_records(ckpt, model);
  ordered_json meta;
  meta["kind"] = "quantized";
  meta["calibrated"] = model.calibrated;
  ckpt.put_string("__meta__", meta.dump());
  ckpt.save(path);
}

QuantizedModel load_quantized_model(const std::string& path, NetworkDesc desc,
                                    std::vector<AcceleratorSpec> accels) {
  Checkpoint ckpt = Checkpoint::load(path);
  Rng init_rng(0);
  QuantizedModel model =
      make_quantized(Network::build(strip_bn(std::move(desc)), init_rng), std::move(accels));
  get_quant_records(ckpt, model);
  const auto meta = ordered_json::parse(ckpt.get_string("__meta__"));
  model.calibrated = meta.value("calibrated", false);
  return model;
}

void save_search_state(const SearchState& state, const std::string& path) {
  Checkpoint ckpt;
  put_quant_records(ckpt, state.model);
  const auto& q = state.model.net.quantizable();
  for (size_t l = 0; l < state.alpha.size(); ++l) {
    const std::string lname =
        state.model.net.desc().nodes[static_cast<size_t>(q[l])].name;
    ckpt.put_tensor("alpha." + lname, state.alpha[l]);
  }
  ordered_json meta;
  meta["kind"] = "search";
  meta["calibrated"] = state.model.calibrated;
  meta["tau"] = state.tau;
  meta["lambda"] = state.opts.lambda;
  meta["objective"] = objective_name(state.opts.objective);
  meta["best_val_acc"] = state.fit.best_val_acc;
  ckpt.put_string("__meta__", meta.dump());
  ckpt.save(path);
}

SearchState load_search_state(const std::string& path, NetworkDesc desc,
                              std::vector<AcceleratorSpec> accels, SearchOptions opts) {
  Checkpoint ckpt = Checkpoint::load(path);
  Rng init_rng(0);
  SearchState state = init_search(Network::build(strip_bn(std::move(desc)), init_rng),
                                  std::move(accels), opts);
  get_quant_records(ckpt, state.model);
  const auto& q = state.model.net.quantizable();
  for (size_t l = 0; l < state.alpha.size(); ++l) {
    const std::string lname =
        state.model.net.desc().nodes[static_cast<size_t>(q[l])].name;
    state.alpha[l].copy_from(ckpt.get_tensor("alpha." + lname));
  }
  const auto meta = ordered_json::parse(ckpt.get_string("__meta__"));
  state.model.calibrated = meta.value("calibrated", false);
  state.tau = meta.value("tau", opts.tau);
  state.fit.best_val_acc = meta.value("best_val_acc", 0.0);
  return state;
}

}  // namespace odimo
