// Shared test-only oracles: brute-force reference kernels and a central
// finite-difference gradient checker. These stay independent of the
// implementation paths they verify.
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "odimo/ops.hpp"
#include "odimo/tensor.hpp"

namespace odimo::testing {

// Six-nested-loop cross-correlation reference, double precision throughout.
inline std::vector<double> conv2d_reference(const std::vector<double>& x, int64_t n,
                                            int64_t cin, int64_t h, int64_t w,
                                            const std::vector<double>& wt, int64_t cout,
                                            int64_t ky, int64_t kx,
                                            const std::vector<double>& bias, int stride,
                                            int pad) {
  const int64_t oh = (h + 2 * pad - ky) / stride + 1;
  const int64_t ow = (w + 2 * pad - kx) / stride + 1;
  std::vector<double> out(static_cast<size_t>(n * cout * oh * ow), 0.0);
  for (int64_t ni = 0; ni < n; ++ni)
    for (int64_t co = 0; co < cout; ++co)
      for (int64_t oy = 0; oy < oh; ++oy)
        for (int64_t ox = 0; ox < ow; ++ox) {
          double acc = bias.empty() ? 0.0 : bias[static_cast<size_t>(co)];
          for (int64_t ci = 0; ci < cin; ++ci)
            for (int64_t kyi = 0; kyi < ky; ++kyi)
              for (int64_t kxi = 0; kxi < kx; ++kxi) {
                const int64_t iy = oy * stride - pad + kyi;
                const int64_t ix = ox * stride - pad + kxi;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                acc += x[static_cast<size_t>(((ni * cin + ci) * h + iy) * w + ix)] *
                       wt[static_cast<size_t>(((co * cin + ci) * ky + kyi) * kx + kxi)];
              }
          out[static_cast<size_t>(((ni * cout + co) * oh + oy) * ow + ox)] = acc;
        }
  return out;
}

inline std::vector<double> linear_reference(const std::vector<double>& x, int64_t n,
                                            int64_t fin, const std::vector<double>& wt,
                                            int64_t fout, const std::vector<double>& bias) {
  std::vector<double> out(static_cast<size_t>(n * fout), 0.0);
  for (int64_t ni = 0; ni < n; ++ni)
    for (int64_t fo = 0; fo < fout; ++fo) {
      double acc = bias.empty() ? 0.0 : bias[static_cast<size_t>(fo)];
      for (int64_t fi = 0; fi < fin; ++fi)
        acc += x[static_cast<size_t>(ni * fin + fi)] * wt[static_cast<size_t>(fo * fin + fi)];
      out[static_cast<size_t>(ni * fout + fo)] = acc;
    }
  return out;
}

struct GradCheckResult {
  double max_abs_diff = 0.0;
  double max_rel = 0.0;  // |analytic - fd| / max(|analytic|, |fd|, floor)
  bool ok = true;
};

// Central finite differences on one parameter tensor against the analytic
// gradient produced by backward(). `make_loss` must rebuild the graph from
// current parameter values on every call.
inline GradCheckResult grad_check(const std::function<Tensor()>& make_loss, Tensor param,
                                  double h = 1e-3, double atol = 1e-3, double rtol = 1e-3) {
  Tensor loss = make_loss();
  param.zero_grad();
  loss.zero_grad();
  loss.backward();
  std::vector<double> analytic(param.grad().begin(), param.grad().end());

  GradCheckResult res;
  for (size_t i = 0; i < param.data().size(); ++i) {
    const real saved = param.data()[i];
    param.data()[i] = static_cast<real>(saved + h);
    double lp;
    {
      NoGradGuard ng;
      lp = make_loss().item();
    }
    param.data()[i] = static_cast<real>(saved - h);
    double lm;
    {
      NoGradGuard ng;
      lm = make_loss().item();
    }
    param.data()[i] = saved;
    const double fd = (lp - lm) / (2.0 * h);
    const double diff = std::abs(analytic[i] - fd);
    const double rel = diff / std::max({std::abs(analytic[i]), std::abs(fd), 1e-6});
    res.max_abs_diff = std::max(res.max_abs_diff, diff);
    if (diff > atol + rtol * std::max(std::abs(analytic[i]), std::abs(fd))) {
      res.ok = false;
      res.max_rel = std::max(res.max_rel, rel);
    }
  }
  return res;
}

// Default tolerances by build precision: float32 gets the 1e-3 budget, the
// float64 build tightens to 1e-7.
inline double grad_atol() { return sizeof(real) == 8 ? 1e-9 : 1e-3; }
inline double grad_rtol() { return sizeof(real) == 8 ? 1e-7 : 1e-3; }
inline double grad_h() { return sizeof(real) == 8 ? 1e-5 : 1e-3; }

}  // namespace odimo::testing

#include "odimo/network.hpp"

namespace odimo::testing {

inline NodeDesc conv_node(std::string name, std::string from, int64_t out, int kernel = 3,
                          int stride = 1, bool bn = false, bool relu = true) {
  NodeDesc nd;
  nd.kind = NodeKind::Conv;
  nd.name = std::move(name);
  nd.inputs = {std::move(from)};
  nd.out_channels = out;
  nd.kernel = kernel;
  nd.stride = stride;
  nd.padding = kernel / 2;
  nd.batch_norm = bn;
  nd.relu_act = relu;
  return nd;
}

inline NodeDesc simple_node(NodeKind kind, std::string name, std::vector<std::string> from,
                            int64_t out = 0) {
  NodeDesc nd;
  nd.kind = kind;
  nd.name = std::move(name);
  nd.inputs = std::move(from);
  nd.out_channels = out;
  nd.relu_act = false;
  return nd;
}

// conv -> gap -> fc, the smallest usable classifier.
inline NetworkDesc tiny_cnn_desc(int64_t classes = 2, int64_t channels = 6) {
  NetworkDesc d;
  d.name = "tiny";
  d.in_channels = 1;
  d.in_h = d.in_w = 8;
  d.num_classes = classes;
  d.nodes.push_back(conv_node("conv1", "input", channels));
  d.nodes.push_back(simple_node(NodeKind::Gap, "pool", {"conv1"}));
  d.nodes.push_back(simple_node(NodeKind::Fc, "fc", {"pool"}, classes));
  return d;
}

// Two conv layers then a classifier; used for gradient-fidelity checks.
inline NetworkDesc two_layer_cnn_desc(int64_t classes = 3) {
  NetworkDesc d;
  d.name = "two_layer";
  d.in_channels = 1;
  d.in_h = d.in_w = 8;
  d.num_classes = classes;
  d.nodes.push_back(conv_node("conv1", "input", 4));
  d.nodes.push_back(conv_node("conv2", "conv1", 6, 3, 2));
  d.nodes.push_back(simple_node(NodeKind::Gap, "pool", {"conv2"}));
  d.nodes.push_back(simple_node(NodeKind::Fc, "fc", {"pool"}, classes));
  return d;
}

// Stem conv, strided conv, then a residual block (conv3 -> conv4 added
// back onto conv2's output), gap, fc.
inline NetworkDesc resnet_toy_desc(int64_t classes = 10, bool bn = false) {
  NetworkDesc d;
  d.name = "resnet_toy";
  d.in_channels = 1;
  d.in_h = d.in_w = 8;
  d.num_classes = classes;
  d.nodes.push_back(conv_node("conv1", "input", 8, 3, 1, bn));
  d.nodes.push_back(conv_node("conv2", "conv1", 16, 3, 2, bn));
  d.nodes.push_back(conv_node("conv3", "conv2", 16, 3, 1, bn));
  d.nodes.push_back(conv_node("conv4", "conv3", 16, 3, 1, bn));
  d.nodes.push_back(simple_node(NodeKind::Add, "add1", {"conv2", "conv4"}));
  d.nodes.push_back(simple_node(NodeKind::Gap, "pool", {"add1"}));
  d.nodes.push_back(simple_node(NodeKind::Fc, "fc", {"pool"}, classes));
  return d;
}

inline std::vector<AcceleratorSpec> diana_accels() {
  AcceleratorSpec digital;
  digital.name = "digital";
  digital.weight_bits = 8;
  digital.activation_bits = 8;
  digital.model = LatencyModel::Digital;
  digital.p_act = 10.0;
  AcceleratorSpec aimc;
  aimc.name = "aimc";
  aimc.weight_bits = 2;
  aimc.activation_bits = 7;
  aimc.model = LatencyModel::Aimc;
  aimc.p_act = 1.0;
  aimc.analog = true;
  aimc.supported = {LayerKind::Conv, LayerKind::Fc};
  return {digital, aimc};
}

}  // namespace odimo::testing
