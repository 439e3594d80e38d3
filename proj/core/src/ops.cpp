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

#include "odimo/ops.hpp"

#include <cmath>
#include <cstring>

#if defined(_OPENMP)
#define ODIMO_OMP_FOR _Pragma("omp parallel for schedule(static)")
#else
#define ODIMO_OMP_FOR
#endif

namespace odimo {

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  ODIMO_CHECK(a.shape() == b.shape(),
              strcat_msg(op, ": shape mismatch ", shape_str(a.shape()), " vs ",
                         shape_str(b.shape())));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<real> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return Tensor::make_op("add", a.shape(), std::move(out), {a, b},
                         [a, b](TensorImpl& node) {
                           for (const auto& p : {a, b}) {
                             auto* pi = p.impl().get();
                             if (!pi->requires_grad) continue;
                             pi->ensure_grad();
                             for (size_t i = 0; i < node.grad.size(); ++i)
                               pi->grad[i] += node.grad[i];
                           }
                         });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<real> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return Tensor::make_op("sub", a.shape(), std::move(out), {a, b},
                         [a, b](TensorImpl& node) {
                           if (a.impl()->requires_grad) {
                             a.impl()->ensure_grad();
                             for (size_t i = 0; i < node.grad.size(); ++i)
                               a.impl()->grad[i] += node.grad[i];
                           }
                           if (b.impl()->requires_grad) {
                             b.impl()->ensure_grad();
                             for (size_t i = 0; i < node.grad.size(); ++i)
                               b.impl()->grad[i] -= node.grad[i];
                           }
                         });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<real> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return Tensor::make_op("mul", a.shape(), std::move(out), {a, b},
                         [a, b](TensorImpl& node) {
                           if (a.impl()->requires_grad) {
                             a.impl()->ensure_grad();
                             for (size_t i = 0; i < node.grad.size(); ++i)
                               a.impl()->grad[i] += node.grad[i] * b.data()[i];
                           }
                           if (b.impl()->requires_grad) {
                             b.impl()->ensure_grad();
                             for (size_t i = 0; i < node.grad.size(); ++i)
                               b.impl()->grad[i] += node.grad[i] * a.data()[i];
                           }
                         });
}

Tensor add_scalar(const Tensor& a, double c) {
  std::vector<real> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<real>(a.data()[i] + c);
  return Tensor::make_op("add_scalar", a.shape(), std::move(out), {a},
                         [a](TensorImpl& node) {
                           if (!a.impl()->requires_grad) return;
                           a.impl()->ensure_grad();
                           for (size_t i = 0; i < node.grad.size(); ++i)
                             a.impl()->grad[i] += node.grad[i];
                         });
}

Tensor mul_scalar(const Tensor& a, double c) {
  std::vector<real> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<real>(a.data()[i] * c);
  return Tensor::make_op("mul_scalar", a.shape(), std::move(out), {a},
                         [a, c](TensorImpl& node) {
                           if (!a.impl()->requires_grad) return;
                           a.impl()->ensure_grad();
                           for (size_t i = 0; i < node.grad.size(); ++i)
                             a.impl()->grad[i] += static_cast<real>(node.grad[i] * c);
                         });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor exp(const Tensor& a) {
  std::vector<real> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.data()[i]);
  return Tensor::make_op("exp", a.shape(), std::move(out), {a},
                         [a](TensorImpl& node) {
                           if (!a.impl()->requires_grad) return;
                           a.impl()->ensure_grad();
                           for (size_t i = 0; i < node.grad.size(); ++i)
                             a.impl()->grad[i] += node.grad[i] * node.data[i];
                         });
}

Tensor log(const Tensor& a) {
  std::vector<real> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) {
    ODIMO_CHECK(a.data()[i] > 0, "log: non-positive input");
    out[i] = std::log(a.data()[i]);
  }
  return Tensor::make_op("log", a.shape(), std::move(out), {a},
                         [a](TensorImpl& node) {
                           if (!a.impl()->requires_grad) return;
                           a.impl()->ensure_grad();
                           for (size_t i = 0; i < node.grad.size(); ++i)
                             a.impl()->grad[i] += node.grad[i] / a.data()[i];
                         });
}

Tensor rsqrt(const Tensor& v, double eps) {
  std::vector<real> out(v.data().size());
  for (size_t i = 0; i < out.size(); ++i) {
    double d = v.data()[i] + eps;
    ODIMO_CHECK(d > 0, "rsqrt: var + eps must be positive");
    out[i] = static_cast<real>(1.0 / std::sqrt(d));
  }
  return Tensor::make_op(
      "rsqrt", v.shape(), std::move(out), {v}, [v, eps](TensorImpl& node) {
        if (!v.impl()->requires_grad) return;
        v.impl()->ensure_grad();
        for (size_t i = 0; i < node.grad.size(); ++i) {
          double y = node.data[i];  // (v+eps)^{-1/2}
          v.impl()->grad[i] += static_cast<real>(node.grad[i] * (-0.5 * y * y * y));
        }
      });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
              int padding, int groups) {
  ODIMO_CHECK(x.rank() == 4, strcat_msg("conv2d: input must be [N,C,H,W], got ",
                                        shape_str(x.shape())));
  ODIMO_CHECK(w.rank() == 4, strcat_msg("conv2d: weight must be [C_out,C_in/g,KY,KX], got ",
                                        shape_str(w.shape())));
  ODIMO_CHECK(stride >= 1, "conv2d: stride must be >= 1");
  ODIMO_CHECK(padding >= 0, "conv2d: padding must be >= 0");
  const int64_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int64_t cout = w.dim(0), wcin = w.dim(1), ky = w.dim(2), kx = w.dim(3);
  ODIMO_CHECK(groups >= 1 && cin % groups == 0 && cout % groups == 0,
              strcat_msg("conv2d: groups=", groups, " must divide C_in=", cin,
                         " and C_out=", cout));
  const int64_t cg = cin / groups;
  ODIMO_CHECK(wcin == cg,
              strcat_msg("conv2d: weight C_in=", wcin, " does not match input C_in/groups=",
                         cg, " (input C_in=", cin, ", groups=", groups, ")"));
  if (b.defined())
    ODIMO_CHECK(b.rank() == 1 && b.dim(0) == cout,
                strcat_msg("conv2d: bias length ", shape_str(b.shape()),
                           " does not match C_out=", cout));
  const int64_t oh = (h + 2 * padding - ky) / stride + 1;
  const int64_t ow = (wd + 2 * padding - kx) / stride + 1;
  ODIMO_CHECK(oh > 0 && ow > 0,
              strcat_msg("conv2d: kernel ", ky, "x", kx, " with padding ", padding,
                         " does not fit input ", h, "x", wd));

  std::vector<real> out(static_cast<size_t>(n * cout * oh * ow));
  const real* xd = x.data().data();
  const real* wdat = w.data().data();
  const real* bd = b.defined() ? b.data().data() : nullptr;
  const int64_t copg = cout / groups;

  ODIMO_OMP_FOR
  for (int64_t ni = 0; ni < n; ++ni) {
    for (int64_t co = 0; co < cout; ++co) {
      const int64_t g = co / copg;
      const int64_t cbase = g * cg;
      for (int64_t oy = 0; oy < oh; ++oy) {
        for (int64_t ox = 0; ox < ow; ++ox) {
          double acc = bd ? static_cast<double>(bd[co]) : 0.0;
          for (int64_t ci = 0; ci < cg; ++ci) {
            const real* xrow = xd + ((ni * cin + cbase + ci) * h) * wd;
            const real* wrow = wdat + ((co * cg + ci) * ky) * kx;
            for (int64_t kyi = 0; kyi < ky; ++kyi) {
              const int64_t iy = oy * stride - padding + kyi;
              if (iy < 0 || iy >= h) continue;
              for (int64_t kxi = 0; kxi < kx; ++kxi) {
                const int64_t ix = ox * stride - padding + kxi;
                if (ix < 0 || ix >= wd) continue;
                acc += static_cast<double>(xrow[iy * wd + ix]) *
                       static_cast<double>(wrow[kyi * kx + kxi]);
              }
            }
          }
          out[static_cast<size_t>(((ni * cout + co) * oh + oy) * ow + ox)] =
              static_cast<real>(acc);
        }
      }
    }
  }

  std::vector<Tensor> parents = {x, w};
  if (b.defined()) parents.push_back(b);
  auto backward = [x, w, b, stride, padding, groups, n, cin, h, wd, cout, cg,
                   copg, ky, kx, oh, ow](TensorImpl& node) {
    const real* gy = node.grad.data();
    const real* xd = x.data().data();
    const real* wdat = w.data().data();

    if (x.impl()->requires_grad) {
      x.impl()->ensure_grad();
      real* gx = x.impl()->grad.data();
      ODIMO_OMP_FOR
      for (int64_t ni = 0; ni < n; ++ni) {
        for (int64_t co = 0; co < cout; ++co) {
          const int64_t g = co / copg;
          const int64_t cbase = g * cg;
          for (int64_t oy = 0; oy < oh; ++oy) {
            for (int64_t ox = 0; ox < ow; ++ox) {
              const real gyv = gy[((ni * cout + co) * oh + oy) * ow + ox];
              if (gyv == real{0}) continue;
              for (int64_t ci = 0; ci < cg; ++ci) {
                real* gxrow = gx + ((ni * cin + cbase + ci) * h) * wd;
                const real* wrow = wdat + ((co * cg + ci) * ky) * kx;
                for (int64_t kyi = 0; kyi < ky; ++kyi) {
                  const int64_t iy = oy * stride - padding + kyi;
                  if (iy < 0 || iy >= h) continue;
                  for (int64_t kxi = 0; kxi < kx; ++kxi) {
                    const int64_t ix = ox * stride - padding + kxi;
                    if (ix < 0 || ix >= wd) continue;
                    gxrow[iy * wd + ix] += gyv * wrow[kyi * kx + kxi];
                  }
                }
              }
            }
          }
        }
      }
    }

    if (w.impl()->requires_grad) {
      w.impl()->ensure_grad();
      real* gw = w.impl()->grad.data();
      ODIMO_OMP_FOR
      for (int64_t co = 0; co < cout; ++co) {
        const int64_t g = co / copg;
        const int64_t cbase = g * cg;
        std::vector<double> scratch(static_cast<size_t>(cg * ky * kx), 0.0);
        for (int64_t ni = 0; ni < n; ++ni) {
          for (int64_t oy = 0; oy < oh; ++oy) {
            for (int64_t ox = 0; ox < ow; ++ox) {
              const double gyv = gy[((ni * cout + co) * oh + oy) * ow + ox];
              if (gyv == 0.0) continue;
              for (int64_t ci = 0; ci < cg; ++ci) {
                const real* xrow = xd + ((ni * cin + cbase + ci) * h) * wd;
                for (int64_t kyi = 0; kyi < ky; ++kyi) {
                  const int64_t iy = oy * stride - padding + kyi;
                  if (iy < 0 || iy >= h) continue;
                  for (int64_t kxi = 0; kxi < kx; ++kxi) {
                    const int64_t ix = ox * stride - padding + kxi;
                    if (ix < 0 || ix >= wd) continue;
                    scratch[static_cast<size_t>((ci * ky + kyi) * kx + kxi)] +=
                        gyv * xrow[iy * wd + ix];
                  }
                }
              }
            }
          }
        }
        for (int64_t i = 0; i < cg * ky * kx; ++i)
          gw[co * cg * ky * kx + i] += static_cast<real>(scratch[static_cast<size_t>(i)]);
      }
    }

    if (b.defined() && b.impl()->requires_grad) {
      b.impl()->ensure_grad();
      real* gb = b.impl()->grad.data();
      for (int64_t co = 0; co < cout; ++co) {
        double acc = 0.0;
        for (int64_t ni = 0; ni < n; ++ni)
          for (int64_t oy = 0; oy < oh; ++oy)
            for (int64_t ox = 0; ox < ow; ++ox)
              acc += gy[((ni * cout + co) * oh + oy) * ow + ox];
        gb[co] += static_cast<real>(acc);
      }
    }
  };
  return Tensor::make_op("conv2d", {n, cout, oh, ow}, std::move(out),
                         std::move(parents), std::move(backward));
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  ODIMO_CHECK(x.rank() == 2, strcat_msg("linear: input must be [N,F_in], got ",
                                        shape_str(x.shape())));
  ODIMO_CHECK(w.rank() == 2, strcat_msg("linear: weight must be [F_out,F_in], got ",
                                        shape_str(w.shape())));
  const int64_t n = x.dim(0), fin = x.dim(1), fout = w.dim(0);
  ODIMO_CHECK(w.dim(1) == fin,
              strcat_msg("linear: weight F_in=", w.dim(1), " does not match input F_in=",
                         fin));
  if (b.defined())
    ODIMO_CHECK(b.rank() == 1 && b.dim(0) == fout,
                strcat_msg("linear: bias length ", shape_str(b.shape()),
                           " does not match F_out=", fout));

  std::vector<real> out(static_cast<size_t>(n * fout));
  const real* xd = x.data().data();
  const real* wd = w.data().data();
  const real* bd = b.defined() ? b.data().data() : nullptr;
  ODIMO_OMP_FOR
  for (int64_t ni = 0; ni < n; ++ni) {
    for (int64_t fo = 0; fo < fout; ++fo) {
      double acc = bd ? static_cast<double>(bd[fo]) : 0.0;
      for (int64_t fi = 0; fi < fin; ++fi)
        acc += static_cast<double>(xd[ni * fin + fi]) * static_cast<double>(wd[fo * fin + fi]);
      out[static_cast<size_t>(ni * fout + fo)] = static_cast<real>(acc);
    }
  }

  std::vector<Tensor> parents = {x, w};
  if (b.defined()) parents.push_back(b);
  auto backward = [x, w, b, n, fin, fout](TensorImpl& node) {
    const real* gy = node.grad.data();
    if (x.impl()->requires_grad) {
      x.impl()->ensure_grad();
      real* gx = x.impl()->grad.data();
      const real* wd = w.data().data();
      ODIMO_OMP_FOR
      for (int64_t ni = 0; ni < n; ++ni) {
        for (int64_t fi = 0; fi < fin; ++fi) {
          double acc = 0.0;
          for (int64_t fo = 0; fo < fout; ++fo)
            acc += static_cast<double>(gy[ni * fout + fo]) * static_cast<double>(wd[fo * fin + fi]);
          gx[ni * fin + fi] += static_cast<real>(acc);
        }
      }
    }
    if (w.impl()->requires_grad) {
      w.impl()->ensure_grad();
      real* gw = w.impl()->grad.data();
      const real* xd = x.data().data();
      ODIMO_OMP_FOR
      for (int64_t fo = 0; fo < fout; ++fo) {
        for (int64_t fi = 0; fi < fin; ++fi) {
          double acc = 0.0;
          for (int64_t ni = 0; ni < n; ++ni)
            acc += static_cast<double>(gy[ni * fout + fo]) * static_cast<double>(xd[ni * fin + fi]);
          gw[fo * fin + fi] += static_cast<real>(acc);
        }
      }
    }
    if (b.defined() && b.impl()->requires_grad) {
      b.impl()->ensure_grad();
      real* gb = b.impl()->grad.data();
      for (int64_t fo = 0; fo < fout; ++fo) {
        double acc = 0.0;
        for (int64_t ni = 0; ni < n; ++ni) acc += gy[ni * fout + fo];
        gb[fo] += static_cast<real>(acc);
      }
    }
  };
  return Tensor::make_op("linear", {n, fout}, std::move(out), std::move(parents),
                         std::move(backward));
}

Tensor relu(const Tensor& x) {
  std::vector<real> out(x.data().size());
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = x.data()[i] > real{0} ? x.data()[i] : real{0};
  return Tensor::make_op("relu", x.shape(), std::move(out), {x},
                         [x](TensorImpl& node) {
                           if (!x.impl()->requires_grad) return;
                           x.impl()->ensure_grad();
                           for (size_t i = 0; i < node.grad.size(); ++i)
                             if (x.data()[i] > real{0})
                               x.impl()->grad[i] += node.grad[i];
                         });
}

Tensor max_pool2d(const Tensor& x, int window, int stride) {
  ODIMO_CHECK(x.rank() == 4, "max_pool2d: input must be [N,C,H,W]");
  ODIMO_CHECK(window >= 1 && stride >= 1, "max_pool2d: window and stride must be >= 1");
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int64_t oh = (h - window) / stride + 1;
  const int64_t ow = (w - window) / stride + 1;
  ODIMO_CHECK(oh > 0 && ow > 0,
              strcat_msg("max_pool2d: window ", window, " does not fit input ", h, "x", w));

  std::vector<real> out(static_cast<size_t>(n * c * oh * ow));
  auto argmax = std::make_shared<std::vector<int64_t>>(out.size());
  const real* xd = x.data().data();
  for (int64_t ni = 0; ni < n; ++ni)
    for (int64_t ci = 0; ci < c; ++ci)
      for (int64_t oy = 0; oy < oh; ++oy)
        for (int64_t ox = 0; ox < ow; ++ox) {
          real best = xd[((ni * c + ci) * h + oy * stride) * w + ox * stride];
          int64_t besti = ((ni * c + ci) * h + oy * stride) * w + ox * stride;
          for (int64_t ky = 0; ky < window; ++ky)
            for (int64_t kx = 0; kx < window; ++kx) {
              const int64_t iy = oy * stride + ky, ix = ox * stride + kx;
              const int64_t idx = ((ni * c + ci) * h + iy) * w + ix;
              if (xd[idx] > best) {  // ties keep the first index in scan order
                best = xd[idx];
                besti = idx;
              }
            }
          const size_t oidx = static_cast<size_t>(((ni * c + ci) * oh + oy) * ow + ox);
          out[oidx] = best;
          (*argmax)[oidx] = besti;
        }
  return Tensor::make_op("max_pool2d", {n, c, oh, ow}, std::move(out), {x},
                         [x, argmax](TensorImpl& node) {
                           if (!x.impl()->requires_grad) return;
                           x.impl()->ensure_grad();
                           for (size_t i = 0; i < node.grad.size(); ++i)
                             x.impl()->grad[static_cast<size_t>((*argmax)[i])] += node.grad[i];
                         });
}

Tensor global_avg_pool(const Tensor& x) {
  ODIMO_CHECK(x.rank() == 4, "global_avg_pool: input must be [N,C,H,W]");
  const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<real> out(static_cast<size_t>(n * c));
  const real* xd = x.data().data();
  for (int64_t ni = 0; ni < n; ++ni)
    for (int64_t ci = 0; ci < c; ++ci) {
      double acc = 0.0;
      for (int64_t i = 0; i < hw; ++i) acc += xd[(ni * c + ci) * hw + i];
      out[static_cast<size_t>(ni * c + ci)] = static_cast<real>(acc / static_cast<double>(hw));
    }
  return Tensor::make_op("global_avg_pool", {n, c}, std::move(out), {x},
                         [x, n, c, hw](TensorImpl& node) {
                           if (!x.impl()->requires_grad) return;
                           x.impl()->ensure_grad();
                           const double inv = 1.0 / static_cast<double>(hw);
                           for (int64_t ni = 0; ni < n; ++ni)
                             for (int64_t ci = 0; ci < c; ++ci) {
                               const real g = static_cast<real>(node.grad[static_cast<size_t>(ni * c + ci)] * inv);
                               for (int64_t i = 0; i < hw; ++i)
                                 x.impl()->grad[static_cast<size_t>((ni * c + ci) * hw + i)] += g;
                             }
                         });
}

Tensor softmax_temp(const Tensor& x, double tau) {
  ODIMO_CHECK(tau > 0, strcat_msg("softmax_temp: tau must be positive, got ", tau));
  ODIMO_CHECK(x.rank() >= 1, "softmax_temp: input must have rank >= 1");
  const int64_t cols = x.shape().back();
  const int64_t rows = x.size() / cols;
  std::vector<real> out(x.data().size());
  const real* xd = x.data().data();
  for (int64_t r = 0; r < rows; ++r) {
    double m = xd[r * cols];
    for (int64_t j = 1; j < cols; ++j) m = std::max(m, static_cast<double>(xd[r * cols + j]));
    double denom = 0.0;
    for (int64_t j = 0; j < cols; ++j) {
      const double e = std::exp((static_cast<double>(xd[r * cols + j]) - m) / tau);
      out[static_cast<size_t>(r * cols + j)] = static_cast<real>(e);
      denom += e;
    }
    for (int64_t j = 0; j < cols; ++j)
      out[static_cast<size_t>(r * cols + j)] = static_cast<real>(out[static_cast<size_t>(r * cols + j)] / denom);
  }
  return Tensor::make_op(
      "softmax_temp", x.shape(), std::move(out), {x},
      [x, tau, rows, cols](TensorImpl& node) {
        if (!x.impl()->requires_grad) return;
        x.impl()->ensure_grad();
        const real* p = node.data.data();
        const real* gy = node.grad.data();
        for (int64_t r = 0; r < rows; ++r) {
          double dot = 0.0;
          for (int64_t j = 0; j < cols; ++j)
            dot += static_cast<double>(gy[r * cols + j]) * static_cast<double>(p[r * cols + j]);
          for (int64_t j = 0; j < cols; ++j)
            x.impl()->grad[static_cast<size_t>(r * cols + j)] += static_cast<real>(
                static_cast<double>(p[r * cols + j]) *
                (static_cast<double>(gy[r * cols + j]) - dot) / tau);
        }
      });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  ODIMO_CHECK(logits.rank() == 2, "cross_entropy: logits must be [N,K]");
  const int64_t n = logits.dim(0), k = logits.dim(1);
  ODIMO_CHECK(static_cast<int64_t>(labels.size()) == n,
              strcat_msg("cross_entropy: ", labels.size(), " labels for batch of ", n));
  auto probs = std::make_shared<std::vector<real>>(logits.data().size());
  const real* xd = logits.data().data();
  double loss = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    ODIMO_CHECK(labels[static_cast<size_t>(i)] >= 0 && labels[static_cast<size_t>(i)] < k,
                strcat_msg("cross_entropy: label ", labels[static_cast<size_t>(i)],
                           " out of range [0,", k, ")"));
    double m = xd[i * k];
    for (int64_t j = 1; j < k; ++j) m = std::max(m, static_cast<double>(xd[i * k + j]));
    double denom = 0.0;
    for (int64_t j = 0; j < k; ++j) denom += std::exp(static_cast<double>(xd[i * k + j]) - m);
    const double lse = m + std::log(denom);
    for (int64_t j = 0; j < k; ++j)
      (*probs)[static_cast<size_t>(i * k + j)] =
          static_cast<real>(std::exp(static_cast<double>(xd[i * k + j]) - lse));
    loss += lse - xd[i * k + labels[static_cast<size_t>(i)]];
  }
  loss /= static_cast<double>(n);
  auto labels_copy = std::make_shared<std::vector<int>>(labels);
  return Tensor::make_op(
      "cross_entropy", {1}, {static_cast<real>(loss)}, {logits},
      [logits, probs, labels_copy, n, k](TensorImpl& node) {
        if (!logits.impl()->requires_grad) return;
        logits.impl()->ensure_grad();
        const real g = node.grad[0];
        const real invn = static_cast<real>(1.0 / static_cast<double>(n));
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < k; ++j) {
            real d = (*probs)[static_cast<size_t>(i * k + j)];
            if (j == (*labels_copy)[static_cast<size_t>(i)]) d -= real{1};
            logits.impl()->grad[static_cast<size_t>(i * k + j)] += g * d * invn;
          }
      });
}

Tensor smooth_max(const std::vector<Tensor>& values, double beta) {
  ODIMO_CHECK(!values.empty(), "smooth_max: empty value list");
  ODIMO_CHECK(beta > 0, strcat_msg("smooth_max: beta must be positive, got ", beta));
  double m = -1e300;
  for (const auto& v : values) {
    ODIMO_CHECK(v.size() == 1, "smooth_max: values must be scalar tensors");
    m = std::max(m, static_cast<double>(v.item()));
  }
  double denom = 0.0;
  for (const auto& v : values) denom += std::exp((static_cast<double>(v.item()) - m) / beta);
  const double out = m + beta * std::log(denom);
  auto vals = values;  // keep parent handles for the backward weights
  return Tensor::make_op(
      "smooth_max", {1}, {static_cast<real>(out)}, values,
      [vals, beta, m, denom](TensorImpl& node) {
        const real g = node.grad[0];
        for (const auto& v : vals) {
          if (!v.impl()->requires_grad) continue;
          v.impl()->ensure_grad();
          const double wgt = std::exp((static_cast<double>(v.data()[0]) - m) / beta) / denom;
          v.impl()->grad[0] += static_cast<real>(g * wgt);
        }
      });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (real v : x.data()) acc += v;
  return Tensor::make_op("sum", {1}, {static_cast<real>(acc)}, {x},
                         [x](TensorImpl& node) {
                           if (!x.impl()->requires_grad) return;
                           x.impl()->ensure_grad();
                           for (auto& gv : x.impl()->grad) gv += node.grad[0];
                         });
}

Tensor mean(const Tensor& x) {
  return mul_scalar(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor col_sum(const Tensor& m) {
  ODIMO_CHECK(m.rank() == 2, "col_sum: input must be [R,C]");
  const int64_t rows = m.dim(0), cols = m.dim(1);
  std::vector<real> out(static_cast<size_t>(cols));
  for (int64_t c = 0; c < cols; ++c) {
    double acc = 0.0;
    for (int64_t r = 0; r < rows; ++r) acc += m.data()[static_cast<size_t>(r * cols + c)];
    out[static_cast<size_t>(c)] = static_cast<real>(acc);
  }
  return Tensor::make_op("col_sum", {cols}, std::move(out), {m},
                         [m, rows, cols](TensorImpl& node) {
                           if (!m.impl()->requires_grad) return;
                           m.impl()->ensure_grad();
                           for (int64_t r = 0; r < rows; ++r)
                             for (int64_t c = 0; c < cols; ++c)
                               m.impl()->grad[static_cast<size_t>(r * cols + c)] +=
                                   node.grad[static_cast<size_t>(c)];
                         });
}

Tensor index_scalar(const Tensor& v, int64_t i) {
  ODIMO_CHECK(i >= 0 && i < v.size(),
              strcat_msg("index_scalar: index ", i, " out of range [0,", v.size(), ")"));
  return Tensor::make_op("index_scalar", {1}, {v.data()[static_cast<size_t>(i)]}, {v},
                         [v, i](TensorImpl& node) {
                           if (!v.impl()->requires_grad) return;
                           v.impl()->ensure_grad();
                           v.impl()->grad[static_cast<size_t>(i)] += node.grad[0];
                         });
}

Tensor scale_rows(const Tensor& t, const Tensor& coeffs) {
  ODIMO_CHECK(t.rank() >= 1 && coeffs.rank() == 1, "scale_rows: bad ranks");
  const int64_t d0 = t.dim(0);
  ODIMO_CHECK(coeffs.dim(0) == d0,
              strcat_msg("scale_rows: ", coeffs.dim(0), " coefficients for ", d0, " rows"));
  const int64_t rest = t.size() / d0;
  std::vector<real> out(t.data().size());
  for (int64_t r = 0; r < d0; ++r) {
    const real c = coeffs.data()[static_cast<size_t>(r)];
    for (int64_t i = 0; i < rest; ++i)
      out[static_cast<size_t>(r * rest + i)] = t.data()[static_cast<size_t>(r * rest + i)] * c;
  }
  return Tensor::make_op(
      "scale_rows", t.shape(), std::move(out), {t, coeffs},
      [t, coeffs, d0, rest](TensorImpl& node) {
        if (t.impl()->requires_grad) {
          t.impl()->ensure_grad();
          for (int64_t r = 0; r < d0; ++r) {
            const real c = coeffs.data()[static_cast<size_t>(r)];
            for (int64_t i = 0; i < rest; ++i)
              t.impl()->grad[static_cast<size_t>(r * rest + i)] +=
                  node.grad[static_cast<size_t>(r * rest + i)] * c;
          }
        }
        if (coeffs.impl()->requires_grad) {
          coeffs.impl()->ensure_grad();
          for (int64_t r = 0; r < d0; ++r) {
            double acc = 0.0;
            for (int64_t i = 0; i < rest; ++i)
              acc += static_cast<double>(node.grad[static_cast<size_t>(r * rest + i)]) *
                     static_cast<double>(t.data()[static_cast<size_t>(r * rest + i)]);
            coeffs.impl()->grad[static_cast<size_t>(r)] += static_cast<real>(acc);
          }
        }
      });
}

namespace {

// Shared layout math for the per-channel broadcast ops: x is [N,C,...],
// g indexes C. Returns {n, c, inner}.
struct ChannelDims {
  int64_t n, c, inner;
};
ChannelDims channel_dims(const Tensor& x, const char* op) {
  ODIMO_CHECK(x.rank() >= 2, strcat_msg(op, ": input must be [N,C,...]"));
  int64_t inner = 1;
  for (int i = 2; i < x.rank(); ++i) inner *= x.dim(i);
  return {x.dim(0), x.dim(1), inner};
}

}  // namespace

Tensor scale_channels(const Tensor& x, const Tensor& g) {
  auto d = channel_dims(x, "scale_channels");
  ODIMO_CHECK(g.rank() == 1 && g.dim(0) == d.c,
              strcat_msg("scale_channels: ", g.size(), " scales for C=", d.c));
  std::vector<real> out(x.data().size());
  for (int64_t ni = 0; ni < d.n; ++ni)
    for (int64_t ci = 0; ci < d.c; ++ci) {
      const real gc = g.data()[static_cast<size_t>(ci)];
      const int64_t base = (ni * d.c + ci) * d.inner;
      for (int64_t i = 0; i < d.inner; ++i)
        out[static_cast<size_t>(base + i)] = x.data()[static_cast<size_t>(base + i)] * gc;
    }
  return Tensor::make_op(
      "scale_channels", x.shape(), std::move(out), {x, g},
      [x, g, d](TensorImpl& node) {
        if (x.impl()->requires_grad) {
          x.impl()->ensure_grad();
          for (int64_t ni = 0; ni < d.n; ++ni)
            for (int64_t ci = 0; ci < d.c; ++ci) {
              const real gc = g.data()[static_cast<size_t>(ci)];
              const int64_t base = (ni * d.c + ci) * d.inner;
              for (int64_t i = 0; i < d.inner; ++i)
                x.impl()->grad[static_cast<size_t>(base + i)] +=
                    node.grad[static_cast<size_t>(base + i)] * gc;
            }
        }
        if (g.impl()->requires_grad) {
          g.impl()->ensure_grad();
          for (int64_t ci = 0; ci < d.c; ++ci) {
            double acc = 0.0;
            for (int64_t ni = 0; ni < d.n; ++ni) {
              const int64_t base = (ni * d.c + ci) * d.inner;
              for (int64_t i = 0; i < d.inner; ++i)
                acc += static_cast<double>(node.grad[static_cast<size_t>(base + i)]) *
                       static_cast<double>(x.data()[static_cast<size_t>(base + i)]);
            }
            g.impl()->grad[static_cast<size_t>(ci)] += static_cast<real>(acc);
          }
        }
      });
}

Tensor shift_channels(const Tensor& x, const Tensor& b) {
  auto d = channel_dims(x, "shift_channels");
  ODIMO_CHECK(b.rank() == 1 && b.dim(0) == d.c,
              strcat_msg("shift_channels: ", b.size(), " offsets for C=", d.c));
  std::vector<real> out(x.data().size());
  for (int64_t ni = 0; ni < d.n; ++ni)
    for (int64_t ci = 0; ci < d.c; ++ci) {
      const real bc = b.data()[static_cast<size_t>(ci)];
      const int64_t base = (ni * d.c + ci) * d.inner;
      for (int64_t i = 0; i < d.inner; ++i)
        out[static_cast<size_t>(base + i)] = x.data()[static_cast<size_t>(base + i)] + bc;
    }
  return Tensor::make_op(
      "shift_channels", x.shape(), std::move(out), {x, b},
      [x, b, d](TensorImpl& node) {
        if (x.impl()->requires_grad) {
          x.impl()->ensure_grad();
          for (size_t i = 0; i < node.grad.size(); ++i)
            x.impl()->grad[i] += node.grad[i];
        }
        if (b.impl()->requires_grad) {
          b.impl()->ensure_grad();
          for (int64_t ci = 0; ci < d.c; ++ci) {
            double acc = 0.0;
            for (int64_t ni = 0; ni < d.n; ++ni) {
              const int64_t base = (ni * d.c + ci) * d.inner;
              for (int64_t i = 0; i < d.inner; ++i)
                acc += node.grad[static_cast<size_t>(base + i)];
            }
            b.impl()->grad[static_cast<size_t>(ci)] += static_cast<real>(acc);
          }
        }
      });
}

Tensor channel_mean(const Tensor& x) {
  auto d = channel_dims(x, "channel_mean");
  const double inv = 1.0 / static_cast<double>(d.n * d.inner);
  std::vector<real> out(static_cast<size_t>(d.c));
  for (int64_t ci = 0; ci < d.c; ++ci) {
    double acc = 0.0;
    for (int64_t ni = 0; ni < d.n; ++ni) {
      const int64_t base = (ni * d.c + ci) * d.inner;
      for (int64_t i = 0; i < d.inner; ++i) acc += x.data()[static_cast<size_t>(base + i)];
    }
    out[static_cast<size_t>(ci)] = static_cast<real>(acc * inv);
  }
  return Tensor::make_op("channel_mean", {d.c}, std::move(out), {x},
                         [x, d, inv](TensorImpl& node) {
                           if (!x.impl()->requires_grad) return;
                           x.impl()->ensure_grad();
                           for (int64_t ni = 0; ni < d.n; ++ni)
                             for (int64_t ci = 0; ci < d.c; ++ci) {
                               const real g = static_cast<real>(node.grad[static_cast<size_t>(ci)] * inv);
                               const int64_t base = (ni * d.c + ci) * d.inner;
                               for (int64_t i = 0; i < d.inner; ++i)
                                 x.impl()->grad[static_cast<size_t>(base + i)] += g;
                             }
                         });
}

Tensor ceil_ste(const Tensor& x) {
  std::vector<real> out(x.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::ceil(x.data()[i]);
  return Tensor::make_op("ceil_ste", x.shape(), std::move(out), {x},
                         [x](TensorImpl& node) {
                           if (!x.impl()->requires_grad) return;
                           x.impl()->ensure_grad();
                           for (size_t i = 0; i < node.grad.size(); ++i)
                             x.impl()->grad[i] += node.grad[i];
                         });
}

Tensor col_select(const Tensor& m, int64_t col) {
  ODIMO_CHECK(m.rank() == 2, "col_select: input must be [R,C]");
  const int64_t rows = m.dim(0), cols = m.dim(1);
  ODIMO_CHECK(col >= 0 && col < cols,
              strcat_msg("col_select: column ", col, " out of range [0,", cols, ")"));
  std::vector<real> out(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r)
    out[static_cast<size_t>(r)] = m.data()[static_cast<size_t>(r * cols + col)];
  return Tensor::make_op("col_select", {rows}, std::move(out), {m},
                         [m, col, rows, cols](TensorImpl& node) {
                           if (!m.impl()->requires_grad) return;
                           m.impl()->ensure_grad();
                           for (int64_t r = 0; r < rows; ++r)
                             m.impl()->grad[static_cast<size_t>(r * cols + col)] +=
                                 node.grad[static_cast<size_t>(r)];
                         });
}

Tensor reshape(const Tensor& x, Shape shape) {
  ODIMO_CHECK(numel(shape) == x.size(),
              strcat_msg("reshape: ", shape_str(x.shape()), " has ", x.size(),
                         " elements, target ", shape_str(shape), " has ", numel(shape)));
  std::vector<real> out = x.data();
  return Tensor::make_op("reshape", std::move(shape), std::move(out), {x},
                         [x](TensorImpl& node) {
                           if (!x.impl()->requires_grad) return;
                           x.impl()->ensure_grad();
                           for (size_t i = 0; i < node.grad.size(); ++i)
                             x.impl()->grad[i] += node.grad[i];
                         });
}

Tensor gather_rows(const Tensor& t, const std::vector<int64_t>& idx) {
  ODIMO_CHECK(t.rank() >= 1, "gather_rows: input must have rank >= 1");
  const int64_t d0 = t.dim(0);
  const int64_t rest = t.size() / d0;
  for (int64_t i : idx)
    ODIMO_CHECK(i >= 0 && i < d0, strcat_msg("gather_rows: row ", i, " out of range [0,", d0, ")"));
  Shape oshape = t.shape();
  oshape[0] = static_cast<int64_t>(idx.size());
  std::vector<real> out(static_cast<size_t>(rest) * idx.size());
  for (size_t r = 0; r < idx.size(); ++r)
    std::memcpy(out.data() + r * static_cast<size_t>(rest),
                t.data().data() + static_cast<size_t>(idx[r]) * static_cast<size_t>(rest),
                sizeof(real) * static_cast<size_t>(rest));
  auto idx_copy = std::make_shared<std::vector<int64_t>>(idx);
  return Tensor::make_op("gather_rows", std::move(oshape), std::move(out), {t},
                         [t, idx_copy, rest](TensorImpl& node) {
                           if (!t.impl()->requires_grad) return;
                           t.impl()->ensure_grad();
                           for (size_t r = 0; r < idx_copy->size(); ++r)
                             for (int64_t i = 0; i < rest; ++i)
                               t.impl()->grad[static_cast<size_t>((*idx_copy)[r] * rest + i)] +=
                                   node.grad[r * static_cast<size_t>(rest) + static_cast<size_t>(i)];
                         });
}

Tensor gather_channels(const Tensor& x, const std::vector<int64_t>& idx) {
  auto d = channel_dims(x, "gather_channels");
  for (int64_t i : idx)
    ODIMO_CHECK(i >= 0 && i < d.c,
                strcat_msg("gather_channels: channel ", i, " out of range [0,", d.c, ")"));
  Shape oshape = x.shape();
  oshape[1] = static_cast<int64_t>(idx.size());
  const int64_t pc = static_cast<int64_t>(idx.size());
  std::vector<real> out(static_cast<size_t>(d.n * pc * d.inner));
  for (int64_t ni = 0; ni < d.n; ++ni)
    for (int64_t ci = 0; ci < pc; ++ci)
      std::memcpy(out.data() + static_cast<size_t>((ni * pc + ci) * d.inner),
                  x.data().data() +
                      static_cast<size_t>((ni * d.c + idx[static_cast<size_t>(ci)]) * d.inner),
                  sizeof(real) * static_cast<size_t>(d.inner));
  auto idx_copy = std::make_shared<std::vector<int64_t>>(idx);
  return Tensor::make_op(
      "gather_channels", std::move(oshape), std::move(out), {x},
      [x, idx_copy, d, pc](TensorImpl& node) {
        if (!x.impl()->requires_grad) return;
        x.impl()->ensure_grad();
        for (int64_t ni = 0; ni < d.n; ++ni)
          for (int64_t ci = 0; ci < pc; ++ci) {
            const int64_t src = (ni * pc + ci) * d.inner;
            const int64_t dst = (ni * d.c + (*idx_copy)[static_cast<size_t>(ci)]) * d.inner;
            for (int64_t i = 0; i < d.inner; ++i)
              x.impl()->grad[static_cast<size_t>(dst + i)] +=
                  node.grad[static_cast<size_t>(src + i)];
          }
      });
}

Tensor scatter_channels(const std::vector<Tensor>& parts,
                        const std::vector<std::vector<int64_t>>& positions,
                        int64_t total_channels) {
  ODIMO_CHECK(!parts.empty() && parts.size() == positions.size(),
              "scatter_channels: parts/positions size mismatch");
  auto d0 = channel_dims(parts[0], "scatter_channels");
  const int64_t n = d0.n, inner = d0.inner;
  Shape oshape = parts[0].shape();
  oshape[1] = total_channels;
  std::vector<char> covered(static_cast<size_t>(total_channels), 0);
  for (size_t p = 0; p < parts.size(); ++p) {
    auto d = channel_dims(parts[p], "scatter_channels");
    ODIMO_CHECK(d.n == n && d.inner == inner, "scatter_channels: part shape mismatch");
    ODIMO_CHECK(d.c == static_cast<int64_t>(positions[p].size()),
                strcat_msg("scatter_channels: part ", p, " has ", d.c, " channels but ",
                           positions[p].size(), " positions"));
    for (int64_t ch : positions[p]) {
      ODIMO_CHECK(ch >= 0 && ch < total_channels && !covered[static_cast<size_t>(ch)],
                  strcat_msg("scatter_channels: channel ", ch, " out of range or duplicated"));
      covered[static_cast<size_t>(ch)] = 1;
    }
  }
  for (int64_t ch = 0; ch < total_channels; ++ch)
    ODIMO_CHECK(covered[static_cast<size_t>(ch)],
                strcat_msg("scatter_channels: channel ", ch, " not covered"));

  std::vector<real> out(static_cast<size_t>(n * total_channels * inner));
  for (size_t p = 0; p < parts.size(); ++p) {
    const auto& src = parts[p].data();
    const int64_t pc = static_cast<int64_t>(positions[p].size());
    for (int64_t ni = 0; ni < n; ++ni)
      for (int64_t ci = 0; ci < pc; ++ci)
        std::memcpy(out.data() + static_cast<size_t>((ni * total_channels + positions[p][static_cast<size_t>(ci)]) * inner),
                    src.data() + static_cast<size_t>((ni * pc + ci) * inner),
                    sizeof(real) * static_cast<size_t>(inner));
  }
  auto pos_copy = std::make_shared<std::vector<std::vector<int64_t>>>(positions);
  auto parts_copy = parts;
  return Tensor::make_op(
      "scatter_channels", std::move(oshape), std::move(out), parts,
      [parts_copy, pos_copy, n, inner, total_channels](TensorImpl& node) {
        for (size_t p = 0; p < parts_copy.size(); ++p) {
          const auto& part = parts_copy[p];
          if (!part.impl()->requires_grad) continue;
          part.impl()->ensure_grad();
          const int64_t pc = static_cast<int64_t>((*pos_copy)[p].size());
          for (int64_t ni = 0; ni < n; ++ni)
            for (int64_t ci = 0; ci < pc; ++ci) {
              const int64_t dst = (ni * pc + ci) * inner;
              const int64_t src = (ni * total_channels + (*pos_copy)[p][static_cast<size_t>(ci)]) * inner;
              for (int64_t i = 0; i < inner; ++i)
                part.impl()->grad[static_cast<size_t>(dst + i)] +=
                    node.grad[static_cast<size_t>(src + i)];
            }
        }
      });
}

int64_t argmax_row(const std::vector<real>& data, int64_t row, int64_t cols) {
  int64_t best = 0;
  for (int64_t j = 1; j < cols; ++j)
    if (data[static_cast<size_t>(row * cols + j)] > data[static_cast<size_t>(row * cols + best)])
      best = j;
  return best;
}

}  // namespace odimo
