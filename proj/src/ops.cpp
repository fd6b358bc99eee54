// SPDX-License-Identifier: Apache-2.0
#include "satswin/ops.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "eigen_maps.hpp"
#include "satswin/errors.hpp"

SATSWIN_NAMESPACE_BEGIN

using detail::ConstMatMap;
using detail::ConstVecMap;
using detail::MatMap;
using detail::rows_of;
using detail::VecMap;

Var linear(const Var& x, const Var& weight, const Var& bias) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  if (wv.rank() != 2 || xv.rank() == 0 || xv.shape().back() != wv.dim(0)) {
    throw ShapeError("linear: input " + to_string(xv.shape()) + " vs weight " +
                     to_string(wv.shape()));
  }
  const std::size_t in = wv.dim(0);
  const std::size_t out = wv.dim(1);
  if (bias.defined() && (bias.value().rank() != 1 || bias.value().dim(0) != out)) {
    throw ShapeError("linear: bias " + to_string(bias.shape()) + " vs out width " +
                     std::to_string(out));
  }
  const std::size_t rows = rows_of(xv);
  Shape out_shape = xv.shape();
  out_shape.back() = out;
  Tensor y(out_shape);
  ConstMatMap X(xv.data(), rows, in);
  ConstMatMap W(wv.data(), in, out);
  MatMap Y(y.data(), rows, out);
  Y.noalias() = X * W;
  if (bias.defined()) Y.rowwise() += ConstVecMap(bias.value().data(), out);

  std::vector<Var> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return Var::record(std::move(y), std::move(inputs), [x, weight, bias, rows, in, out](const Tensor& g) {
    ConstMatMap G(g.data(), rows, out);
    if (x.requires_grad()) {
      Tensor gx(x.shape());
      MatMap(gx.data(), rows, in).noalias() = G * ConstMatMap(weight.value().data(), in, out).transpose();
      x.accumulate_grad(gx);
    }
    if (weight.requires_grad()) {
      Tensor gw(weight.shape());
      MatMap(gw.data(), in, out).noalias() = ConstMatMap(x.value().data(), rows, in).transpose() * G;
      weight.accumulate_grad(gw);
    }
    if (bias.requires_grad()) {
      Tensor gb(bias.shape());
      VecMap(gb.data(), out) = G.colwise().sum();
      bias.accumulate_grad(gb);
    }
  });
}

Var add(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  Tensor y(a.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] + b.value()[i];
  return Var::record(std::move(y), {a, b}, [a, b](const Tensor& g) {
    if (a.requires_grad()) a.accumulate_grad(g);
    if (b.requires_grad()) b.accumulate_grad(g);
  });
}

Var scale(const Var& x, Real factor) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x.value()[i] * factor;
  return Var::record(std::move(y), {x}, [x, factor](const Tensor& g) {
    Tensor gx(x.shape());
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = g[i] * factor;
    x.accumulate_grad(gx);
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor y = x.value().reshaped(std::move(shape));
  return Var::record(std::move(y), {x}, [x](const Tensor& g) {
    x.accumulate_grad(g.reshaped(x.shape()));
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, Real eps) {
  const Tensor& xv = x.value();
  const std::size_t width = xv.shape().back();
  if (gamma.value().size() != width || beta.value().size() != width) {
    throw ShapeError("layer_norm: affine width " + std::to_string(gamma.value().size()) +
                     " vs channels " + std::to_string(width));
  }
  const std::size_t rows = rows_of(xv);
  Tensor y(xv.shape());
  // xhat and 1/sigma are kept for the backward pass.
  auto xhat = std::make_shared<Tensor>(xv.shape());
  auto inv_std = std::make_shared<std::vector<Real>>(rows);
  const Real* gm = gamma.value().data();
  const Real* bt = beta.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* xr = xv.data() + r * width;
    double mean = 0;
    for (std::size_t c = 0; c < width; ++c) mean += xr[c];
    mean /= static_cast<double>(width);
    double var = 0;
    for (std::size_t c = 0; c < width; ++c) {
      const double d = xr[c] - mean;
      var += d * d;
    }
    var /= static_cast<double>(width);
    const Real is = static_cast<Real>(1.0 / std::sqrt(var + eps));
    (*inv_std)[r] = is;
    Real* hr = xhat->data() + r * width;
    Real* yr = y.data() + r * width;
    for (std::size_t c = 0; c < width; ++c) {
      hr[c] = static_cast<Real>(xr[c] - mean) * is;
      yr[c] = hr[c] * gm[c] + bt[c];
    }
  }
  return Var::record(std::move(y), {x, gamma, beta}, [x, gamma, beta, xhat, inv_std, rows, width](const Tensor& g) {
    const Real* gm = gamma.value().data();
    if (gamma.requires_grad() || beta.requires_grad()) {
      Tensor gg(gamma.shape());
      Tensor gb(beta.shape());
      for (std::size_t r = 0; r < rows; ++r) {
        const Real* gr = g.data() + r * width;
        const Real* hr = xhat->data() + r * width;
        for (std::size_t c = 0; c < width; ++c) {
          gg[c] += gr[c] * hr[c];
          gb[c] += gr[c];
        }
      }
      if (gamma.requires_grad()) gamma.accumulate_grad(gg);
      if (beta.requires_grad()) beta.accumulate_grad(gb);
    }
    if (x.requires_grad()) {
      Tensor gx(x.shape());
      const Real inv_n = Real(1) / static_cast<Real>(width);
      for (std::size_t r = 0; r < rows; ++r) {
        const Real* gr = g.data() + r * width;
        const Real* hr = xhat->data() + r * width;
        Real* out = gx.data() + r * width;
        Real sum_dh = 0;
        Real sum_dh_h = 0;
        for (std::size_t c = 0; c < width; ++c) {
          const Real dh = gr[c] * gm[c];
          sum_dh += dh;
          sum_dh_h += dh * hr[c];
        }
        const Real is = (*inv_std)[r];
        for (std::size_t c = 0; c < width; ++c) {
          const Real dh = gr[c] * gm[c];
          out[c] = is * (dh - inv_n * sum_dh - hr[c] * inv_n * sum_dh_h);
        }
      }
      x.accumulate_grad(gx);
    }
  });
}

Var gelu(const Var& x) {
  const Tensor& xv = x.value();
  Tensor y(xv.shape());
  constexpr Real kInvSqrt2 = Real(0.70710678118654752440);
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = Real(0.5) * xv[i] * (Real(1) + std::erf(xv[i] * kInvSqrt2));
  }
  return Var::record(std::move(y), {x}, [x](const Tensor& g) {
    constexpr Real kInvSqrt2 = Real(0.70710678118654752440);
    constexpr Real kInvSqrt2Pi = Real(0.39894228040143267794);
    const Tensor& xv = x.value();
    Tensor gx(xv.shape());
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const Real v = xv[i];
      const Real cdf = Real(0.5) * (Real(1) + std::erf(v * kInvSqrt2));
      const Real pdf = kInvSqrt2Pi * std::exp(Real(-0.5) * v * v);
      gx[i] = g[i] * (cdf + v * pdf);
    }
    x.accumulate_grad(gx);
  });
}

Var clamp(const Var& x, Real lo, Real hi) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::min(hi, std::max(lo, x.value()[i]));
  return Var::record(std::move(y), {x}, [x, lo, hi](const Tensor& g) {
    Tensor gx(x.shape());
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const Real v = x.value()[i];
      gx[i] = (v > lo && v < hi) ? g[i] : Real(0);
    }
    x.accumulate_grad(gx);
  });
}

Var gather_rows(const Var& x, std::size_t row_width, std::span<const std::int64_t> index,
                Shape out_shape) {
  const Tensor& xv = x.value();
  if (row_width == 0 || xv.size() % row_width != 0) {
    throw ShapeError("gather_rows: row width " + std::to_string(row_width) +
                     " does not divide input " + to_string(xv.shape()));
  }
  if (volume(out_shape) != index.size() * row_width) {
    throw ShapeError("gather_rows: output shape " + to_string(out_shape) + " holds " +
                     std::to_string(volume(out_shape)) + " values, index selects " +
                     std::to_string(index.size() * row_width));
  }
  const auto in_rows = static_cast<std::int64_t>(xv.size() / row_width);
  Tensor y(std::move(out_shape));
  for (std::size_t k = 0; k < index.size(); ++k) {
    const std::int64_t src = index[k];
    if (src < 0) continue;
    if (src >= in_rows) throw ShapeError("gather_rows: index out of range");
    std::copy_n(xv.data() + src * row_width, row_width, y.data() + k * row_width);
  }
  std::vector<std::int64_t> idx(index.begin(), index.end());
  return Var::record(std::move(y), {x}, [x, row_width, idx = std::move(idx)](const Tensor& g) {
    Tensor gx(x.shape());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (idx[k] < 0) continue;
      Real* dst = gx.data() + idx[k] * row_width;
      const Real* src = g.data() + k * row_width;
      for (std::size_t c = 0; c < row_width; ++c) dst[c] += src[c];
    }
    x.accumulate_grad(gx);
  });
}

Var concat_channels(const Var& a, const Var& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != sb.size() || sa.empty() || !std::equal(sa.begin(), sa.end() - 1, sb.begin())) {
    throw ShapeError("concat_channels: " + to_string(sa) + " vs " + to_string(sb));
  }
  const std::size_t ca = sa.back();
  const std::size_t cb = sb.back();
  const std::size_t rows = rows_of(a.value());
  Shape out_shape = sa;
  out_shape.back() = ca + cb;
  Tensor y(out_shape);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.value().data() + r * ca, ca, y.data() + r * (ca + cb));
    std::copy_n(b.value().data() + r * cb, cb, y.data() + r * (ca + cb) + ca);
  }
  return Var::record(std::move(y), {a, b}, [a, b, rows, ca, cb](const Tensor& g) {
    if (a.requires_grad()) {
      Tensor ga(a.shape());
      for (std::size_t r = 0; r < rows; ++r) std::copy_n(g.data() + r * (ca + cb), ca, ga.data() + r * ca);
      a.accumulate_grad(ga);
    }
    if (b.requires_grad()) {
      Tensor gb(b.shape());
      for (std::size_t r = 0; r < rows; ++r) std::copy_n(g.data() + r * (ca + cb) + ca, cb, gb.data() + r * cb);
      b.accumulate_grad(gb);
    }
  });
}

Var substitute_rows(const Var& x, std::span<const std::uint8_t> select, const Var& token) {
  const std::size_t width = x.shape().back();
  const std::size_t rows = rows_of(x.value());
  if (select.size() != rows) {
    throw ShapeError("substitute_rows: selection covers " + std::to_string(select.size()) +
                     " rows, input has " + std::to_string(rows));
  }
  if (token.value().size() != width) {
    throw ShapeError("substitute_rows: token width " + std::to_string(token.value().size()) +
                     " vs channels " + std::to_string(width));
  }
  Tensor y = x.value();
  for (std::size_t r = 0; r < rows; ++r) {
    if (select[r]) std::copy_n(token.value().data(), width, y.data() + r * width);
  }
  std::vector<std::uint8_t> sel(select.begin(), select.end());
  return Var::record(std::move(y), {x, token}, [x, token, width, sel = std::move(sel)](const Tensor& g) {
    if (x.requires_grad()) {
      Tensor gx = g;
      for (std::size_t r = 0; r < sel.size(); ++r) {
        if (sel[r]) std::fill_n(gx.data() + r * width, width, Real(0));
      }
      x.accumulate_grad(gx);
    }
    if (token.requires_grad()) {
      Tensor gt(token.shape());
      for (std::size_t r = 0; r < sel.size(); ++r) {
        if (!sel[r]) continue;
        for (std::size_t c = 0; c < width; ++c) gt[c] += g[r * width + c];
      }
      token.accumulate_grad(gt);
    }
  });
}

Var sum(const Var& x) {
  double s = 0;
  for (Real v : x.value().values()) s += v;
  Tensor y(Shape{}, static_cast<Real>(s));
  return Var::record(std::move(y), {x}, [x](const Tensor& g) {
    x.accumulate_grad(Tensor(x.shape(), g[0]));
  });
}

Var weighted_mse(const Var& pred, const Tensor& target, const Tensor& weight) {
  if (pred.shape() != target.shape() || target.shape() != weight.shape()) {
    throw ShapeError("weighted_mse: pred " + to_string(pred.shape()) + ", target " +
                     to_string(target.shape()) + ", weight " + to_string(weight.shape()));
  }
  double num = 0;
  double den = 0;
  const Real* p = pred.value().data();
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double d = static_cast<double>(p[i]) - target[i];
    num += weight[i] * d * d;
    den += weight[i];
  }
  if (den <= 0) throw Error("weighted_mse: empty support (all weights zero)");
  Tensor y(Shape{}, static_cast<Real>(num / den));
  return Var::record(std::move(y), {pred}, [pred, target, weight, den](const Tensor& g) {
    Tensor gp(pred.shape());
    const Real k = static_cast<Real>(2.0 * g[0] / den);
    for (std::size_t i = 0; i < gp.size(); ++i) {
      gp[i] = weight[i] == 0 ? Real(0) : k * weight[i] * (pred.value()[i] - target[i]);
    }
    pred.accumulate_grad(gp);
  });
}

Var softmax_cross_entropy(const Var& logits, std::span<const std::int32_t> labels,
                          std::span<const double> class_weights, std::int32_t ignore_label) {
  const std::size_t k = logits.shape().back();
  const std::size_t rows = rows_of(logits.value());
  if (labels.size() != rows) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(rows) + " logit rows");
  }
  if (!class_weights.empty() && class_weights.size() != k) {
    throw ShapeError("cross_entropy: " + std::to_string(class_weights.size()) +
                     " class weights for " + std::to_string(k) + " classes");
  }
  auto probs = std::make_shared<Tensor>(logits.shape());
  double loss = 0;
  double norm = 0;
  const Real* lv = logits.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* lr = lv + r * k;
    Real* pr = probs->data() + r * k;
    Real mx = lr[0];
    for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, lr[c]);
    double z = 0;
    for (std::size_t c = 0; c < k; ++c) {
      pr[c] = std::exp(lr[c] - mx);
      z += pr[c];
    }
    for (std::size_t c = 0; c < k; ++c) pr[c] = static_cast<Real>(pr[c] / z);
    const std::int32_t y = labels[r];
    if (y == ignore_label) continue;
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw Error("cross_entropy: label " + std::to_string(y) + " outside [0, " +
                  std::to_string(k) + ")");
    }
    const double w = class_weights.empty() ? 1.0 : class_weights[static_cast<std::size_t>(y)];
    loss += -w * (static_cast<double>(lr[y]) - mx - std::log(z));
    norm += w;
  }
  if (norm <= 0) throw Error("cross_entropy: no scored pixels");
  std::vector<std::int32_t> lab(labels.begin(), labels.end());
  std::vector<double> cw(class_weights.begin(), class_weights.end());
  Tensor y(Shape{}, static_cast<Real>(loss / norm));
  return Var::record(std::move(y), {logits}, [logits, probs, lab = std::move(lab), cw = std::move(cw), ignore_label, norm, k](const Tensor& g) {
    Tensor gl(logits.shape());
    for (std::size_t r = 0; r < lab.size(); ++r) {
      if (lab[r] == ignore_label) continue;
      const double w = cw.empty() ? 1.0 : cw[static_cast<std::size_t>(lab[r])];
      const Real s = static_cast<Real>(g[0] * w / norm);
      const Real* pr = probs->data() + r * k;
      Real* out = gl.data() + r * k;
      for (std::size_t c = 0; c < k; ++c) out[c] = s * pr[c];
      out[lab[r]] -= s;
    }
    logits.accumulate_grad(gl);
  });
}

SATSWIN_NAMESPACE_END
