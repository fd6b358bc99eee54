// SPDX-License-Identifier: Apache-2.0
#include "satswin/window_attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "eigen_maps.hpp"
#include "satswin/errors.hpp"
#include "satswin/ops.hpp"
#include "satswin/parallel.hpp"

SATSWIN_NAMESPACE_BEGIN
namespace attention {

using detail::ConstStridedMap;
using detail::RowMatrix;
using detail::StridedMap;

namespace {

std::size_t round_up(std::size_t v, std::size_t m) { return (v + m - 1) / m * m; }

Extent3 grid_extent(const Var& grid, const char* what) {
  if (grid.shape().size() != 5) {
    throw ShapeError(std::string(what) + ": expected rank-5 [N,T,Gh,Gw,C], got " +
                     to_string(grid.shape()));
  }
  return {grid.dim(1), grid.dim(2), grid.dim(3)};
}

Var roll(const Var& grid, Extent3 offsets, bool forward) {
  const Extent3 g = grid_extent(grid, "cyclic_shift");
  const std::size_t n = grid.dim(0);
  const std::size_t st = g.t ? offsets.t % g.t : 0;
  const std::size_t sh = g.h ? offsets.h % g.h : 0;
  const std::size_t sw = g.w ? offsets.w % g.w : 0;
  std::vector<std::int64_t> index;
  index.reserve(n * g.volume());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t t = 0; t < g.t; ++t)
      for (std::size_t h = 0; h < g.h; ++h)
        for (std::size_t w = 0; w < g.w; ++w) {
          const std::size_t tt = forward ? (t + st) % g.t : (t + g.t - st) % g.t;
          const std::size_t hh = forward ? (h + sh) % g.h : (h + g.h - sh) % g.h;
          const std::size_t ww = forward ? (w + sw) % g.w : (w + g.w - sw) % g.w;
          index.push_back(static_cast<std::int64_t>(((b * g.t + tt) * g.h + hh) * g.w + ww));
        }
  return gather_rows(grid, grid.dim(4), index, grid.shape());
}

}  // namespace

WindowSet window_partition(const Var& grid, Extent3 window, Extent3 shift) {
  const Extent3 g = grid_extent(grid, "window_partition");
  if (window.t == 0 || window.h == 0 || window.w == 0) {
    throw ShapeError("window_partition: window extents must be positive");
  }
  WindowGeometry geo;
  geo.batch = grid.dim(0);
  geo.grid = g;
  geo.padded = {round_up(g.t, window.t), round_up(g.h, window.h), round_up(g.w, window.w)};
  geo.window = window;
  geo.shift = shift;
  geo.channels = grid.dim(4);

  const std::size_t nt = geo.padded.t / window.t;
  const std::size_t nh = geo.padded.h / window.h;
  const std::size_t nw = geo.padded.w / window.w;
  const std::size_t vol = window.volume();
  std::vector<std::int64_t> index;
  index.reserve(geo.batch * geo.windows_per_sample() * vol);
  for (std::size_t b = 0; b < geo.batch; ++b)
    for (std::size_t a = 0; a < nt; ++a)
      for (std::size_t i = 0; i < nh; ++i)
        for (std::size_t j = 0; j < nw; ++j)
          for (std::size_t dt = 0; dt < window.t; ++dt)
            for (std::size_t dh = 0; dh < window.h; ++dh)
              for (std::size_t dw = 0; dw < window.w; ++dw) {
                const std::size_t t = a * window.t + dt;
                const std::size_t h = i * window.h + dh;
                const std::size_t w = j * window.w + dw;
                if (t >= g.t || h >= g.h || w >= g.w) {
                  index.push_back(-1);
                } else {
                  index.push_back(static_cast<std::int64_t>(((b * g.t + t) * g.h + h) * g.w + w));
                }
              }
  WindowSet ws;
  ws.windows = gather_rows(grid, geo.channels, index,
                           {geo.batch * geo.windows_per_sample(), vol, geo.channels});
  ws.geometry = geo;
  return ws;
}

Var window_reverse(const WindowSet& ws) {
  const WindowGeometry& geo = ws.geometry;
  const Extent3 win = geo.window;
  const Shape expected{geo.batch * geo.windows_per_sample(), win.volume(), geo.channels};
  if (!ws.windows.defined() || ws.windows.shape() != expected) {
    throw ShapeError("window_reverse: windows " +
                     (ws.windows.defined() ? to_string(ws.windows.shape()) : std::string("<none>")) +
                     " do not match provenance " + to_string(expected));
  }
  const std::size_t nt = geo.padded.t / win.t;
  const std::size_t nh = geo.padded.h / win.h;
  const std::size_t nw = geo.padded.w / win.w;
  std::vector<std::int64_t> index;
  index.reserve(geo.batch * geo.grid.volume());
  for (std::size_t b = 0; b < geo.batch; ++b)
    for (std::size_t t = 0; t < geo.grid.t; ++t)
      for (std::size_t h = 0; h < geo.grid.h; ++h)
        for (std::size_t w = 0; w < geo.grid.w; ++w) {
          const std::size_t window_id = ((b * nt + t / win.t) * nh + h / win.h) * nw + w / win.w;
          const std::size_t token = ((t % win.t) * win.h + h % win.h) * win.w + w % win.w;
          index.push_back(static_cast<std::int64_t>(window_id * win.volume() + token));
        }
  return gather_rows(ws.windows, geo.channels, index,
                     {geo.batch, geo.grid.t, geo.grid.h, geo.grid.w, geo.channels});
}

Var cyclic_shift(const Var& grid, Extent3 offsets) { return roll(grid, offsets, true); }
Var cyclic_unshift(const Var& grid, Extent3 offsets) { return roll(grid, offsets, false); }

bool boundary_mask_trivial(Extent3 grid, Extent3 window, Extent3 shift) {
  const bool no_shift = shift.t == 0 && shift.h == 0 && shift.w == 0;
  const bool no_pad = grid.t % window.t == 0 && grid.h % window.h == 0 && grid.w % window.w == 0;
  return no_shift && no_pad;
}

BoundaryMask build_boundary_mask(Extent3 grid, Extent3 window, Extent3 shift) {
  if (window.t == 0 || window.h == 0 || window.w == 0) {
    throw ShapeError("build_boundary_mask: window extents must be positive");
  }
  const Extent3 padded{round_up(grid.t, window.t), round_up(grid.h, window.h),
                       round_up(grid.w, window.w)};
  constexpr int kPadding = 8;
  auto region = [&](std::size_t t, std::size_t h, std::size_t w) {
    if (t >= grid.t || h >= grid.h || w >= grid.w) return kPadding;
    const int wt = shift.t > 0 && t + shift.t >= grid.t;
    const int wh = shift.h > 0 && h + shift.h >= grid.h;
    const int ww = shift.w > 0 && w + shift.w >= grid.w;
    return wt * 4 + wh * 2 + ww;
  };
  const std::size_t nt = padded.t / window.t;
  const std::size_t nh = padded.h / window.h;
  const std::size_t nw = padded.w / window.w;
  const std::size_t vol = window.volume();
  BoundaryMask mask{Tensor({nt * nh * nw, vol, vol})};
  std::vector<int> labels(vol);
  std::size_t id = 0;
  for (std::size_t a = 0; a < nt; ++a)
    for (std::size_t i = 0; i < nh; ++i)
      for (std::size_t j = 0; j < nw; ++j, ++id) {
        std::size_t k = 0;
        for (std::size_t dt = 0; dt < window.t; ++dt)
          for (std::size_t dh = 0; dh < window.h; ++dh)
            for (std::size_t dw = 0; dw < window.w; ++dw)
              labels[k++] = region(a * window.t + dt, i * window.h + dh, j * window.w + dw);
        Real* m = mask.additive.data() + id * vol * vol;
        for (std::size_t q = 0; q < vol; ++q)
          for (std::size_t kk = 0; kk < vol; ++kk)
            m[q * vol + kk] = labels[q] == labels[kk] ? Real(0) : kMaskedLogit;
      }
  return mask;
}

std::size_t relative_table_rows(Extent3 tw) {
  return (2 * tw.t - 1) * (2 * tw.h - 1) * (2 * tw.w - 1);
}

std::vector<std::int32_t> relative_position_index(Extent3 window, Extent3 tw) {
  if (window.t > tw.t || window.h > tw.h || window.w > tw.w) {
    throw ShapeError("relative_position_index: window exceeds bias-table extent");
  }
  const std::size_t vol = window.volume();
  std::vector<std::int32_t> index(vol * vol);
  std::vector<Extent3> coords;
  coords.reserve(vol);
  for (std::size_t t = 0; t < window.t; ++t)
    for (std::size_t h = 0; h < window.h; ++h)
      for (std::size_t w = 0; w < window.w; ++w) coords.push_back({t, h, w});
  const std::size_t sh = 2 * tw.h - 1;
  const std::size_t sw = 2 * tw.w - 1;
  for (std::size_t q = 0; q < vol; ++q)
    for (std::size_t k = 0; k < vol; ++k) {
      const std::size_t dt = coords[q].t + tw.t - 1 - coords[k].t;
      const std::size_t dh = coords[q].h + tw.h - 1 - coords[k].h;
      const std::size_t dw = coords[q].w + tw.w - 1 - coords[k].w;
      index[q * vol + k] = static_cast<std::int32_t>((dt * sh + dh) * sw + dw);
    }
  return index;
}

Var attention_core(const Var& qkv, const Var& bias_table, const std::vector<std::int32_t>& rel_index,
                   std::size_t heads, const Tensor* mask, AttentionStats* stats) {
  if (qkv.shape().size() != 3 || qkv.dim(2) % 3 != 0) {
    throw ShapeError("attention_core: qkv must be [W, V, 3C], got " + to_string(qkv.shape()));
  }
  const std::size_t windows = qkv.dim(0);
  const std::size_t vol = qkv.dim(1);
  const std::size_t c = qkv.dim(2) / 3;
  if (heads == 0 || c % heads != 0) {
    throw ShapeError("attention_core: " + std::to_string(c) + " channels do not split into " +
                     std::to_string(heads) + " heads");
  }
  const std::size_t d = c / heads;
  if (rel_index.size() != vol * vol) throw ShapeError("attention_core: relative index size mismatch");
  if (bias_table.shape().size() != 2 || bias_table.dim(1) != heads) {
    throw ShapeError("attention_core: bias table " + to_string(bias_table.shape()) + " for " +
                     std::to_string(heads) + " heads");
  }
  const auto table_rows = static_cast<std::int32_t>(bias_table.dim(0));
  for (auto r : rel_index) {
    if (r < 0 || r >= table_rows) throw ShapeError("attention_core: relative index out of table");
  }
  std::size_t mask_windows = 0;
  if (mask) {
    if (mask->rank() != 3 || mask->dim(1) != vol || mask->dim(2) != vol || mask->dim(0) == 0 ||
        windows % mask->dim(0) != 0) {
      throw ShapeError("attention_core: mask " + to_string(mask->shape()) + " for " +
                       std::to_string(windows) + " windows of " + std::to_string(vol));
    }
    mask_windows = mask->dim(0);
  }
  if (stats) {
    ++stats->calls;
    stats->score_elements += windows * heads * vol * vol;
  }

  const Real scale = Real(1) / std::sqrt(static_cast<Real>(d));
  auto probs = std::make_shared<Tensor>(Shape{windows, heads, vol, vol});
  Tensor out({windows, vol, c});
  const Real* table = bias_table.value().data();
  const Real* qkv_data = qkv.value().data();
  const auto stride3 = static_cast<Eigen::Index>(3 * c);
  const auto vi = static_cast<Eigen::Index>(vol);
  const auto di = static_cast<Eigen::Index>(d);

  parallel_for(windows, [&](std::size_t w) {
    const Real* base = qkv_data + w * vol * 3 * c;
    RowMatrix scores(vi, vi);
    for (std::size_t h = 0; h < heads; ++h) {
      ConstStridedMap q(base + h * d, vi, di, Eigen::OuterStride<>(stride3));
      ConstStridedMap k(base + c + h * d, vi, di, Eigen::OuterStride<>(stride3));
      ConstStridedMap v(base + 2 * c + h * d, vi, di, Eigen::OuterStride<>(stride3));
      scores.noalias() = (q * k.transpose()) * scale;
      const Real* m = mask ? mask->data() + (w % mask_windows) * vol * vol : nullptr;
      Real* p = probs->data() + (w * heads + h) * vol * vol;
      for (std::size_t i = 0; i < vol; ++i) {
        Real* row = p + i * vol;
        Real mx = -std::numeric_limits<Real>::infinity();
        for (std::size_t j = 0; j < vol; ++j) {
          Real s = scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) +
                   table[static_cast<std::size_t>(rel_index[i * vol + j]) * heads + h];
          if (m) s += m[i * vol + j];
          row[j] = s;
          mx = std::max(mx, s);
        }
        Real z = 0;
        for (std::size_t j = 0; j < vol; ++j) {
          row[j] = std::exp(row[j] - mx);
          z += row[j];
        }
        const Real inv = Real(1) / z;
        for (std::size_t j = 0; j < vol; ++j) row[j] *= inv;
      }
      Eigen::Map<const RowMatrix> attn(p, vi, vi);
      StridedMap o(out.data() + w * vol * c + h * d, vi, di, Eigen::OuterStride<>(static_cast<Eigen::Index>(c)));
      o.noalias() = attn * v;
    }
  });

  return Var::record(std::move(out), {qkv, bias_table},
                     [qkv, bias_table, rel_index, heads, probs, windows, vol, c, d, scale](const Tensor& g) {
    const auto stride3 = static_cast<Eigen::Index>(3 * c);
    const auto vi = static_cast<Eigen::Index>(vol);
    const auto di = static_cast<Eigen::Index>(d);
    const Real* qkv_data = qkv.value().data();
    Tensor gqkv(qkv.shape());
    // probs is overwritten in place by dScores; the bias-table reduction reads it afterwards.
    parallel_for(windows, [&](std::size_t w) {
      const Real* base = qkv_data + w * vol * 3 * c;
      Real* gbase = gqkv.data() + w * vol * 3 * c;
      RowMatrix dattn(vi, vi);
      for (std::size_t h = 0; h < heads; ++h) {
        ConstStridedMap q(base + h * d, vi, di, Eigen::OuterStride<>(stride3));
        ConstStridedMap k(base + c + h * d, vi, di, Eigen::OuterStride<>(stride3));
        ConstStridedMap v(base + 2 * c + h * d, vi, di, Eigen::OuterStride<>(stride3));
        ConstStridedMap go(g.data() + w * vol * c + h * d, vi, di, Eigen::OuterStride<>(static_cast<Eigen::Index>(c)));
        StridedMap gq(gbase + h * d, vi, di, Eigen::OuterStride<>(stride3));
        StridedMap gk(gbase + c + h * d, vi, di, Eigen::OuterStride<>(stride3));
        StridedMap gv(gbase + 2 * c + h * d, vi, di, Eigen::OuterStride<>(stride3));
        Eigen::Map<RowMatrix> p(probs->data() + (w * heads + h) * vol * vol, vi, vi);
        gv.noalias() = p.transpose() * go;
        dattn.noalias() = go * v.transpose();
        for (Eigen::Index i = 0; i < vi; ++i) {
          Real dot = 0;
          for (Eigen::Index j = 0; j < vi; ++j) dot += dattn(i, j) * p(i, j);
          for (Eigen::Index j = 0; j < vi; ++j) p(i, j) = p(i, j) * (dattn(i, j) - dot);
        }
        gq.noalias() = (p * k) * scale;
        gk.noalias() = (p.transpose() * q) * scale;
      }
    });
    if (qkv.requires_grad()) qkv.accumulate_grad(gqkv);
    if (bias_table.requires_grad()) {
      Tensor gtable(bias_table.shape());
      for (std::size_t w = 0; w < windows; ++w)
        for (std::size_t h = 0; h < heads; ++h) {
          const Real* ds = probs->data() + (w * heads + h) * vol * vol;
          for (std::size_t ij = 0; ij < vol * vol; ++ij) {
            gtable[static_cast<std::size_t>(rel_index[ij]) * heads + h] += ds[ij];
          }
        }
      bias_table.accumulate_grad(gtable);
    }
  });
}

WindowSet window_attention(const WindowSet& ws, const AttentionWeights& w, const Tensor* mask,
                           AttentionStats* stats) {
  const std::size_t c = ws.geometry.channels;
  if (w.qkv_weight.shape() != Shape{c, 3 * c} || w.proj_weight.shape() != Shape{c, c}) {
    throw ShapeError("window_attention: weights qkv " + to_string(w.qkv_weight.shape()) +
                     ", proj " + to_string(w.proj_weight.shape()) + " for " + std::to_string(c) +
                     " channels");
  }
  if (w.heads == 0 || c % w.heads != 0) {
    throw ShapeError("window_attention: " + std::to_string(c) + " channels is not a multiple of " +
                     std::to_string(w.heads) + " heads");
  }
  const auto rel = relative_position_index(ws.geometry.window, w.table_window);
  if (w.bias_table.dim(0) != relative_table_rows(w.table_window)) {
    throw ShapeError("window_attention: bias table has " + std::to_string(w.bias_table.dim(0)) +
                     " rows, window needs " + std::to_string(relative_table_rows(w.table_window)));
  }
  Var qkv = linear(ws.windows, w.qkv_weight, w.qkv_bias);
  Var ctx = attention_core(qkv, w.bias_table, rel, w.heads, mask, stats);
  WindowSet out;
  out.windows = linear(ctx, w.proj_weight, w.proj_bias);
  out.geometry = ws.geometry;
  return out;
}

BlockLayout block_layout(Extent3 grid, const WindowSize& configured, bool shifted) {
  auto axis = [&](std::size_t g, std::int64_t m) -> std::pair<std::size_t, std::size_t> {
    const auto mm = static_cast<std::size_t>(m);
    if (g <= mm) return {g, 0};
    return {mm, shifted ? mm / 2 : 0};
  };
  const auto [wt, st] = axis(grid.t, configured.t);
  const auto [wh, sh] = axis(grid.h, configured.h);
  const auto [ww, sw] = axis(grid.w, configured.w);
  return {{wt, wh, ww}, {st, sh, sw}};
}

Var swin_block(const Var& grid, const BlockWeights& w, const WindowSize& window, bool shifted,
               AttentionStats* stats) {
  const Extent3 g = grid_extent(grid, "swin_block");
  const BlockLayout layout = block_layout(g, window, shifted);
  const bool has_shift = layout.shift.t || layout.shift.h || layout.shift.w;

  Var x = layer_norm(grid, w.norm1_gamma, w.norm1_beta);
  if (has_shift) x = cyclic_shift(x, layout.shift);
  WindowSet ws = window_partition(x, layout.window, layout.shift);
  std::unique_ptr<Tensor> mask;
  if (!boundary_mask_trivial(g, layout.window, layout.shift)) {
    mask = std::make_unique<Tensor>(build_boundary_mask(g, layout.window, layout.shift).additive);
  }
  Var y = window_reverse(window_attention(ws, w.attn, mask.get(), stats));
  if (has_shift) y = cyclic_unshift(y, layout.shift);
  Var h = add(grid, y);

  Var m = layer_norm(h, w.norm2_gamma, w.norm2_beta);
  m = gelu(linear(m, w.fc1_weight, w.fc1_bias));
  m = linear(m, w.fc2_weight, w.fc2_bias);
  return add(h, m);
}

}  // namespace attention
SATSWIN_NAMESPACE_END
