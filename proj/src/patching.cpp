// SPDX-License-Identifier: Apache-2.0
#include "satswin/patching.hpp"

#include <string>
#include <vector>

#include "satswin/errors.hpp"
#include "satswin/ops.hpp"

SATSWIN_NAMESPACE_BEGIN
namespace patching {

namespace {

void expect_rank5(const Var& x, const char* what) {
  if (x.shape().size() != 5) {
    throw ShapeError(std::string(what) + ": expected rank-5 [N,T,H,W,C], got " +
                     to_string(x.shape()));
  }
}

// Pixel-row index for a partition: output row (n, tt, i, j, dt, dh, dw) reads
// input pixel (n, tt*pt+dt, i*ph+dh, j*pw+dw).
std::vector<std::int64_t> partition_index(std::size_t n, std::size_t t, std::size_t h,
                                          std::size_t w, std::size_t pt, std::size_t ph,
                                          std::size_t pw) {
  const std::size_t gt = t / pt;
  const std::size_t gh = h / ph;
  const std::size_t gw = w / pw;
  std::vector<std::int64_t> index;
  index.reserve(n * t * h * w);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t tt = 0; tt < gt; ++tt)
      for (std::size_t i = 0; i < gh; ++i)
        for (std::size_t j = 0; j < gw; ++j)
          for (std::size_t dt = 0; dt < pt; ++dt)
            for (std::size_t dh = 0; dh < ph; ++dh)
              for (std::size_t dw = 0; dw < pw; ++dw) {
                const std::size_t src =
                    (((b * t) + tt * pt + dt) * h + i * ph + dh) * w + j * pw + dw;
                index.push_back(static_cast<std::int64_t>(src));
              }
  return index;
}

// Inverts a permutation index.
std::vector<std::int64_t> invert(const std::vector<std::int64_t>& index) {
  std::vector<std::int64_t> inv(index.size());
  for (std::size_t k = 0; k < index.size(); ++k) inv[static_cast<std::size_t>(index[k])] = static_cast<std::int64_t>(k);
  return inv;
}

// Index for spreading each token's (bh*bw) channel blocks across a bh x bw pixel
// block: output row (n, t, y, x) reads block ((n,t,y/bh,x/bw), (y%bh)*bw + x%bw).
std::vector<std::int64_t> shuffle_index(std::size_t n, std::size_t t, std::size_t gh,
                                        std::size_t gw, std::size_t bh, std::size_t bw) {
  std::vector<std::int64_t> index;
  index.reserve(n * t * gh * bh * gw * bw);
  for (std::size_t b = 0; b < n * t; ++b)
    for (std::size_t y = 0; y < gh * bh; ++y)
      for (std::size_t x = 0; x < gw * bw; ++x) {
        const std::size_t token = (b * gh + y / bh) * gw + x / bw;
        index.push_back(static_cast<std::int64_t>(token * bh * bw + (y % bh) * bw + x % bw));
      }
  return index;
}

}  // namespace

Var patch_partition(const Var& cube, const PatchSize& patch) {
  expect_rank5(cube, "patch_partition");
  const auto& s = cube.shape();
  const auto pt = static_cast<std::size_t>(patch.t);
  const auto ph = static_cast<std::size_t>(patch.h);
  const auto pw = static_cast<std::size_t>(patch.w);
  if (patch.t <= 0 || patch.h <= 0 || patch.w <= 0) throw ShapeError("patch_partition: patch sizes must be positive");
  const char* axes[] = {"T", "H", "W"};
  const std::size_t sizes[] = {pt, ph, pw};
  for (int a = 0; a < 3; ++a) {
    if (s[1 + a] % sizes[a] != 0) {
      throw ShapeError("patch_partition: axis " + std::string(axes[a]) + " of size " +
                       std::to_string(s[1 + a]) + " not divisible by patch size " +
                       std::to_string(sizes[a]));
    }
  }
  const auto index = partition_index(s[0], s[1], s[2], s[3], pt, ph, pw);
  return gather_rows(cube, s[4], index,
                     {s[0], s[1] / pt, s[2] / ph, s[3] / pw, pt * ph * pw * s[4]});
}

Var patch_unpartition(const Var& grid, const PatchSize& patch, std::size_t bands) {
  expect_rank5(grid, "patch_unpartition");
  const auto& s = grid.shape();
  const auto pt = static_cast<std::size_t>(patch.t);
  const auto ph = static_cast<std::size_t>(patch.h);
  const auto pw = static_cast<std::size_t>(patch.w);
  if (s[4] != pt * ph * pw * bands) {
    throw ShapeError("patch_unpartition: " + std::to_string(s[4]) + " channels, expected " +
                     std::to_string(pt * ph * pw * bands));
  }
  const auto inv = invert(partition_index(s[0], s[1] * pt, s[2] * ph, s[3] * pw, pt, ph, pw));
  return gather_rows(grid, bands, inv, {s[0], s[1] * pt, s[2] * ph, s[3] * pw, bands});
}

Var linear_embed(const Var& grid, const EmbedWeights& w) {
  if (grid.shape().back() != w.matrix.dim(0)) {
    throw ShapeError("linear_embed: grid has " + std::to_string(grid.shape().back()) +
                     " channels, embed matrix expects " + std::to_string(w.matrix.dim(0)));
  }
  return linear(grid, w.matrix, w.bias);
}

Var patch_merge(const Var& grid, const MergeWeights& w) {
  expect_rank5(grid, "patch_merge");
  const auto& s = grid.shape();
  const std::size_t n = s[0], t = s[1], gh = s[2], gw = s[3], c = s[4];
  if (gh % 2 != 0 || gw % 2 != 0) {
    throw ShapeError("patch_merge: odd spatial dims " + std::to_string(gh) + "x" + std::to_string(gw));
  }
  std::vector<std::int64_t> index;
  index.reserve(n * t * gh * gw);
  for (std::size_t b = 0; b < n * t; ++b)
    for (std::size_t i = 0; i < gh / 2; ++i)
      for (std::size_t j = 0; j < gw / 2; ++j)
        for (std::size_t di = 0; di < 2; ++di)
          for (std::size_t dj = 0; dj < 2; ++dj)
            index.push_back(static_cast<std::int64_t>((b * gh + 2 * i + di) * gw + 2 * j + dj));
  Var merged = gather_rows(grid, c, index, {n, t, gh / 2, gw / 2, 4 * c});
  if (w.norm_gamma.defined()) merged = layer_norm(merged, w.norm_gamma, w.norm_beta);
  if (w.projection.dim(0) != 4 * c) {
    throw ShapeError("patch_merge: projection " + to_string(w.projection.shape()) +
                     " does not accept 4C = " + std::to_string(4 * c));
  }
  return linear(merged, w.projection);
}

Var patch_expand(const Var& grid, const ExpandWeights& w) {
  expect_rank5(grid, "patch_expand");
  const auto& s = grid.shape();
  const std::size_t c = s[4];
  if (c % 2 != 0) throw ShapeError("patch_expand: channel count " + std::to_string(c) + " is odd");
  if (w.projection.dim(0) != c || w.projection.dim(1) != 2 * c) {
    throw ShapeError("patch_expand: projection " + to_string(w.projection.shape()) +
                     " for " + std::to_string(c) + " channels");
  }
  Var doubled = linear(grid, w.projection);
  const auto index = shuffle_index(s[0], s[1], s[2], s[3], 2, 2);
  return gather_rows(doubled, c / 2, index, {s[0], s[1], 2 * s[2], 2 * s[3], c / 2});
}

Var final_patch_expand(const Var& grid, const FinalExpandWeights& w, std::size_t ph,
                       std::size_t pw) {
  expect_rank5(grid, "final_patch_expand");
  const auto& s = grid.shape();
  const std::size_t out = w.projection.dim(1);
  if (ph == 0 || pw == 0 || out % (ph * pw) != 0) {
    throw ShapeError("final_patch_expand: projection width " + std::to_string(out) +
                     " not a multiple of " + std::to_string(ph) + "x" + std::to_string(pw));
  }
  Var projected = linear(grid, w.projection);
  const std::size_t c_out = out / (ph * pw);
  const auto index = shuffle_index(s[0], s[1], s[2], s[3], ph, pw);
  return gather_rows(projected, c_out, index, {s[0], s[1], s[2] * ph, s[3] * pw, c_out});
}

}  // namespace patching
SATSWIN_NAMESPACE_END
