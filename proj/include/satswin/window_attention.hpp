// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "satswin/autograd.hpp"
#include "satswin/config.hpp"

SATSWIN_NAMESPACE_BEGIN
namespace attention {

/// Stand-in for -inf in additive attention masks.
inline constexpr Real kMaskedLogit = Real(-1e4);

struct Extent3 {
  std::size_t t = 0;
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t volume() const { return t * h * w; }
  friend bool operator==(const Extent3&, const Extent3&) = default;
};

/// Where a WindowSet came from: enough to invert the partition exactly.
struct WindowGeometry {
  std::size_t batch = 0;
  Extent3 grid;    // unpadded token grid
  Extent3 padded;  // grid rounded up to whole windows
  Extent3 window;
  Extent3 shift;   // cyclic shift applied before partitioning (provenance only)
  std::size_t channels = 0;

  std::size_t windows_per_sample() const {
    return (padded.t / window.t) * (padded.h / window.h) * (padded.w / window.w);
  }
};

/// Windowed tokens [batch * windows_per_sample, window volume, C], windows in
/// row-major (t, h, w) order, tokens within a window likewise.
struct WindowSet {
  Var windows;
  WindowGeometry geometry;
};

/// Zero-pads each axis on the high side up to a multiple of the window extent,
/// then cuts non-overlapping windows. `shift` is recorded, not applied.
WindowSet window_partition(const Var& grid, Extent3 window, Extent3 shift = {});
/// Inverse of window_partition; crops the padding.
Var window_reverse(const WindowSet& ws);

/// Toroidal roll: out[p] = in[(p + offsets) mod dims] on the (T, Gh, Gw) axes.
Var cyclic_shift(const Var& grid, Extent3 offsets);
/// out[p] = in[(p - offsets) mod dims]; undoes cyclic_shift.
Var cyclic_unshift(const Var& grid, Extent3 offsets);

/// Additive mask [windows_per_sample, V, V]; entry is kMaskedLogit iff the two
/// tokens do not come from the same pre-shift region. Each axis splits into the
/// tokens that did not wrap under the shift and those that did; padding tokens
/// form a region of their own, so real tokens never attend to padding.
struct BoundaryMask {
  Tensor additive;
};
BoundaryMask build_boundary_mask(Extent3 grid, Extent3 window, Extent3 shift);
/// True when the mask would be all zeros (no shift and no padding).
bool boundary_mask_trivial(Extent3 grid, Extent3 window, Extent3 shift);

/// Index into the relative bias table for every (query, key) pair of a window of
/// extent `window`; the table is laid out for `table_window` (>= window).
std::vector<std::int32_t> relative_position_index(Extent3 window, Extent3 table_window);
std::size_t relative_table_rows(Extent3 table_window);

struct AttentionWeights {
  Var qkv_weight;  // [C, 3C]
  Var qkv_bias;    // [3C]
  Var proj_weight; // [C, C]
  Var proj_bias;   // [C]
  Var bias_table;  // [(2Mt-1)(2Mh-1)(2Mw-1), heads]
  std::size_t heads = 1;
  Extent3 table_window;
};

/// Score-tensor bookkeeping, for checking that attention memory is linear in
/// the token count at a fixed window size.
struct AttentionStats {
  std::size_t calls = 0;
  std::size_t score_elements = 0;
};

/// Multi-head self-attention inside each window:
/// softmax(Q K^T / sqrt(d) + relative_bias + mask) V, heads concatenated and
/// projected. `mask` is [windows_per_sample, V, V] or null.
WindowSet window_attention(const WindowSet& ws, const AttentionWeights& w, const Tensor* mask,
                           AttentionStats* stats = nullptr);

/// The attention core on packed qkv rows [W, V, 3C] -> [W, V, C]; exposed for
/// the dense-oracle tests.
Var attention_core(const Var& qkv, const Var& bias_table, const std::vector<std::int32_t>& rel_index,
                   std::size_t heads, const Tensor* mask, AttentionStats* stats = nullptr);

struct BlockWeights {
  Var norm1_gamma, norm1_beta;
  AttentionWeights attn;
  Var norm2_gamma, norm2_beta;
  Var fc1_weight, fc1_bias;  // [C, aC], [aC]
  Var fc2_weight, fc2_bias;  // [aC, C], [C]
};

/// Window extent and shift a block actually uses on a grid: axes not larger
/// than the configured window collapse to a single unshifted window.
struct BlockLayout {
  Extent3 window;
  Extent3 shift;
};
BlockLayout block_layout(Extent3 grid, const WindowSize& configured, bool shifted);

/// Pre-norm Swin block:
///   x += WindowMSA(LN(x))   (cyclic shift + boundary mask when shifted)
///   x += MLP(LN(x))         (GELU)
Var swin_block(const Var& grid, const BlockWeights& w, const WindowSize& window, bool shifted,
               AttentionStats* stats = nullptr);

}  // namespace attention
SATSWIN_NAMESPACE_END
