// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "satswin/autograd.hpp"
#include "satswin/config.hpp"

SATSWIN_NAMESPACE_BEGIN
namespace masking {

/// Masked token positions on a [T, Gh, Gw] lattice (1 = masked).
struct MaskSpec {
  std::size_t t = 0;
  std::size_t gh = 0;
  std::size_t gw = 0;
  std::vector<std::uint8_t> mask;
  std::uint64_t seed = 0;
  double ratio_actual = 0.0;

  bool at(std::size_t ti, std::size_t i, std::size_t j) const { return mask[(ti * gh + i) * gw + j] != 0; }
  std::size_t masked_in_slice(std::size_t ti) const;
  std::size_t masked_total() const;

  /// All-false mask of the given lattice.
  static MaskSpec none(std::size_t t, std::size_t gh, std::size_t gw);

  friend bool operator==(const MaskSpec&, const MaskSpec&) = default;
};

/// Number of positions masked per slice: round(ratio * gh * gw).
std::size_t masked_per_slice(double ratio, std::size_t gh, std::size_t gw);

/// Independent per-slice masks: in every time slice exactly round(ratio*Gh*Gw)
/// positions, drawn uniformly without replacement; a pure function of seed.
MaskSpec generate_window_mask(std::size_t t, std::size_t gh, std::size_t gw, double ratio,
                              std::uint64_t seed);

/// Window-aligned variant: whole window.h x window.w blocks are masked, with
/// round(ratio * blocks) blocks per slice. Edge blocks may be partial.
MaskSpec generate_window_aligned_mask(std::size_t t, std::size_t gh, std::size_t gw,
                                      std::size_t window, double ratio, std::uint64_t seed);

/// Replaces masked tokens by the learnable vector. `specs` holds one entry per
/// batch sample, or a single entry applied to every sample.
Var apply_mask(const Var& grid, std::span<const MaskSpec> specs, const Var& mask_token);

/// Masks every token of time slice `t_token` whose ph x pw pixel footprint
/// touches a nonzero entry of `pixels` [H, W]. Other slices stay visible.
MaskSpec mask_from_pixels(std::span<const std::int32_t> pixels, std::size_t height, std::size_t width,
                          std::size_t t_tokens, std::size_t t_token, std::size_t ph, std::size_t pw);

/// Compact bitmap file ("SSWM", little-endian header, LSB-first bits).
void write_mask_bitmap(const std::filesystem::path& path, const MaskSpec& spec);
MaskSpec read_mask_bitmap(const std::filesystem::path& path);

}  // namespace masking
SATSWIN_NAMESPACE_END
