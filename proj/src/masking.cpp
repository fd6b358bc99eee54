// SPDX-License-Identifier: Apache-2.0
#include "satswin/masking.hpp"

#include <cmath>
#include <numeric>

#include "binary_io.hpp"
#include "satswin/errors.hpp"
#include "satswin/ops.hpp"
#include "satswin/rng.hpp"

SATSWIN_NAMESPACE_BEGIN
namespace masking {

namespace {

void check_ratio(double ratio) {
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw ConfigError({"mask_ratio out of open interval (0, 1): " + std::to_string(ratio)});
  }
}

// Picks `count` distinct values of [0, n) by a partial Fisher-Yates shuffle.
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t count, CounterRng rng) {
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(count);
  return pool;
}

void finish(MaskSpec& spec) {
  spec.ratio_actual = spec.mask.empty()
                          ? 0.0
                          : static_cast<double>(spec.masked_total()) / static_cast<double>(spec.mask.size());
}

}  // namespace

std::size_t MaskSpec::masked_in_slice(std::size_t ti) const {
  std::size_t n = 0;
  for (std::size_t k = 0; k < gh * gw; ++k) n += mask[ti * gh * gw + k];
  return n;
}

std::size_t MaskSpec::masked_total() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

MaskSpec MaskSpec::none(std::size_t t, std::size_t gh, std::size_t gw) {
  MaskSpec spec;
  spec.t = t;
  spec.gh = gh;
  spec.gw = gw;
  spec.mask.assign(t * gh * gw, 0);
  return spec;
}

std::size_t masked_per_slice(double ratio, std::size_t gh, std::size_t gw) {
  return static_cast<std::size_t>(std::llround(ratio * static_cast<double>(gh * gw)));
}

MaskSpec generate_window_mask(std::size_t t, std::size_t gh, std::size_t gw, double ratio,
                              std::uint64_t seed) {
  check_ratio(ratio);
  MaskSpec spec = MaskSpec::none(t, gh, gw);
  spec.seed = seed;
  const std::size_t count = masked_per_slice(ratio, gh, gw);
  const CounterRng root(seed);
  for (std::size_t ti = 0; ti < t; ++ti) {
    for (std::size_t pos : sample_without_replacement(gh * gw, count, root.split(ti))) {
      spec.mask[ti * gh * gw + pos] = 1;
    }
  }
  finish(spec);
  return spec;
}

MaskSpec generate_window_aligned_mask(std::size_t t, std::size_t gh, std::size_t gw,
                                      std::size_t window, double ratio, std::uint64_t seed) {
  check_ratio(ratio);
  if (window == 0) throw ConfigError({"window-aligned mask needs a positive window"});
  MaskSpec spec = MaskSpec::none(t, gh, gw);
  spec.seed = seed;
  const std::size_t bh = (gh + window - 1) / window;
  const std::size_t bw = (gw + window - 1) / window;
  const std::size_t count = masked_per_slice(ratio, bh, bw);
  const CounterRng root(seed);
  for (std::size_t ti = 0; ti < t; ++ti) {
    for (std::size_t block : sample_without_replacement(bh * bw, count, root.split(ti))) {
      const std::size_t bi = block / bw;
      const std::size_t bj = block % bw;
      for (std::size_t i = bi * window; i < std::min(gh, (bi + 1) * window); ++i)
        for (std::size_t j = bj * window; j < std::min(gw, (bj + 1) * window); ++j)
          spec.mask[(ti * gh + i) * gw + j] = 1;
    }
  }
  finish(spec);
  return spec;
}

Var apply_mask(const Var& grid, std::span<const MaskSpec> specs, const Var& mask_token) {
  if (grid.shape().size() != 5) {
    throw ShapeError("apply_mask: expected [N,T,Gh,Gw,C], got " + to_string(grid.shape()));
  }
  const std::size_t n = grid.dim(0);
  if (specs.empty() || (specs.size() != 1 && specs.size() != n)) {
    throw ShapeError("apply_mask: " + std::to_string(specs.size()) + " masks for batch of " +
                     std::to_string(n));
  }
  const std::size_t per_sample = grid.dim(1) * grid.dim(2) * grid.dim(3);
  std::vector<std::uint8_t> select(n * per_sample);
  for (std::size_t b = 0; b < n; ++b) {
    const MaskSpec& s = specs.size() == 1 ? specs[0] : specs[b];
    if (s.t != grid.dim(1) || s.gh != grid.dim(2) || s.gw != grid.dim(3)) {
      throw ShapeError("apply_mask: mask lattice [" + std::to_string(s.t) + "," +
                       std::to_string(s.gh) + "," + std::to_string(s.gw) + "] vs grid " +
                       to_string(grid.shape()));
    }
    std::copy(s.mask.begin(), s.mask.end(), select.begin() + static_cast<std::ptrdiff_t>(b * per_sample));
  }
  return substitute_rows(grid, select, mask_token);
}

MaskSpec mask_from_pixels(std::span<const std::int32_t> pixels, std::size_t height, std::size_t width,
                          std::size_t t_tokens, std::size_t t_token, std::size_t ph, std::size_t pw) {
  if (pixels.size() != height * width || ph == 0 || pw == 0 || height % ph || width % pw || t_token >= t_tokens) {
    throw ShapeError("mask_from_pixels: " + std::to_string(pixels.size()) + " pixels for " +
                     std::to_string(height) + "x" + std::to_string(width) + " with patch " +
                     std::to_string(ph) + "x" + std::to_string(pw));
  }
  const std::size_t gh = height / ph, gw = width / pw;
  MaskSpec spec = MaskSpec::none(t_tokens, gh, gw);
  for (std::size_t i = 0; i < height; ++i)
    for (std::size_t j = 0; j < width; ++j)
      if (pixels[i * width + j]) spec.mask[(t_token * gh + i / ph) * gw + j / pw] = 1;
  finish(spec);
  return spec;
}

void write_mask_bitmap(const std::filesystem::path& path, const MaskSpec& spec) {
  detail::LeWriter w;
  w.raw("SSWM", 4);
  w.u16(1);
  w.u16(static_cast<std::uint16_t>(spec.t));
  w.u32(static_cast<std::uint32_t>(spec.gh));
  w.u32(static_cast<std::uint32_t>(spec.gw));
  w.u64(spec.seed);
  std::vector<std::uint8_t> bits((spec.mask.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < spec.mask.size(); ++i) {
    if (spec.mask[i]) bits[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  }
  w.raw(bits.data(), bits.size());
  detail::write_file(path, w.bytes());
}

MaskSpec read_mask_bitmap(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  detail::LeReader r(bytes, path.string());
  char magic[4];
  r.raw(magic, 4);
  if (std::string(magic, 4) != "SSWM") throw FormatError(path.string() + ": bad mask magic");
  if (const auto v = r.u16(); v != 1) throw FormatError(path.string() + ": unsupported mask version " + std::to_string(v));
  MaskSpec spec;
  spec.t = r.u16();
  spec.gh = r.u32();
  spec.gw = r.u32();
  spec.seed = r.u64();
  const std::size_t n = spec.t * spec.gh * spec.gw;
  std::vector<std::uint8_t> bits((n + 7) / 8);
  r.raw(bits.data(), bits.size());
  spec.mask.resize(n);
  for (std::size_t i = 0; i < n; ++i) spec.mask[i] = (bits[i / 8] >> (i % 8)) & 1u;
  finish(spec);
  return spec;
}

}  // namespace masking
SATSWIN_NAMESPACE_END
