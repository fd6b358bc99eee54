// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <cstdio>

#include "satswin/data_io.hpp"
#include "satswin/errors.hpp"
#include "satswin/rng.hpp"

SATSWIN_NAMESPACE_BEGIN
namespace data {

namespace {

// Multi-octave value noise on a hashed lattice, normalized to [0, 1]. Only
// +, * and floor are used so results are identical across platforms.
class ValueNoise {
 public:
  ValueNoise(CounterRng rng, double period, int octaves)
      : rng_(rng), period_(period), octaves_(octaves) {}

  double operator()(double x, double y) const {
    double total = 0, norm = 0, amp = 1, period = period_;
    for (int o = 0; o < octaves_; ++o) {
      total += amp * lattice(o, x / period, y / period);
      norm += amp;
      amp *= 0.5;
      period *= 0.5;
    }
    return total / norm;
  }

 private:
  double corner(int octave, std::int64_t ix, std::int64_t iy) const {
    const auto key = static_cast<std::uint64_t>(ix) * 0x9E3779B1ULL + static_cast<std::uint64_t>(iy);
    return static_cast<double>(rng_.split(static_cast<std::uint64_t>(octave)).at(key) >> 11) * 0x1.0p-53;
  }
  double lattice(int octave, double x, double y) const {
    const double fx = std::floor(x), fy = std::floor(y);
    const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy);
    const double sx = smooth(x - fx), sy = smooth(y - fy);
    const double a = corner(octave, ix, iy), b = corner(octave, ix + 1, iy);
    const double c = corner(octave, ix, iy + 1), d = corner(octave, ix + 1, iy + 1);
    const double top = a + (b - a) * sx;
    const double bottom = c + (d - c) * sx;
    return top + (bottom - top) * sy;
  }
  static double smooth(double t) { return t * t * (3 - 2 * t); }

  CounterRng rng_;
  double period_;
  int octaves_;
};

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

// Stretch a noise value (concentrated around 0.5) to use more of [0, 1].
double stretch(double v, double gain) { return 0.5 + gain * (v - 0.5); }

enum Stream : std::uint64_t { kLatent = 1, kBandMix, kSeason, kSeasonField, kCloud, kBlob, kTexture, kRamp };

// Band-correlated scene: each band is a fixed mix of three shared latent fields.
// With `seasonal`, every timestep gets its own gain and a weak extra field.
Tensor textured_scene(const SynthDims& d, CounterRng rng, bool seasonal) {
  const double base_period = std::max<double>(8.0, static_cast<double>(std::min(d.h, d.w)) / 3.0);
  std::vector<ValueNoise> latent;
  for (std::uint64_t k = 0; k < 3; ++k) latent.emplace_back(rng.split(kLatent, k), base_period, 3);
  CounterRng mix_rng = rng.split(kBandMix);
  std::vector<std::array<double, 3>> mix(d.b);
  std::vector<double> offset(d.b);
  for (std::size_t b = 0; b < d.b; ++b) {
    double total = 0;
    for (auto& m : mix[b]) total += (m = 0.2 + mix_rng.uniform());
    for (auto& m : mix[b]) m /= total;
    offset[b] = mix_rng.uniform(-0.1, 0.1);
  }
  CounterRng season_rng = rng.split(kSeason);
  std::vector<double> gain(d.t * d.b, 1.0);
  if (seasonal) {
    for (auto& g : gain) g = season_rng.uniform(0.85, 1.15);
  }
  std::vector<ValueNoise> season_field;
  for (std::uint64_t t = 0; t < d.t; ++t) season_field.emplace_back(rng.split(kSeasonField, t), base_period / 2, 2);

  Tensor cube({d.t, d.h, d.w, d.b});
  std::vector<double> lat(3);
  for (std::size_t i = 0; i < d.h; ++i) {
    for (std::size_t j = 0; j < d.w; ++j) {
      for (std::size_t k = 0; k < 3; ++k) lat[k] = latent[k](static_cast<double>(j), static_cast<double>(i));
      for (std::size_t t = 0; t < d.t; ++t) {
        const double extra = seasonal ? 0.1 * (season_field[t](static_cast<double>(j), static_cast<double>(i)) - 0.5) : 0.0;
        for (std::size_t b = 0; b < d.b; ++b) {
          const double base = mix[b][0] * lat[0] + mix[b][1] * lat[1] + mix[b][2] * lat[2];
          const double v = (stretch(base, 2.2) + offset[b]) * gain[t * d.b + b] + extra;
          cube.at({t, i, j, b}) = static_cast<Real>(static_cast<float>(clamp01(v)));
        }
      }
    }
  }
  return cube;
}

struct CloudRect {
  std::size_t top, left, height, width;
};

CloudRect cloud_rect(const SynthDims& d, CounterRng rng) {
  const std::size_t min_h = std::max<std::size_t>(1, d.h / 4), max_h = std::max(min_h, d.h / 2);
  const std::size_t min_w = std::max<std::size_t>(1, d.w / 4), max_w = std::max(min_w, d.w / 2);
  CloudRect r{};
  r.height = min_h + rng.below(max_h - min_h + 1);
  r.width = min_w + rng.below(max_w - min_w + 1);
  r.top = rng.below(d.h - r.height + 1);
  r.left = rng.below(d.w - r.width + 1);
  return r;
}

CounterRng chip_rng(SynthKind kind, std::uint64_t seed, std::size_t index) {
  return CounterRng(seed).split(static_cast<std::uint64_t>(kind) + 1, index);
}

void check_dims(const SynthDims& d) {
  if (d.t == 0 || d.h == 0 || d.w == 0 || d.b == 0) {
    throw ConfigError({"synthetic dims must all be positive"});
  }
}

}  // namespace

std::string to_string(SynthKind kind) {
  switch (kind) {
    case SynthKind::kTexturedFields: return "textured-fields";
    case SynthKind::kMovingCloud: return "moving-cloud";
    case SynthKind::kTwoClassBlobs: return "two-class-blobs";
    case SynthKind::kDensityRamp: return "density-ramp";
  }
  return "?";
}

const std::vector<std::string>& synth_kind_names() {
  static const std::vector<std::string> names{"textured-fields", "moving-cloud", "two-class-blobs",
                                              "density-ramp"};
  return names;
}

SynthKind synth_kind_from_string(const std::string& name) {
  for (auto k : {SynthKind::kTexturedFields, SynthKind::kMovingCloud, SynthKind::kTwoClassBlobs,
                 SynthKind::kDensityRamp}) {
    if (to_string(k) == name) return k;
  }
  std::string valid;
  for (const auto& n : synth_kind_names()) valid += (valid.empty() ? "" : ", ") + n;
  throw ConfigError({"unknown synthetic kind '" + name + "' (valid kinds: " + valid + ")"});
}

SynthDims parse_dims(const std::string& text) {
  SynthDims d;
  unsigned long long t = 0, h = 0, w = 0, b = 0;
  char tail = 0;
  if (std::sscanf(text.c_str(), "%llux%llux%llux%llu%c", &t, &h, &w, &b, &tail) != 4 || t == 0 ||
      h == 0 || w == 0 || b == 0) {
    throw ConfigError({"dims must look like TxHxWxB with positive integers, got '" + text + "'"});
  }
  d.t = t;
  d.h = h;
  d.w = w;
  d.b = b;
  return d;
}

Tensor moving_cloud_base(const SynthDims& dims, std::uint64_t seed, std::size_t index) {
  check_dims(dims);
  return textured_scene(dims, chip_rng(SynthKind::kMovingCloud, seed, index), false);
}

Chip synth_chip(SynthKind kind, const SynthDims& d, std::uint64_t seed, std::size_t index) {
  check_dims(d);
  const CounterRng rng = chip_rng(kind, seed, index);
  Chip chip;
  chip.band_names = default_band_names(d.b);
  switch (kind) {
    case SynthKind::kTexturedFields:
      chip.cube = textured_scene(d, rng, true);
      break;
    case SynthKind::kMovingCloud: {
      chip.cube = textured_scene(d, rng, false);
      const CloudRect r = cloud_rect(d, rng.split(kCloud));
      const ValueNoise puff(rng.split(kCloud, 1), 6.0, 2);
      LabelMap label{LabelKind::kOcclusion, 1, d.h, d.w, std::vector<std::int32_t>(d.h * d.w, 0), {}};
      for (std::size_t i = r.top; i < r.top + r.height; ++i) {
        for (std::size_t j = r.left; j < r.left + r.width; ++j) {
          label.classes[i * d.w + j] = 1;
          const double v = 0.82 + 0.15 * puff(static_cast<double>(j), static_cast<double>(i));
          for (std::size_t b = 0; b < d.b; ++b) chip.cube.at({0, i, j, b}) = static_cast<Real>(static_cast<float>(v));
        }
      }
      chip.label = std::move(label);
      break;
    }
    case SynthKind::kTwoClassBlobs: {
      const ValueNoise field(rng.split(kBlob), std::max<double>(6.0, static_cast<double>(std::min(d.h, d.w)) / 3.0), 3);
      std::vector<double> f(d.h * d.w);
      for (std::size_t i = 0; i < d.h; ++i)
        for (std::size_t j = 0; j < d.w; ++j) f[i * d.w + j] = field(static_cast<double>(j), static_cast<double>(i));
      CounterRng pick = rng.split(kBlob, 1);
      const double q = pick.uniform(0.3, 0.7);
      std::vector<double> sorted = f;
      const auto qi = static_cast<std::size_t>(q * static_cast<double>(sorted.size() - 1));
      std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(qi), sorted.end());
      const double thr = sorted[qi];
      const Tensor texture = textured_scene(d, rng.split(kTexture), true);
      // Class 1 darkens the first half of the bands and brightens the rest.
      std::vector<double> slope(d.b), offset(d.b);
      for (std::size_t b = 0; b < d.b; ++b) {
        slope[b] = pick.uniform(1.5, 3.0) * (2 * b < d.b ? -1.0 : 1.0);
        offset[b] = pick.uniform(0.4, 0.6);
      }
      LabelMap label{LabelKind::kClass, 1, d.h, d.w, std::vector<std::int32_t>(d.h * d.w, 0), {}};
      chip.cube = Tensor({d.t, d.h, d.w, d.b});
      for (std::size_t i = 0; i < d.h; ++i) {
        for (std::size_t j = 0; j < d.w; ++j) {
          const double fv = f[i * d.w + j] - thr;
          label.classes[i * d.w + j] = fv > 0 ? 1 : 0;
          for (std::size_t t = 0; t < d.t; ++t) {
            for (std::size_t b = 0; b < d.b; ++b) {
              const double tex = static_cast<double>(texture.at({t, i, j, b})) - 0.5;
              const double v = offset[b] + slope[b] * fv + 0.25 * tex;
              chip.cube.at({t, i, j, b}) = static_cast<Real>(static_cast<float>(clamp01(v)));
            }
          }
        }
      }
      chip.label = std::move(label);
      break;
    }
    case SynthKind::kDensityRamp: {
      CounterRng pick = rng.split(kRamp);
      const double angle_x = pick.uniform(-1, 1), angle_y = pick.uniform(-1, 1);
      const ValueNoise field(rng.split(kRamp, 1), std::max<double>(6.0, static_cast<double>(std::min(d.h, d.w)) / 4.0), 3);
      const Tensor texture = textured_scene(d, rng.split(kTexture), true);
      std::vector<double> response(d.b);
      for (auto& r : response) r = pick.uniform(0.3, 0.7);
      LabelMap label{LabelKind::kRegression, 1, d.h, d.w, {}, std::vector<float>(d.h * d.w)};
      chip.cube = Tensor({d.t, d.h, d.w, d.b});
      const double norm = std::abs(angle_x) + std::abs(angle_y) + 1e-9;
      for (std::size_t i = 0; i < d.h; ++i) {
        for (std::size_t j = 0; j < d.w; ++j) {
          const double u = static_cast<double>(j) / static_cast<double>(d.w) - 0.5;
          const double v = static_cast<double>(i) / static_cast<double>(d.h) - 0.5;
          const double ramp = 0.5 + (angle_x * u + angle_y * v) / norm;
          const double dens = clamp01(0.6 * ramp + 0.4 * stretch(field(static_cast<double>(j), static_cast<double>(i)), 2.0));
          label.values[i * d.w + j] = static_cast<float>(100.0 * dens);
          for (std::size_t t = 0; t < d.t; ++t) {
            for (std::size_t b = 0; b < d.b; ++b) {
              const double tex = static_cast<double>(texture.at({t, i, j, b})) - 0.5;
              const double val = 0.2 + response[b] * dens + 0.15 * tex;
              chip.cube.at({t, i, j, b}) = static_cast<Real>(static_cast<float>(clamp01(val)));
            }
          }
        }
      }
      chip.label = std::move(label);
      break;
    }
  }
  return chip;
}

std::filesystem::path synth_generate(SynthKind kind, const SynthDims& dims, std::size_t count,
                                     std::uint64_t seed, const std::filesystem::path& out_dir,
                                     DType dtype) {
  check_dims(dims);
  std::filesystem::create_directories(out_dir);
  DatasetManifest manifest;
  switch (kind) {
    case SynthKind::kTexturedFields: manifest.task = "pretrain"; break;
    case SynthKind::kMovingCloud: manifest.task = "infill"; break;
    case SynthKind::kTwoClassBlobs: manifest.task = "segmentation"; break;
    case SynthKind::kDensityRamp: manifest.task = "regression"; break;
  }
  for (std::size_t i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "chip_%04zu.sswc", i);
    const auto path = out_dir / name;
    write_chip(path, synth_chip(kind, dims, seed, i), dtype);
    manifest.chips.push_back({path, "train", 0.0});
  }
  const auto manifest_path = out_dir / "manifest.json";
  save_manifest(manifest_path, manifest);
  return manifest_path;
}

// ---- sampling and geometry --------------------------------------------------

Triplet seasonal_triplet_from(const Tensor& frames, std::size_t start) {
  if (frames.rank() != 4) throw ShapeError("seasonal_triplet: frames must be [F,H,W,B], got " + ::satswin::to_string(frames.shape()));
  const std::size_t f = frames.dim(0);
  if (f < 3) throw ShapeError("seasonal_triplet: need at least 3 seasonal frames, got " + std::to_string(f));
  const std::size_t frame = frames.size() / f;
  Triplet out;
  out.start = start % f;
  out.cube = Tensor({3, frames.dim(1), frames.dim(2), frames.dim(3)});
  for (std::size_t k = 0; k < 3; ++k) {
    const std::size_t src = (out.start + k) % f;
    std::copy_n(frames.data() + src * frame, frame, out.cube.data() + k * frame);
  }
  return out;
}

Triplet seasonal_triplet(const Tensor& frames, std::uint64_t seed) {
  if (frames.rank() != 4 || frames.dim(0) < 3) return seasonal_triplet_from(frames, 0);
  CounterRng rng(seed);
  return seasonal_triplet_from(frames, static_cast<std::size_t>(rng.below(frames.dim(0))));
}

CropRecord crop_and_pad(const Tensor& cube, std::size_t height, std::size_t width) {
  if (cube.rank() != 4) throw ShapeError("crop_and_pad: cube must be [T,H,W,B], got " + ::satswin::to_string(cube.shape()));
  const std::size_t t = cube.dim(0), h = cube.dim(1), w = cube.dim(2), b = cube.dim(3);
  CropRecord rec;
  rec.crop_top = h > height ? (h - height) / 2 : 0;
  rec.crop_left = w > width ? (w - width) / 2 : 0;
  rec.pad_bottom = h < height ? height - h : 0;
  rec.pad_right = w < width ? width - w : 0;
  rec.cube = Tensor({t, height, width, b});
  const std::size_t rows = std::min(h, height), cols = std::min(w, width);
  for (std::size_t k = 0; k < t; ++k)
    for (std::size_t i = 0; i < rows; ++i)
      std::copy_n(cube.data() + ((k * h + i + rec.crop_top) * w + rec.crop_left) * b, cols * b,
                  rec.cube.data() + ((k * height + i) * width) * b);
  return rec;
}

}  // namespace data
SATSWIN_NAMESPACE_END
