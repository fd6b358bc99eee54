// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "satswin/tensor.hpp"

SATSWIN_NAMESPACE_BEGIN
namespace data {

enum class DType : std::uint8_t { kUint8 = 1, kFloat32 = 2, kInt32 = 3 };
enum class LabelKind : std::uint8_t { kClass = 1, kRegression = 2, kOcclusion = 3 };

/// Per-pixel labels [T_lab, H, W]. Class and occlusion labels live in
/// `classes`, regression targets in `values`.
struct LabelMap {
  LabelKind kind = LabelKind::kClass;
  std::size_t t = 1;
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<std::int32_t> classes;
  std::vector<float> values;

  std::size_t size() const { return t * h * w; }
  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

/// One chip: cube [T, H, W, B] with reflectances in [0, 1].
struct Chip {
  Tensor cube;
  std::vector<std::string> band_names;
  std::optional<LabelMap> label;

  std::size_t timesteps() const { return cube.dim(0); }
  std::size_t height() const { return cube.dim(1); }
  std::size_t width() const { return cube.dim(2); }
  std::size_t bands() const { return cube.dim(3); }
};

/// SSWC container, little-endian:
///   "SSWC" | u16 version | u16 T | u32 H | u32 W | u16 B | u8 dtype
///   | B x (u16 length + UTF-8 band name)
///   | u8 has_label [| u8 kind | u8 dtype | u16 T_lab]
///   | payload [T,H,W,B] | label payload [T_lab,H,W]
/// uint8 payloads store round(255 v) and read back as v / 255.
std::vector<std::uint8_t> encode_chip(const Chip& chip, DType dtype);
Chip decode_chip(const std::vector<std::uint8_t>& bytes, const std::string& what = "chip");
void write_chip(const std::filesystem::path& path, const Chip& chip, DType dtype = DType::kFloat32);
/// With `expected_bands`, a band-count mismatch raises FormatError.
Chip read_chip(const std::filesystem::path& path, std::optional<std::size_t> expected_bands = std::nullopt);

std::vector<std::string> default_band_names(std::size_t bands);

// ---- manifest ---------------------------------------------------------------

struct ManifestEntry {
  std::filesystem::path path;  // resolved against the manifest directory
  std::string split;           // train | val | test
  double cloud_score = 0.0;
};

/// {"format": "satswin-manifest", "version": 1, "task": ..., "chips": [...]}
struct DatasetManifest {
  std::string task;
  std::vector<ManifestEntry> chips;

  std::vector<ManifestEntry> split(const std::string& name) const;
};

DatasetManifest load_manifest(const std::filesystem::path& path);
/// Paths are written relative to the manifest's directory when possible.
void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
/// Keeps entries for which `keep` returns true; cloud-cover filtering plugs in here.
DatasetManifest filter_manifest(const DatasetManifest& manifest,
                                const std::function<bool(const ManifestEntry&)>& keep);
DatasetManifest max_cloud_filter(const DatasetManifest& manifest, double max_score);

// ---- sampling and geometry --------------------------------------------------

struct Triplet {
  Tensor cube;  // [3, H, W, B]
  std::size_t start = 0;
};
/// Uniform start frame from the seed, then the next two frames cyclically.
Triplet seasonal_triplet(const Tensor& frames, std::uint64_t seed);
Triplet seasonal_triplet_from(const Tensor& frames, std::size_t start);

struct CropRecord {
  Tensor cube;
  std::size_t crop_top = 0;   // rows removed above
  std::size_t crop_left = 0;  // columns removed on the left
  std::size_t pad_bottom = 0;
  std::size_t pad_right = 0;
};
/// Center crop when larger, zero-pad the high side when smaller.
CropRecord crop_and_pad(const Tensor& cube, std::size_t height, std::size_t width);

/// Fills hole pixels ([H, W] nonzero) of frame t by averaging linear
/// interpolations between the nearest non-hole pixels along the row and along
/// the column. Returns the filled frame [H, W, B].
Tensor bilinear_fill(const Tensor& cube, std::size_t t, std::span<const std::uint8_t> hole);

// ---- synthetic data ---------------------------------------------------------

enum class SynthKind { kTexturedFields, kMovingCloud, kTwoClassBlobs, kDensityRamp };

std::string to_string(SynthKind kind);
SynthKind synth_kind_from_string(const std::string& name);
const std::vector<std::string>& synth_kind_names();

struct SynthDims {
  std::size_t t = 3;
  std::size_t h = 64;
  std::size_t w = 64;
  std::size_t b = 6;
};
/// Parses "TxHxWxB".
SynthDims parse_dims(const std::string& text);

/// The index-th chip of a seeded corpus. Pure function of its arguments.
Chip synth_chip(SynthKind kind, const SynthDims& dims, std::uint64_t seed, std::size_t index);

/// Noise-free base scene of a moving-cloud chip (the infill ground truth).
Tensor moving_cloud_base(const SynthDims& dims, std::uint64_t seed, std::size_t index);

/// Writes `count` chips plus manifest.json into out_dir; returns the manifest path.
std::filesystem::path synth_generate(SynthKind kind, const SynthDims& dims, std::size_t count,
                                     std::uint64_t seed, const std::filesystem::path& out_dir,
                                     DType dtype = DType::kFloat32);

// ---- images -----------------------------------------------------------------

struct RgbImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB
};

/// Band indices for (red, green, blue), chosen by name with (B4, B3, B2)
/// preferred; falls back to the first three bands.
std::array<std::size_t, 3> rgb_bands(const std::vector<std::string>& band_names);
/// One timestep of a [T,H,W,B] cube rendered as RGB (values clamped to [0,1]).
RgbImage render_rgb(const Tensor& cube, std::size_t t, const std::array<std::size_t, 3>& bands);
/// Images side by side with a 2-pixel white gutter.
RgbImage hconcat(const std::vector<RgbImage>& images);
void write_ppm(const std::filesystem::path& path, const RgbImage& image);
RgbImage read_ppm(const std::filesystem::path& path);

}  // namespace data
SATSWIN_NAMESPACE_END
