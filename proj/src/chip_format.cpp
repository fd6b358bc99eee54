// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "satswin/data_io.hpp"
#include "satswin/errors.hpp"

SATSWIN_NAMESPACE_BEGIN
namespace data {

namespace {

constexpr std::uint16_t kChipVersion = 1;

std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::kUint8: return 1;
    case DType::kFloat32: return 4;
    case DType::kInt32: return 4;
  }
  return 0;
}

DType dtype_from_code(std::uint8_t code, const std::string& what) {
  if (code < 1 || code > 3) throw FormatError(what + ": unknown dtype code " + std::to_string(code));
  return static_cast<DType>(code);
}


}  // namespace

std::vector<std::string> default_band_names(std::size_t bands) {
  static const std::vector<std::string> s2{"B2", "B3", "B4", "B8A", "B11", "B12"};
  if (bands == s2.size()) return s2;
  std::vector<std::string> names;
  for (std::size_t b = 0; b < bands; ++b) names.push_back("band" + std::to_string(b));
  return names;
}

std::vector<std::uint8_t> encode_chip(const Chip& chip, DType dtype) {
  if (chip.cube.rank() != 4) throw ShapeError("encode_chip: cube must be [T,H,W,B], got " + ::satswin::to_string(chip.cube.shape()));
  if (dtype == DType::kInt32) throw FormatError("encode_chip: int32 is a label dtype only");
  const std::size_t t = chip.timesteps(), h = chip.height(), w = chip.width(), b = chip.bands();
  if (chip.band_names.size() != b) {
    throw ShapeError("encode_chip: " + std::to_string(chip.band_names.size()) + " band names for " +
                     std::to_string(b) + " bands");
  }
  for (Real v : chip.cube.values()) {
    if (!(v >= 0 && v <= 1)) throw NumericError("encode_chip: cube value outside [0, 1]");
  }
  detail::LeWriter out;
  out.raw("SSWC", 4);
  out.u16(kChipVersion);
  out.u16(static_cast<std::uint16_t>(t));
  out.u32(static_cast<std::uint32_t>(h));
  out.u32(static_cast<std::uint32_t>(w));
  out.u16(static_cast<std::uint16_t>(b));
  out.u8(static_cast<std::uint8_t>(dtype));
  for (const auto& name : chip.band_names) out.str16(name);
  const LabelMap* label = chip.label ? &*chip.label : nullptr;
  out.u8(label ? 1 : 0);
  DType label_dtype = DType::kInt32;
  if (label) {
    if (label->h != h || label->w != w) {
      throw ShapeError("encode_chip: label lattice " + std::to_string(label->h) + "x" +
                       std::to_string(label->w) + " vs chip " + std::to_string(h) + "x" + std::to_string(w));
    }
    label_dtype = label->kind == LabelKind::kRegression ? DType::kFloat32 : DType::kInt32;
    const std::size_t expected = label->size();
    const std::size_t have = label_dtype == DType::kFloat32 ? label->values.size() : label->classes.size();
    if (have != expected) throw ShapeError("encode_chip: label payload size mismatch");
    out.u8(static_cast<std::uint8_t>(label->kind));
    out.u8(static_cast<std::uint8_t>(label_dtype));
    out.u16(static_cast<std::uint16_t>(label->t));
  }
  if (dtype == DType::kUint8) {
    for (Real v : chip.cube.values()) out.u8(static_cast<std::uint8_t>(std::lround(static_cast<double>(v) * 255.0)));
  } else {
    for (Real v : chip.cube.values()) out.f32(static_cast<float>(v));
  }
  if (label) {
    if (label_dtype == DType::kFloat32) {
      for (float v : label->values) out.f32(v);
    } else {
      for (std::int32_t v : label->classes) out.u32(static_cast<std::uint32_t>(v));
    }
  }
  return std::move(out.bytes());
}

Chip decode_chip(const std::vector<std::uint8_t>& bytes, const std::string& what) {
  detail::LeReader in(bytes, what);
  char magic[4];
  in.raw(magic, 4);
  if (std::string(magic, 4) != "SSWC") throw FormatError(what + ": bad magic, not an SSWC chip");
  const std::uint16_t version = in.u16();
  if (version != kChipVersion) throw FormatError(what + ": unsupported SSWC version " + std::to_string(version));
  const std::size_t t = in.u16();
  const std::size_t h = in.u32();
  const std::size_t w = in.u32();
  const std::size_t b = in.u16();
  const DType dtype = dtype_from_code(in.u8(), what);
  if (dtype == DType::kInt32) throw FormatError(what + ": int32 cube payloads are not supported");
  if (t == 0 || h == 0 || w == 0 || b == 0) throw FormatError(what + ": zero dimension in header");
  Chip chip;
  for (std::size_t i = 0; i < b; ++i) chip.band_names.push_back(in.str16());
  const std::uint8_t has_label = in.u8();
  if (has_label > 1) throw FormatError(what + ": corrupt label flag");
  LabelMap label;
  DType label_dtype = DType::kInt32;
  if (has_label) {
    const std::uint8_t kind = in.u8();
    if (kind < 1 || kind > 3) throw FormatError(what + ": unknown label kind " + std::to_string(kind));
    label.kind = static_cast<LabelKind>(kind);
    label_dtype = dtype_from_code(in.u8(), what);
    label.t = in.u16();
    label.h = h;
    label.w = w;
  }
  const std::size_t n = t * h * w * b;
  const std::size_t payload = n * dtype_size(dtype);
  const std::size_t label_bytes = has_label ? label.size() * dtype_size(label_dtype) : 0;
  if (in.remaining() < payload + label_bytes) {
    throw FormatError(what + ": truncated payload, expected " +
                      std::to_string(in.position() + payload + label_bytes) + " bytes, file has " +
                      std::to_string(bytes.size()));
  }
  if (in.remaining() > payload + label_bytes) {
    throw FormatError(what + ": " + std::to_string(in.remaining() - payload - label_bytes) +
                      " trailing bytes after payload");
  }
  chip.cube = Tensor({t, h, w, b});
  if (dtype == DType::kUint8) {
    for (std::size_t i = 0; i < n; ++i) chip.cube[i] = static_cast<Real>(in.u8()) / Real(255);
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const float v = in.f32();
      if (!(v >= 0.0f && v <= 1.0f)) {
        throw FormatError(what + ": payload value " + std::to_string(v) + " at index " +
                          std::to_string(i) + " outside [0, 1]");
      }
      chip.cube[i] = static_cast<Real>(v);
    }
  }
  if (has_label) {
    const std::size_t m = label.size();
    if (label_dtype == DType::kFloat32) {
      label.values.resize(m);
      for (auto& v : label.values) v = in.f32();
    } else {
      label.classes.resize(m);
      for (auto& v : label.classes) {
        v = label_dtype == DType::kUint8 ? in.u8() : static_cast<std::int32_t>(in.u32());
      }
      if (label.kind == LabelKind::kRegression) {
        label.values.assign(label.classes.begin(), label.classes.end());
        label.classes.clear();
      }
    }
    chip.label = std::move(label);
  }
  return chip;
}

void write_chip(const std::filesystem::path& path, const Chip& chip, DType dtype) {
  detail::write_file(path, encode_chip(chip, dtype));
}

Chip read_chip(const std::filesystem::path& path, std::optional<std::size_t> expected_bands) {
  Chip chip = decode_chip(detail::read_file(path), path.string());
  if (expected_bands && chip.bands() != *expected_bands) {
    throw FormatError(path.string() + ": chip has " + std::to_string(chip.bands()) +
                      " bands, config expects " + std::to_string(*expected_bands));
  }
  return chip;
}

// ---- manifest ---------------------------------------------------------------

std::vector<ManifestEntry> DatasetManifest::split(const std::string& name) const {
  std::vector<ManifestEntry> out;
  std::copy_if(chips.begin(), chips.end(), std::back_inserter(out),
               [&](const ManifestEntry& e) { return e.split == name; });
  return out;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  static const std::set<std::string> splits{"train", "val", "test"};
  DatasetManifest m;
  const auto base = path.parent_path();
  try {
    if (j.at("format") != "satswin-manifest") throw FormatError(path.string() + ": not a dataset manifest");
    m.task = j.value("task", std::string());
    for (const auto& c : j.at("chips")) {
      ManifestEntry e;
      e.path = base / c.at("path").get<std::string>();
      e.split = c.value("split", std::string("train"));
      e.cloud_score = c.value("cloud_score", 0.0);
      if (!splits.count(e.split)) {
        throw FormatError(path.string() + ": split '" + e.split + "' not one of train, val, test");
      }
      if (!std::filesystem::exists(e.path)) {
        throw FormatError(path.string() + ": chip " + e.path.string() + " does not exist");
      }
      m.chips.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return m;
}

void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  nlohmann::json chips = nlohmann::json::array();
  const auto base = path.parent_path();
  for (const auto& e : manifest.chips) {
    std::filesystem::path rel = e.path;
    if (!base.empty()) rel = e.path.lexically_relative(base);
    if (rel.empty()) rel = e.path;
    chips.push_back({{"path", rel.generic_string()}, {"split", e.split}, {"cloud_score", e.cloud_score}});
  }
  nlohmann::json j{{"format", "satswin-manifest"}, {"version", 1}, {"task", manifest.task}, {"chips", chips}};
  if (!base.empty()) std::filesystem::create_directories(base);
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write manifest " + path.string());
  out << j.dump(2) << '\n';
}

DatasetManifest filter_manifest(const DatasetManifest& manifest,
                                const std::function<bool(const ManifestEntry&)>& keep) {
  DatasetManifest out;
  out.task = manifest.task;
  std::copy_if(manifest.chips.begin(), manifest.chips.end(), std::back_inserter(out.chips), keep);
  return out;
}

DatasetManifest max_cloud_filter(const DatasetManifest& manifest, double max_score) {
  return filter_manifest(manifest, [max_score](const ManifestEntry& e) { return e.cloud_score <= max_score; });
}

}  // namespace data
SATSWIN_NAMESPACE_END
