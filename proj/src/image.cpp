// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "satswin/data_io.hpp"
#include "satswin/errors.hpp"

SATSWIN_NAMESPACE_BEGIN
namespace data {

std::array<std::size_t, 3> rgb_bands(const std::vector<std::string>& band_names) {
  auto find = [&](const char* name) -> std::ptrdiff_t {
    auto it = std::find(band_names.begin(), band_names.end(), name);
    return it == band_names.end() ? -1 : it - band_names.begin();
  };
  const auto r = find("B4"), g = find("B3"), b = find("B2");
  if (r >= 0 && g >= 0 && b >= 0) {
    return {static_cast<std::size_t>(r), static_cast<std::size_t>(g), static_cast<std::size_t>(b)};
  }
  const std::size_t n = band_names.size();
  return {0, std::min<std::size_t>(1, n - 1), std::min<std::size_t>(2, n - 1)};
}

RgbImage render_rgb(const Tensor& cube, std::size_t t, const std::array<std::size_t, 3>& bands) {
  if (cube.rank() != 4 || t >= cube.dim(0)) throw ShapeError("render_rgb: bad cube or timestep");
  RgbImage img{cube.dim(1), cube.dim(2), {}};
  img.pixels.resize(img.height * img.width * 3);
  for (std::size_t i = 0; i < img.height; ++i)
    for (std::size_t j = 0; j < img.width; ++j)
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp(static_cast<double>(cube.at({t, i, j, bands[c]})), 0.0, 1.0);
        img.pixels[(i * img.width + j) * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
  return img;
}

RgbImage hconcat(const std::vector<RgbImage>& images) {
  constexpr std::size_t gutter = 2;
  RgbImage out;
  for (const auto& im : images) {
    out.height = std::max(out.height, im.height);
    out.width += im.width;
  }
  if (!images.empty()) out.width += gutter * (images.size() - 1);
  out.pixels.assign(out.height * out.width * 3, 255);
  std::size_t x0 = 0;
  for (const auto& im : images) {
    for (std::size_t i = 0; i < im.height; ++i)
      std::copy_n(im.pixels.data() + i * im.width * 3, im.width * 3, out.pixels.data() + (i * out.width + x0) * 3);
    x0 += im.width + gutter;
  }
  return out;
}

void write_ppm(const std::filesystem::path& path, const RgbImage& image) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
}

RgbImage read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string magic;
  std::size_t maxval = 0;
  RgbImage img;
  in >> magic >> img.width >> img.height >> maxval;
  if (magic != "P6" || maxval != 255 || !in) throw FormatError(path.string() + ": not an 8-bit P6 image");
  in.get();
  img.pixels.resize(img.width * img.height * 3);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!in) throw FormatError(path.string() + ": truncated pixel data");
  return img;
}

Tensor bilinear_fill(const Tensor& cube, std::size_t t, std::span<const std::uint8_t> hole) {
  if (cube.rank() != 4 || t >= cube.dim(0) || hole.size() != cube.dim(1) * cube.dim(2)) {
    throw ShapeError("bilinear_fill: hole does not match cube " + ::satswin::to_string(cube.shape()));
  }
  const std::size_t h = cube.dim(1), w = cube.dim(2), b = cube.dim(3);
  Tensor frame({h, w, b});
  std::copy_n(cube.data() + t * h * w * b, h * w * b, frame.data());
  auto known = [&](std::ptrdiff_t i, std::ptrdiff_t j) {
    return i >= 0 && j >= 0 && i < static_cast<std::ptrdiff_t>(h) && j < static_cast<std::ptrdiff_t>(w) &&
           !hole[static_cast<std::size_t>(i) * w + static_cast<std::size_t>(j)];
  };
  auto value = [&](std::ptrdiff_t i, std::ptrdiff_t j, std::size_t c) {
    return static_cast<double>(cube.at({t, static_cast<std::size_t>(i), static_cast<std::size_t>(j), c}));
  };
  // Interpolates along one axis; returns false when no known pixel exists.
  auto along = [&](std::ptrdiff_t i, std::ptrdiff_t j, std::ptrdiff_t di, std::ptrdiff_t dj, std::size_t c,
                   double& out) {
    std::ptrdiff_t a = 1, z = 1;
    while (!known(i - a * di, j - a * dj) && (i - a * di) >= 0 && (j - a * dj) >= 0) ++a;
    while (!known(i + z * di, j + z * dj) && (i + z * di) < static_cast<std::ptrdiff_t>(h) &&
           (j + z * dj) < static_cast<std::ptrdiff_t>(w)) ++z;
    const bool lo = known(i - a * di, j - a * dj), hi = known(i + z * di, j + z * dj);
    if (lo && hi) {
      const double va = value(i - a * di, j - a * dj, c), vz = value(i + z * di, j + z * dj, c);
      out = va + (vz - va) * static_cast<double>(a) / static_cast<double>(a + z);
    } else if (lo) {
      out = value(i - a * di, j - a * dj, c);
    } else if (hi) {
      out = value(i + z * di, j + z * dj, c);
    } else {
      return false;
    }
    return true;
  };
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      if (!hole[i * w + j]) continue;
      const auto ii = static_cast<std::ptrdiff_t>(i), jj = static_cast<std::ptrdiff_t>(j);
      for (std::size_t c = 0; c < b; ++c) {
        double horizontal = 0, vertical = 0;
        const bool has_h = along(ii, jj, 0, 1, c, horizontal);
        const bool has_v = along(ii, jj, 1, 0, c, vertical);
        double v = 0;
        if (has_h && has_v) {
          v = 0.5 * (horizontal + vertical);
        } else if (has_h || has_v) {
          v = has_h ? horizontal : vertical;
        }
        frame.at({i, j, c}) = static_cast<Real>(v);
      }
    }
  }
  return frame;
}

}  // namespace data
SATSWIN_NAMESPACE_END
