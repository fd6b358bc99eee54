// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "satswin/autograd.hpp"
#include "satswin/config.hpp"
#include "satswin/rng.hpp"

namespace testing {

using satswin::Real;
using satswin::Shape;
using satswin::Tensor;

inline Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  satswin::CounterRng rng(seed);
  Tensor t(shape);
  for (auto& v : t.storage()) v = static_cast<Real>(rng.uniform(lo, hi));
  return t;
}

inline double rel_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12});
}

/// Largest |a-b| / max(|b|, floor) across two tensors of equal shape.
inline double max_rel_error(const Tensor& a, const Tensor& b, double floor = 1e-6) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::abs(double(a[i]) - double(b[i]));
    worst = std::max(worst, d / std::max(std::abs(double(b[i])), floor));
  }
  return worst;
}

/// Smallest valid model config exercising two stages.
inline satswin::ModelConfig micro_config() {
  satswin::ModelConfig cfg;
  cfg.patch_size = {1, 2, 2};
  cfg.embed_dim = 8;
  cfg.stage_depths = {1, 1};
  cfg.stage_heads = {2, 4};
  cfg.head_dim = 4;
  cfg.window = {2, 2, 2};
  cfg.mlp_ratio = 2.0;
  cfg.num_bands = 2;
  cfg.num_timesteps = 2;
  cfg.input_height = 8;
  cfg.input_width = 8;
  cfg.decoder_depths = {1};
  return cfg;
}

/// A scratch directory removed at scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("satswin_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
