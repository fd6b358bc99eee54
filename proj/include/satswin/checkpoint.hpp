// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "satswin/config.hpp"
#include "satswin/params.hpp"

SATSWIN_NAMESPACE_BEGIN

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// Single-file archive:
///   "SATSWCKP" | u64 manifest length | JSON manifest | float32 LE payloads.
/// The manifest holds the configs, step, free-form `extra` and a tensor index
/// of {name, shape, offset, nbytes}; offsets are relative to the payload start.
struct Checkpoint {
  std::string kind;  // "mae" or "unet"
  ModelConfig config;
  std::optional<TaskConfig> task;
  std::uint64_t step = 0;
  nlohmann::json extra = nlohmann::json::object();
  std::vector<NamedTensor> tensors;

  const Tensor* find(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Appends every parameter of `store` to `ckpt.tensors`.
void store_params(Checkpoint& ckpt, const ParamStore& store);
/// Overwrites every parameter of `store` from the checkpoint. Missing or
/// shape-mismatched tensors are all listed in one ShapeError.
void restore_params(const Checkpoint& ckpt, ParamStore& store);
/// Builds a fresh store holding exactly the checkpoint's parameters.
ParamStore params_from_checkpoint(const Checkpoint& ckpt, const std::string& prefix_filter = "");

SATSWIN_NAMESPACE_END
