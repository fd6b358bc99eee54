// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "satswin/tensor.hpp"

SATSWIN_NAMESPACE_BEGIN

struct PatchSize {
  std::int64_t t = 1;
  std::int64_t h = 4;
  std::int64_t w = 4;
  friend bool operator==(const PatchSize&, const PatchSize&) = default;
};

struct WindowSize {
  std::int64_t t = 3;
  std::int64_t h = 7;
  std::int64_t w = 7;
  friend bool operator==(const WindowSize&, const WindowSize&) = default;
};

enum class MaskLayout { kRandom, kWindowAligned };

/// Full architectural hyperparameter record. Integer fields are signed so that
/// validation can report nonsense values instead of wrapping them.
struct ModelConfig {
  PatchSize patch_size;
  std::int64_t embed_dim = 128;
  std::vector<std::int64_t> stage_depths{2, 2, 18, 2};
  std::vector<std::int64_t> stage_heads{4, 8, 16, 32};
  WindowSize window;
  std::int64_t head_dim = 32;
  double mlp_ratio = 4.0;
  double mask_ratio = 0.75;
  std::int64_t num_bands = 6;
  std::int64_t num_timesteps = 3;
  std::int64_t input_height = 224;
  std::int64_t input_width = 224;
  std::vector<std::int64_t> decoder_depths{2, 2, 2};
  /// Layer norm in front of each merge projection.
  bool merge_norm = true;
  MaskLayout mask_layout = MaskLayout::kRandom;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;

  /// Swin-B profile: C=128, depths [2,2,18,2], heads [4,8,16,32].
  static ModelConfig swin_base();
  /// Swin-T profile (C=96, depths [2,2,6,2], heads [3,6,12,24]).
  static ModelConfig tiny();

  std::size_t num_stages() const { return stage_depths.size(); }
  std::size_t stage_channels(std::size_t stage) const {
    return static_cast<std::size_t>(embed_dim) << stage;
  }
  std::size_t mlp_hidden(std::size_t channels) const;
  std::size_t tokens_per_patch_channels() const {
    return static_cast<std::size_t>(patch_size.t * patch_size.h * patch_size.w * num_bands);
  }
};

enum class TaskKind { kSegmentation, kRegression };

/// Finetuning head: output temporality, temporal modulator and task head.
struct TaskConfig {
  TaskKind kind = TaskKind::kSegmentation;
  std::int64_t num_classes = 2;
  std::int64_t out_timesteps = 1;
  /// 0 selects T - T_out + 1 (stride 1).
  std::int64_t temporal_kernel = 0;
  /// Channels produced by the final patch expansion; 0 selects embed_dim.
  std::int64_t out_channels = 0;
  bool skip_connections = true;
  bool expand_before_modulate = true;

  friend bool operator==(const TaskConfig&, const TaskConfig&) = default;

  std::size_t head_outputs() const {
    return kind == TaskKind::kSegmentation ? static_cast<std::size_t>(num_classes) : 1;
  }
};

struct InputShape {
  std::int64_t t = 0;
  std::int64_t h = 0;
  std::int64_t w = 0;
  std::int64_t bands = 0;
};

/// Every violation of the config invariants, empty when valid. Never throws.
std::vector<std::string> validate_config(const ModelConfig& cfg, const InputShape& input);
std::vector<std::string> validate_config(const ModelConfig& cfg);
std::vector<std::string> validate_task(const ModelConfig& cfg, const TaskConfig& task);
/// Throws ConfigError listing all violations.
void expect_valid(const ModelConfig& cfg);
void expect_valid(const ModelConfig& cfg, const TaskConfig& task);

/// Temporal modulator geometry derived from T, T_out and kernel size.
struct TemporalGeometry {
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t out_steps = 1;
};
TemporalGeometry temporal_geometry(std::int64_t t_in, const TaskConfig& task);

struct PipelineEntry {
  std::string name;
  Shape shape;
};

/// Shapes each stage of the network produces, derived from the config alone.
/// Leading batch axis included. With a task, the finetuning head is appended.
std::vector<PipelineEntry> shape_pipeline(const ModelConfig& cfg, std::size_t batch = 1);
std::vector<PipelineEntry> shape_pipeline(const ModelConfig& cfg, const TaskConfig& task,
                                          std::size_t batch = 1);
const Shape& pipeline_shape(const std::vector<PipelineEntry>& pipeline, const std::string& name);

// JSON mapping. Unknown keys raise FormatError.
nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TaskConfig& task);
TaskConfig task_config_from_json(const nlohmann::json& j);

std::string to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string& s);

SATSWIN_NAMESPACE_END
