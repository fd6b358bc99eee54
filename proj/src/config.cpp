// SPDX-License-Identifier: Apache-2.0
#include "satswin/config.hpp"

#include <cmath>
#include <limits>
#include <set>

#include <nlohmann/json.hpp>

#include "satswin/errors.hpp"

SATSWIN_NAMESPACE_BEGIN

using nlohmann::json;

namespace {

constexpr std::int64_t kMaxDim = std::int64_t{1} << 31;

std::string str(std::int64_t v) { return std::to_string(v); }

bool positive_bounded(std::int64_t v) { return v > 0 && v < kMaxDim; }

}  // namespace

ModelConfig ModelConfig::swin_base() { return ModelConfig{}; }

ModelConfig ModelConfig::tiny() {
  ModelConfig cfg;
  cfg.embed_dim = 96;
  cfg.stage_depths = {2, 2, 6, 2};
  cfg.stage_heads = {3, 6, 12, 24};
  return cfg;
}

std::size_t ModelConfig::mlp_hidden(std::size_t channels) const {
  return static_cast<std::size_t>(std::llround(mlp_ratio * static_cast<double>(channels)));
}

std::vector<std::string> validate_config(const ModelConfig& cfg) {
  return validate_config(cfg, InputShape{cfg.num_timesteps, cfg.input_height, cfg.input_width,
                                         cfg.num_bands});
}

std::vector<std::string> validate_config(const ModelConfig& cfg, const InputShape& input) {
  std::vector<std::string> errors;
  auto check_positive = [&](const char* field, std::int64_t v) {
    if (!positive_bounded(v)) {
      errors.push_back(std::string(field) + " must be a positive integer below 2^31 (got " +
                       str(v) + ")");
      return false;
    }
    return true;
  };

  const bool patch_ok = check_positive("patch_size.t", cfg.patch_size.t) &
                        check_positive("patch_size.h", cfg.patch_size.h) &
                        check_positive("patch_size.w", cfg.patch_size.w);
  const bool embed_ok = check_positive("embed_dim", cfg.embed_dim);
  const bool head_dim_ok = check_positive("head_dim", cfg.head_dim);
  const bool window_ok = check_positive("window.t", cfg.window.t) &
                         check_positive("window.h", cfg.window.h) &
                         check_positive("window.w", cfg.window.w);
  check_positive("num_bands", cfg.num_bands);
  const bool t_ok = check_positive("num_timesteps", cfg.num_timesteps);
  const bool h_ok = check_positive("input_height", cfg.input_height);
  const bool w_ok = check_positive("input_width", cfg.input_width);

  if (input.t != cfg.num_timesteps) {
    errors.push_back("dimension mismatch: num_timesteps is " + str(cfg.num_timesteps) +
                     ", input has T=" + str(input.t));
  }
  if (input.h != cfg.input_height) {
    errors.push_back("dimension mismatch: input_height is " + str(cfg.input_height) +
                     ", input has H=" + str(input.h));
  }
  if (input.w != cfg.input_width) {
    errors.push_back("dimension mismatch: input_width is " + str(cfg.input_width) +
                     ", input has W=" + str(input.w));
  }
  if (input.bands != cfg.num_bands) {
    errors.push_back("dimension mismatch: num_bands is " + str(cfg.num_bands) +
                     ", input has B=" + str(input.bands));
  }

  if (!(cfg.mask_ratio > 0.0 && cfg.mask_ratio < 1.0)) {
    errors.push_back("mask_ratio out of open interval (0, 1): " + std::to_string(cfg.mask_ratio));
  }
  if (!(cfg.mlp_ratio > 0.0 && std::isfinite(cfg.mlp_ratio) && cfg.mlp_ratio <= 64.0)) {
    errors.push_back("mlp_ratio must be in (0, 64]: " + std::to_string(cfg.mlp_ratio));
  }

  const std::size_t stages = cfg.stage_depths.size();
  if (stages == 0) errors.push_back("stage_depths must be nonempty");
  if (stages > 16) errors.push_back("stage_depths: at most 16 stages supported");
  if (cfg.stage_heads.size() != stages) {
    errors.push_back("dimension mismatch: stage_depths has " + std::to_string(stages) +
                     " entries, stage_heads has " + std::to_string(cfg.stage_heads.size()));
  }
  for (std::size_t i = 0; i < stages; ++i) {
    if (!positive_bounded(cfg.stage_depths[i])) {
      errors.push_back("stage " + std::to_string(i) + ": depth must be positive (got " +
                       str(cfg.stage_depths[i]) + ")");
    }
  }
  if (embed_ok && head_dim_ok && stages <= 16) {
    for (std::size_t i = 0; i < std::min(stages, cfg.stage_heads.size()); ++i) {
      const std::int64_t heads = cfg.stage_heads[i];
      const std::int64_t width = cfg.embed_dim << i;
      if (!positive_bounded(heads)) {
        errors.push_back("stage " + std::to_string(i) + ": heads must be positive (got " +
                         str(heads) + ")");
      } else if (heads * cfg.head_dim != width) {
        errors.push_back("stage " + std::to_string(i) + ": heads x head_dim = " + str(heads) +
                         "x" + str(cfg.head_dim) + " = " + str(heads * cfg.head_dim) +
                         " != channel width " + str(width));
      }
    }
  }

  if (window_ok) {
    if (cfg.window.h != cfg.window.w) {
      errors.push_back("window must be square in space (window.h=" + str(cfg.window.h) +
                       ", window.w=" + str(cfg.window.w) + ")");
    }
    if (t_ok && patch_ok && cfg.window.t > cfg.num_timesteps / cfg.patch_size.t) {
      errors.push_back("window.t=" + str(cfg.window.t) + " exceeds temporal token count " +
                       str(cfg.num_timesteps / cfg.patch_size.t));
    }
  }

  if (patch_ok && t_ok && cfg.num_timesteps % cfg.patch_size.t != 0) {
    errors.push_back("num_timesteps " + str(cfg.num_timesteps) + " not divisible by patch_size.t " +
                     str(cfg.patch_size.t));
  }
  if (patch_ok && h_ok && w_ok && stages > 0 && stages <= 16) {
    auto check_axis = [&](const char* axis, std::int64_t extent, std::int64_t patch) {
      if (extent % patch != 0) {
        errors.push_back(std::string(axis) + " " + str(extent) + " not divisible by patch size " +
                         str(patch));
        return;
      }
      std::int64_t grid = extent / patch;
      for (std::size_t i = 0; i + 1 < stages; ++i) {
        if (grid % 2 != 0) {
          errors.push_back("stage " + std::to_string(i) + ": token grid " + axis + " " + str(grid) +
                           " is odd, cannot merge 2x2 neighbours");
          return;
        }
        grid /= 2;
      }
    };
    check_axis("input_height", cfg.input_height, cfg.patch_size.h);
    check_axis("input_width", cfg.input_width, cfg.patch_size.w);
  }

  if (stages > 0 && cfg.decoder_depths.size() != stages - 1) {
    errors.push_back("dimension mismatch: decoder_depths has " +
                     std::to_string(cfg.decoder_depths.size()) + " entries, expected " +
                     std::to_string(stages - 1) + " (one per expansion)");
  }
  for (std::size_t j = 0; j < cfg.decoder_depths.size(); ++j) {
    if (!positive_bounded(cfg.decoder_depths[j])) {
      errors.push_back("decoder stage " + std::to_string(j) + ": depth must be positive (got " +
                       str(cfg.decoder_depths[j]) + ")");
    }
  }
  if (embed_ok && cfg.mlp_ratio > 0 && cfg.mlp_ratio <= 64.0 &&
      cfg.mlp_hidden(static_cast<std::size_t>(cfg.embed_dim)) == 0) {
    errors.push_back("mlp_ratio x embed_dim rounds to an empty hidden layer");
  }
  return errors;
}

TemporalGeometry temporal_geometry(std::int64_t t_in, const TaskConfig& task) {
  TemporalGeometry g;
  if (t_in <= 0 || task.out_timesteps <= 0 || task.out_timesteps > t_in) {
    throw ConfigError({"out_timesteps " + str(task.out_timesteps) + " must be in [1, " +
                       str(t_in) + "]"});
  }
  const std::int64_t k = task.temporal_kernel > 0 ? task.temporal_kernel : t_in - task.out_timesteps + 1;
  if (k > t_in) {
    throw ConfigError({"temporal_kernel " + str(k) + " exceeds temporal length " + str(t_in)});
  }
  std::int64_t stride = 1;
  if (task.out_timesteps == 1) {
    stride = t_in - k + 1;
  } else {
    stride = (t_in - k) / (task.out_timesteps - 1);
    if (stride < 1 || (t_in - k) / stride + 1 != task.out_timesteps) {
      throw ConfigError({"no stride maps T=" + str(t_in) + " to T_out=" + str(task.out_timesteps) +
                         " with temporal_kernel " + str(k)});
    }
  }
  g.kernel = static_cast<std::size_t>(k);
  g.stride = static_cast<std::size_t>(stride);
  g.out_steps = static_cast<std::size_t>(task.out_timesteps);
  return g;
}

std::vector<std::string> validate_task(const ModelConfig& cfg, const TaskConfig& task) {
  std::vector<std::string> errors;
  if (task.kind == TaskKind::kSegmentation && (task.num_classes < 2 || task.num_classes > 65535)) {
    errors.push_back("num_classes must be in [2, 65535] for segmentation (got " +
                     str(task.num_classes) + ")");
  }
  if (task.out_channels < 0 || task.out_channels >= kMaxDim) {
    errors.push_back("out_channels must be >= 0 (got " + str(task.out_channels) + ")");
  }
  if (task.temporal_kernel < 0) {
    errors.push_back("temporal_kernel must be >= 0 (got " + str(task.temporal_kernel) + ")");
  }
  if (cfg.patch_size.t > 0 && cfg.num_timesteps > 0) {
    try {
      (void)temporal_geometry(cfg.num_timesteps / cfg.patch_size.t, task);
    } catch (const ConfigError& e) {
      errors.insert(errors.end(), e.violations().begin(), e.violations().end());
    }
  }
  return errors;
}

void expect_valid(const ModelConfig& cfg) {
  auto errors = validate_config(cfg);
  if (!errors.empty()) throw ConfigError(std::move(errors));
}

void expect_valid(const ModelConfig& cfg, const TaskConfig& task) {
  auto errors = validate_config(cfg);
  auto more = validate_task(cfg, task);
  errors.insert(errors.end(), more.begin(), more.end());
  if (!errors.empty()) throw ConfigError(std::move(errors));
}

namespace {

std::vector<PipelineEntry> trunk_pipeline(const ModelConfig& cfg, std::size_t batch, bool fusion) {
  expect_valid(cfg);
  const std::size_t n = batch;
  const auto t = static_cast<std::size_t>(cfg.num_timesteps / cfg.patch_size.t);
  const auto gh = static_cast<std::size_t>(cfg.input_height / cfg.patch_size.h);
  const auto gw = static_cast<std::size_t>(cfg.input_width / cfg.patch_size.w);
  const std::size_t stages = cfg.num_stages();
  std::vector<PipelineEntry> p;
  p.push_back({"input", {n, static_cast<std::size_t>(cfg.num_timesteps),
                         static_cast<std::size_t>(cfg.input_height),
                         static_cast<std::size_t>(cfg.input_width),
                         static_cast<std::size_t>(cfg.num_bands)}});
  p.push_back({"patch_partition", {n, t, gh, gw, cfg.tokens_per_patch_channels()}});
  p.push_back({"embed", {n, t, gh, gw, cfg.stage_channels(0)}});
  for (std::size_t i = 0; i < stages; ++i) {
    p.push_back({"encoder.stage" + std::to_string(i), {n, t, gh >> i, gw >> i, cfg.stage_channels(i)}});
    if (i + 1 < stages) {
      p.push_back({"encoder.stage" + std::to_string(i) + ".merge",
                   {n, t, gh >> (i + 1), gw >> (i + 1), cfg.stage_channels(i + 1)}});
    }
  }
  p.push_back({"bottleneck", p[p.size() - 1].shape});
  for (std::size_t j = 0; j + 1 < stages; ++j) {
    const std::size_t level = stages - 2 - j;
    Shape s{n, t, gh >> level, gw >> level, cfg.stage_channels(level)};
    const std::string prefix = "decoder.stage" + std::to_string(j);
    p.push_back({prefix + ".expand", s});
    if (fusion) p.push_back({prefix + ".fusion", s});
    p.push_back({prefix, s});
  }
  return p;
}

}  // namespace

std::vector<PipelineEntry> shape_pipeline(const ModelConfig& cfg, std::size_t batch) {
  auto p = trunk_pipeline(cfg, batch, false);
  const std::size_t n = batch;
  const auto t = static_cast<std::size_t>(cfg.num_timesteps / cfg.patch_size.t);
  const auto gh = static_cast<std::size_t>(cfg.input_height / cfg.patch_size.h);
  const auto gw = static_cast<std::size_t>(cfg.input_width / cfg.patch_size.w);
  p.push_back({"mae.head", {n, t, gh, gw, cfg.tokens_per_patch_channels()}});
  p.push_back({"mae.output", p.front().shape});
  return p;
}

std::vector<PipelineEntry> shape_pipeline(const ModelConfig& cfg, const TaskConfig& task,
                                          std::size_t batch) {
  expect_valid(cfg, task);
  auto p = trunk_pipeline(cfg, batch, task.skip_connections);
  const std::size_t n = batch;
  const auto t = static_cast<std::size_t>(cfg.num_timesteps / cfg.patch_size.t);
  const auto gh = static_cast<std::size_t>(cfg.input_height / cfg.patch_size.h);
  const auto gw = static_cast<std::size_t>(cfg.input_width / cfg.patch_size.w);
  const auto h = static_cast<std::size_t>(cfg.input_height);
  const auto w = static_cast<std::size_t>(cfg.input_width);
  const std::size_t c0 = cfg.stage_channels(0);
  const std::size_t c_out = task.out_channels > 0 ? static_cast<std::size_t>(task.out_channels) : c0;
  const auto tg = temporal_geometry(static_cast<std::int64_t>(t), task);
  if (task.expand_before_modulate) {
    p.push_back({"unet.final_expand", {n, t, h, w, c_out}});
    p.push_back({"unet.temporal", {n, tg.out_steps, h, w, c_out}});
  } else {
    p.push_back({"unet.temporal", {n, tg.out_steps, gh, gw, c0}});
    p.push_back({"unet.final_expand", {n, tg.out_steps, h, w, c_out}});
  }
  p.push_back({"unet.head", {n, tg.out_steps, h, w, task.head_outputs()}});
  return p;
}

const Shape& pipeline_shape(const std::vector<PipelineEntry>& pipeline, const std::string& name) {
  for (const auto& e : pipeline) {
    if (e.name == name) return e.shape;
  }
  throw Error("shape pipeline has no entry '" + name + "'");
}

// ---- JSON -------------------------------------------------------------------

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const char* what) {
  if (!j.is_object()) throw FormatError(std::string(what) + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw FormatError(std::string(what) + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read_field(const json& j, const char* key, T& out, const char* what) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(std::string(what) + "." + key + ": " + e.what());
  }
}

template <typename Triple>
Triple read_triple(const json& j, const char* key, Triple fallback, const char* what) {
  if (!j.contains(key)) return fallback;
  std::vector<std::int64_t> v;
  read_field(j, key, v, what);
  if (v.size() != 3) throw FormatError(std::string(what) + "." + key + ": expected 3 integers");
  return Triple{v[0], v[1], v[2]};
}

}  // namespace

json to_json(const ModelConfig& cfg) {
  return json{
      {"patch_size", {cfg.patch_size.t, cfg.patch_size.h, cfg.patch_size.w}},
      {"embed_dim", cfg.embed_dim},
      {"stage_depths", cfg.stage_depths},
      {"stage_heads", cfg.stage_heads},
      {"window", {cfg.window.t, cfg.window.h, cfg.window.w}},
      {"head_dim", cfg.head_dim},
      {"mlp_ratio", cfg.mlp_ratio},
      {"mask_ratio", cfg.mask_ratio},
      {"num_bands", cfg.num_bands},
      {"num_timesteps", cfg.num_timesteps},
      {"input_height", cfg.input_height},
      {"input_width", cfg.input_width},
      {"decoder_depths", cfg.decoder_depths},
      {"merge_norm", cfg.merge_norm},
      {"mask_layout", cfg.mask_layout == MaskLayout::kRandom ? "random" : "window"},
  };
}

ModelConfig model_config_from_json(const json& j) {
  static const std::set<std::string> keys{
      "patch_size", "embed_dim", "stage_depths", "stage_heads", "window",
      "head_dim", "mlp_ratio", "mask_ratio", "num_bands", "num_timesteps",
      "input_height", "input_width", "decoder_depths", "merge_norm", "mask_layout"};
  const char* what = "model";
  reject_unknown(j, keys, what);
  ModelConfig cfg;
  cfg.patch_size = read_triple(j, "patch_size", cfg.patch_size, what);
  cfg.window = read_triple(j, "window", cfg.window, what);
  read_field(j, "embed_dim", cfg.embed_dim, what);
  read_field(j, "stage_depths", cfg.stage_depths, what);
  read_field(j, "stage_heads", cfg.stage_heads, what);
  read_field(j, "head_dim", cfg.head_dim, what);
  read_field(j, "mlp_ratio", cfg.mlp_ratio, what);
  read_field(j, "mask_ratio", cfg.mask_ratio, what);
  read_field(j, "num_bands", cfg.num_bands, what);
  read_field(j, "num_timesteps", cfg.num_timesteps, what);
  read_field(j, "input_height", cfg.input_height, what);
  read_field(j, "input_width", cfg.input_width, what);
  if (j.contains("decoder_depths")) {
    read_field(j, "decoder_depths", cfg.decoder_depths, what);
  } else {
    cfg.decoder_depths.assign(cfg.stage_depths.empty() ? 0 : cfg.stage_depths.size() - 1, 2);
  }
  read_field(j, "merge_norm", cfg.merge_norm, what);
  if (j.contains("mask_layout")) {
    std::string layout;
    read_field(j, "mask_layout", layout, what);
    if (layout == "random") {
      cfg.mask_layout = MaskLayout::kRandom;
    } else if (layout == "window") {
      cfg.mask_layout = MaskLayout::kWindowAligned;
    } else {
      throw FormatError("model.mask_layout: expected 'random' or 'window', got '" + layout + "'");
    }
  }
  return cfg;
}

std::string to_string(TaskKind kind) {
  return kind == TaskKind::kSegmentation ? "segmentation" : "regression";
}

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "segmentation") return TaskKind::kSegmentation;
  if (s == "regression") return TaskKind::kRegression;
  throw FormatError("unknown task kind '" + s + "' (expected segmentation or regression)");
}

json to_json(const TaskConfig& task) {
  return json{
      {"kind", to_string(task.kind)},
      {"num_classes", task.num_classes},
      {"out_timesteps", task.out_timesteps},
      {"temporal_kernel", task.temporal_kernel},
      {"out_channels", task.out_channels},
      {"skip_connections", task.skip_connections},
      {"expand_before_modulate", task.expand_before_modulate},
  };
}

TaskConfig task_config_from_json(const json& j) {
  static const std::set<std::string> keys{"kind", "num_classes", "out_timesteps",
                                          "temporal_kernel", "out_channels", "skip_connections",
                                          "expand_before_modulate"};
  const char* what = "task";
  reject_unknown(j, keys, what);
  TaskConfig task;
  if (j.contains("kind")) {
    std::string kind;
    read_field(j, "kind", kind, what);
    task.kind = task_kind_from_string(kind);
  }
  read_field(j, "num_classes", task.num_classes, what);
  read_field(j, "out_timesteps", task.out_timesteps, what);
  read_field(j, "temporal_kernel", task.temporal_kernel, what);
  read_field(j, "out_channels", task.out_channels, what);
  read_field(j, "skip_connections", task.skip_connections, what);
  read_field(j, "expand_before_modulate", task.expand_before_modulate, what);
  return task;
}

SATSWIN_NAMESPACE_END
