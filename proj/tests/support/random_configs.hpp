// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>

#include "satswin/config.hpp"
#include "satswin/model.hpp"
#include "satswin/rng.hpp"

namespace testing {

/// A small, valid (model, task) pair drawn from `rng`; patch, window, stage
/// count, widths, temporal geometry and head order all vary.
inline std::pair<satswin::ModelConfig, satswin::TaskConfig> random_valid_config(satswin::CounterRng& rng) {
  using namespace satswin;
  for (;;) {
    ModelConfig cfg;
    const std::size_t stages = 1 + rng.below(3);
    const std::int64_t d = std::int64_t(2) << rng.below(3);
    const std::int64_t h0 = 1 + std::int64_t(rng.below(2));
    cfg.head_dim = d;
    cfg.embed_dim = h0 * d;
    cfg.stage_depths.clear();
    cfg.stage_heads.clear();
    for (std::size_t i = 0; i < stages; ++i) {
      cfg.stage_depths.push_back(1 + std::int64_t(rng.below(2)));
      cfg.stage_heads.push_back(h0 << i);
    }
    cfg.decoder_depths.assign(stages - 1, 1);
    for (auto& dd : cfg.decoder_depths) dd = 1 + std::int64_t(rng.below(2));
    cfg.num_timesteps = 1 + std::int64_t(rng.below(4));
    cfg.patch_size.t = (cfg.num_timesteps % 2 == 0 && rng.below(3) == 0) ? 2 : 1;
    cfg.patch_size.h = cfg.patch_size.w = std::int64_t(1) << rng.below(3);
    if (rng.below(4) == 0) cfg.patch_size.w = cfg.patch_size.h == 1 ? 2 : cfg.patch_size.h / 2;
    const std::int64_t tt = cfg.num_timesteps / cfg.patch_size.t;
    cfg.window.t = 1 + std::int64_t(rng.below(std::uint64_t(tt)));
    cfg.window.h = cfg.window.w = 1 + std::int64_t(rng.below(4));
    const std::int64_t unit = std::int64_t(1) << (stages - 1);
    cfg.input_height = cfg.patch_size.h * unit * (1 + std::int64_t(rng.below(3)));
    cfg.input_width = cfg.patch_size.w * unit * (1 + std::int64_t(rng.below(3)));
    cfg.num_bands = 1 + std::int64_t(rng.below(4));
    cfg.mlp_ratio = double(1 + rng.below(4));
    cfg.merge_norm = rng.below(2) == 0;
    cfg.mask_ratio = rng.uniform(0.1, 0.9);

    TaskConfig task;
    task.kind = rng.below(2) ? TaskKind::kSegmentation : TaskKind::kRegression;
    task.num_classes = 2 + std::int64_t(rng.below(3));
    task.out_timesteps = 1 + std::int64_t(rng.below(std::uint64_t(tt)));
    task.temporal_kernel = rng.below(2) ? 0 : 1 + std::int64_t(rng.below(std::uint64_t(tt)));
    task.out_channels = rng.below(2) ? 0 : 1 + std::int64_t(rng.below(6));
    task.skip_connections = rng.below(2) == 0;
    task.expand_before_modulate = rng.below(2) == 0;
    if (validate_config(cfg).empty() && validate_task(cfg, task).empty()) return {cfg, task};
  }
}

/// Every pipeline entry present in the trace with the same shape; returns the
/// first discrepancy, empty when all match.
inline std::string compare_trace(const std::vector<satswin::PipelineEntry>& pipeline,
                                 const satswin::ForwardTrace& trace) {
  for (const auto& e : pipeline) {
    if (!trace.contains(e.name)) return "missing " + e.name;
    if (trace.at(e.name).shape() != e.shape) {
      return e.name + ": forward " + satswin::to_string(trace.at(e.name).shape()) + " vs pipeline " +
             satswin::to_string(e.shape);
    }
  }
  if (trace.entries.size() != pipeline.size()) {
    return "trace has " + std::to_string(trace.entries.size()) + " entries, pipeline " +
           std::to_string(pipeline.size());
  }
  return {};
}

}  // namespace testing
