// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "satswin/checkpoint.hpp"
#include "satswin/data_io.hpp"
#include "satswin/masking.hpp"
#include "satswin/metrics.hpp"
#include "satswin/model.hpp"

SATSWIN_NAMESPACE_BEGIN
namespace train {

/// One-cycle cosine profile: linear warmup from max_lr/start_divisor to max_lr
/// over warmup_fraction of the steps, then cosine decay to max_lr/final_divisor.
struct ScheduleConfig {
  double max_lr = 1e-5;
  std::size_t total_steps = 1000;
  double warmup_fraction = 0.1;
  double start_divisor = 25.0;
  double final_divisor = 1e4;
};
std::vector<std::string> validate_schedule(const ScheduleConfig& s);
std::size_t warmup_steps(const ScheduleConfig& s);
/// Defined for 0 <= step <= total_steps.
double lr_at(std::size_t step, const ScheduleConfig& s);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

struct Moments {
  Tensor m;
  Tensor v;
};

struct OptimState {
  AdamWConfig hp;
  std::uint64_t step = 0;  // completed updates
  std::map<std::string, Moments> moments;
};

/// Decoupled decay, then the bias-corrected Adam update:
///   p -= lr * wd * p;  m = b1 m + (1-b1) g;  v = b2 v + (1-b2) g^2
///   p -= lr * (m / (1 - b1^k)) / (sqrt(v / (1 - b2^k)) + eps)
/// Parameters without a gradient see g = 0. Non-finite gradients throw
/// NumericError naming the parameter before anything is modified.
void adamw_step(std::span<const ParamRef> params, OptimState& state, double lr);

/// Optimizer moments live in the checkpoint as optim.m.<name> / optim.v.<name>.
void store_optim(Checkpoint& ckpt, const OptimState& state);
OptimState restore_optim(const Checkpoint& ckpt, const AdamWConfig& hp);

// ---- losses -----------------------------------------------------------------

/// Per-pixel weights over a cube [N,T,H,W,B]: 1 inside masked patches.
Tensor masked_pixel_weights(const Shape& cube_shape, std::span<const masking::MaskSpec> specs,
                            const PatchSize& patch);

/// Mean squared error over the pixels of masked patches (or every pixel with
/// all_pixels). Throws when no patch is masked in masked-only mode.
Var mae_loss(const Var& pred, const Tensor& target, std::span<const masking::MaskSpec> specs,
             const PatchSize& patch, bool all_pixels = false);

struct LabeledSample {
  Tensor cube;  // [T,H,W,B]
  data::LabelMap label;
};

/// Cross-entropy (segmentation) or MSE on raw outputs (regression) for a
/// batch output [N,T_out,H,W,K] against the samples' labels.
Var task_loss(const Var& output, std::span<const LabeledSample* const> batch, const TaskConfig& task,
              std::span<const double> class_weights = {});

// ---- loops ------------------------------------------------------------------

struct LoopConfig {
  std::size_t steps = 100;
  std::size_t batch_size = 1;
  ScheduleConfig schedule;
  AdamWConfig optim;
  std::uint64_t seed = 0;
  bool all_pixel_loss = false;
  bool freeze_encoder = false;
  std::vector<double> class_weights;
};
std::vector<std::string> validate_loop(const LoopConfig& loop);
nlohmann::json to_json(const LoopConfig& loop);
/// Missing keys keep their defaults; unknown keys raise FormatError.
LoopConfig loop_config_from_json(const nlohmann::json& j);

struct Hooks {
  /// Called after each update with the loss that produced it.
  std::function<void(std::size_t step, double loss)> on_step;
  /// Called with the number of completed steps; returning true stops the loop.
  std::function<bool(std::size_t steps_done)> after_step;
};

/// Sample indices for a step: a pure function of (seed, step).
std::vector<std::size_t> batch_indices(std::uint64_t seed, std::size_t step, std::size_t batch,
                                       std::size_t dataset_size);
/// Masks for a step, one per batch entry.
std::vector<masking::MaskSpec> step_masks(const ModelConfig& cfg, std::uint64_t seed, std::size_t step,
                                          std::size_t batch);
/// Stack [T,H,W,B] cubes into [N,T,H,W,B].
Tensor stack_cubes(std::span<const Tensor* const> cubes);

/// Runs from state.step up to loop.steps; returns the losses of those steps.
/// Continuing from a saved state reproduces an uninterrupted run.
std::vector<double> pretrain(MaeModel& model, std::span<const Tensor> cubes, const LoopConfig& loop,
                             OptimState& state, const Hooks& hooks = {});

std::vector<double> finetune(UnetModel& model, std::span<const LabeledSample> samples,
                             const LoopConfig& loop, OptimState& state, const Hooks& hooks = {});

struct EvalResult {
  std::optional<metrics::ConfusionMatrix> confusion;
  std::optional<metrics::RegressionMetrics> regression;
};
EvalResult evaluate(const UnetModel& model, std::span<const LabeledSample> samples);

}  // namespace train
SATSWIN_NAMESPACE_END
