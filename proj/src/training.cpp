// SPDX-License-Identifier: Apache-2.0
#include "satswin/training.hpp"

#include <cmath>
#include <numbers>
#include <set>

#include <nlohmann/json.hpp>

#include "satswin/errors.hpp"
#include "satswin/ops.hpp"
#include "satswin/rng.hpp"

SATSWIN_NAMESPACE_BEGIN
namespace train {

namespace {

enum Stream : std::uint64_t { kBatch = 0xBA7C, kMask = 0x3A5C };

ScheduleConfig loop_schedule(const LoopConfig& loop) {
  ScheduleConfig s = loop.schedule;
  s.total_steps = loop.steps;
  return s;
}

void expect_loop(const LoopConfig& loop) {
  auto errors = validate_loop(loop);
  if (!errors.empty()) throw ConfigError(std::move(errors));
}

}  // namespace

// ---- schedule ---------------------------------------------------------------

std::vector<std::string> validate_schedule(const ScheduleConfig& s) {
  std::vector<std::string> errors;
  if (!(s.max_lr > 0) || !std::isfinite(s.max_lr)) errors.push_back("schedule.max_lr must be positive");
  if (s.total_steps == 0) errors.push_back("schedule.total_steps must be positive");
  if (!(s.warmup_fraction > 0 && s.warmup_fraction < 1)) {
    errors.push_back("schedule.warmup_fraction out of open interval (0, 1)");
  }
  if (!(s.start_divisor >= 1)) errors.push_back("schedule.start_divisor must be >= 1");
  if (!(s.final_divisor >= 1)) errors.push_back("schedule.final_divisor must be >= 1");
  return errors;
}

std::size_t warmup_steps(const ScheduleConfig& s) {
  const auto w = static_cast<std::size_t>(std::llround(s.warmup_fraction * static_cast<double>(s.total_steps)));
  return std::clamp<std::size_t>(w, 1, std::max<std::size_t>(1, s.total_steps - 1));
}

double lr_at(std::size_t step, const ScheduleConfig& s) {
  if (auto errors = validate_schedule(s); !errors.empty()) throw ConfigError(std::move(errors));
  if (step > s.total_steps) {
    throw Error("lr_at: step " + std::to_string(step) + " outside [0, " + std::to_string(s.total_steps) + "]");
  }
  const double start = s.max_lr / s.start_divisor;
  const double floor = s.max_lr / s.final_divisor;
  const std::size_t w = warmup_steps(s);
  if (step <= w) return start + (s.max_lr - start) * static_cast<double>(step) / static_cast<double>(w);
  const double progress = static_cast<double>(step - w) / static_cast<double>(s.total_steps - w);
  return floor + (s.max_lr - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

// ---- optimizer --------------------------------------------------------------

void adamw_step(std::span<const ParamRef> params, OptimState& state, double lr) {
  for (const auto& p : params) {
    if (p.var.has_grad() && !p.var.grad().all_finite()) {
      throw NumericError("non-finite gradient in parameter '" + p.name + "'");
    }
  }
  const AdamWConfig& hp = state.hp;
  const std::uint64_t k = ++state.step;
  const double c1 = 1.0 - std::pow(hp.beta1, static_cast<double>(k));
  const double c2 = 1.0 - std::pow(hp.beta2, static_cast<double>(k));
  for (const auto& p : params) {
    Tensor& value = p.var.mutable_value();
    auto [it, fresh] = state.moments.try_emplace(p.name);
    Moments& mom = it->second;
    if (fresh) {
      mom.m = Tensor(value.shape());
      mom.v = Tensor(value.shape());
    } else if (mom.m.shape() != value.shape()) {
      throw ShapeError("optimizer moments for '" + p.name + "' are " + to_string(mom.m.shape()) +
                       ", parameter is " + to_string(value.shape()));
    }
    const bool has_grad = p.var.has_grad();
    const Tensor grad = has_grad ? p.var.grad() : Tensor();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = has_grad ? static_cast<double>(grad[i]) : 0.0;
      double x = static_cast<double>(value[i]);
      x -= lr * hp.weight_decay * x;
      const double m = hp.beta1 * static_cast<double>(mom.m[i]) + (1 - hp.beta1) * g;
      const double v = hp.beta2 * static_cast<double>(mom.v[i]) + (1 - hp.beta2) * g * g;
      mom.m[i] = static_cast<Real>(m);
      mom.v[i] = static_cast<Real>(v);
      x -= lr * (m / c1) / (std::sqrt(v / c2) + hp.eps);
      value[i] = static_cast<Real>(x);
    }
  }
}

void store_optim(Checkpoint& ckpt, const OptimState& state) {
  for (const auto& [name, mom] : state.moments) {
    ckpt.tensors.push_back({"optim.m." + name, mom.m});
    ckpt.tensors.push_back({"optim.v." + name, mom.v});
  }
  ckpt.extra["optim_step"] = state.step;
}

OptimState restore_optim(const Checkpoint& ckpt, const AdamWConfig& hp) {
  OptimState state;
  state.hp = hp;
  state.step = ckpt.extra.value("optim_step", std::uint64_t{0});
  const std::string m_prefix = "optim.m.";
  for (const auto& t : ckpt.tensors) {
    if (t.name.rfind(m_prefix, 0) != 0) continue;
    const std::string name = t.name.substr(m_prefix.size());
    const Tensor* v = ckpt.find("optim.v." + name);
    if (!v) throw FormatError("checkpoint has optim.m." + name + " without its second moment");
    state.moments[name] = {t.value, *v};
  }
  return state;
}

// ---- losses -----------------------------------------------------------------

Tensor masked_pixel_weights(const Shape& s, std::span<const masking::MaskSpec> specs, const PatchSize& patch) {
  if (s.size() != 5) throw ShapeError("mae_loss: expected [N,T,H,W,B], got " + to_string(s));
  const auto pt = static_cast<std::size_t>(patch.t), ph = static_cast<std::size_t>(patch.h),
             pw = static_cast<std::size_t>(patch.w);
  const std::size_t n = s[0], t = s[1], h = s[2], w = s[3], b = s[4];
  if (specs.empty() || (specs.size() != 1 && specs.size() != n)) {
    throw ShapeError("mae_loss: " + std::to_string(specs.size()) + " masks for batch " + std::to_string(n));
  }
  Tensor weight(s);
  for (std::size_t k = 0; k < n; ++k) {
    const auto& spec = specs.size() == 1 ? specs[0] : specs[k];
    if (spec.t * pt != t || spec.gh * ph != h || spec.gw * pw != w) {
      throw ShapeError("mae_loss: mask lattice " + std::to_string(spec.t) + "x" + std::to_string(spec.gh) +
                       "x" + std::to_string(spec.gw) + " does not tile cube " + to_string(s));
    }
    for (std::size_t ti = 0; ti < t; ++ti)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          if (!spec.at(ti / pt, i / ph, j / pw)) continue;
          std::fill_n(weight.data() + (((k * t + ti) * h + i) * w + j) * b, b, Real(1));
        }
  }
  return weight;
}

Var mae_loss(const Var& pred, const Tensor& target, std::span<const masking::MaskSpec> specs,
             const PatchSize& patch, bool all_pixels) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("mae_loss: prediction " + to_string(pred.shape()) + " vs target " + to_string(target.shape()));
  }
  if (all_pixels) return weighted_mse(pred, target, Tensor(target.shape(), Real(1)));
  Tensor weight = masked_pixel_weights(target.shape(), specs, patch);
  if (std::all_of(weight.values().begin(), weight.values().end(), [](Real v) { return v == 0; })) {
    throw Error("mae_loss: mask selects no patches");
  }
  return weighted_mse(pred, target, weight);
}

Var task_loss(const Var& output, std::span<const LabeledSample* const> batch, const TaskConfig& task,
              std::span<const double> class_weights) {
  const Shape& s = output.shape();
  if (s.size() != 5 || s[0] != batch.size()) {
    throw ShapeError("task_loss: output " + to_string(s) + " for batch of " + std::to_string(batch.size()));
  }
  const std::size_t per_sample = s[1] * s[2] * s[3];
  for (const auto* sample : batch) {
    const auto& l = sample->label;
    if (l.t != s[1] || l.h != s[2] || l.w != s[3]) {
      throw ShapeError("task_loss: label [" + std::to_string(l.t) + "," + std::to_string(l.h) + "," +
                       std::to_string(l.w) + "] vs output " + to_string(s));
    }
  }
  if (task.kind == TaskKind::kSegmentation) {
    std::vector<std::int32_t> labels;
    labels.reserve(batch.size() * per_sample);
    for (const auto* sample : batch) {
      if (sample->label.classes.size() != per_sample) throw ShapeError("task_loss: segmentation needs class labels");
      labels.insert(labels.end(), sample->label.classes.begin(), sample->label.classes.end());
    }
    return softmax_cross_entropy(output, labels, class_weights);
  }
  Tensor target(s);
  std::size_t off = 0;
  for (const auto* sample : batch) {
    if (sample->label.values.size() != per_sample) throw ShapeError("task_loss: regression needs real labels");
    for (float v : sample->label.values) target[off++] = static_cast<Real>(v);
  }
  return weighted_mse(output, target, Tensor(s, Real(1)));
}

// ---- loops ------------------------------------------------------------------

std::vector<std::string> validate_loop(const LoopConfig& loop) {
  std::vector<std::string> errors;
  if (loop.steps == 0) errors.push_back("steps must be positive");
  if (loop.batch_size == 0) errors.push_back("batch_size must be positive");
  auto s = validate_schedule(loop_schedule(loop));
  errors.insert(errors.end(), s.begin(), s.end());
  const auto& o = loop.optim;
  if (!(o.beta1 >= 0 && o.beta1 < 1) || !(o.beta2 >= 0 && o.beta2 < 1)) errors.push_back("optim betas must lie in [0, 1)");
  if (!(o.eps > 0)) errors.push_back("optim.eps must be positive");
  if (!(o.weight_decay >= 0)) errors.push_back("optim.weight_decay must be >= 0");
  for (double w : loop.class_weights) {
    if (!(w >= 0) || !std::isfinite(w)) errors.push_back("class_weights must be finite and >= 0");
  }
  return errors;
}

nlohmann::json to_json(const LoopConfig& loop) {
  return {
      {"steps", loop.steps},
      {"batch_size", loop.batch_size},
      {"seed", loop.seed},
      {"all_pixel_loss", loop.all_pixel_loss},
      {"freeze_encoder", loop.freeze_encoder},
      {"class_weights", loop.class_weights},
      {"schedule",
       {{"max_lr", loop.schedule.max_lr},
        {"warmup_fraction", loop.schedule.warmup_fraction},
        {"start_divisor", loop.schedule.start_divisor},
        {"final_divisor", loop.schedule.final_divisor}}},
      {"optim",
       {{"beta1", loop.optim.beta1},
        {"beta2", loop.optim.beta2},
        {"eps", loop.optim.eps},
        {"weight_decay", loop.optim.weight_decay}}},
  };
}

LoopConfig loop_config_from_json(const nlohmann::json& j) {
  auto check_keys = [](const nlohmann::json& obj, const std::set<std::string>& keys, const std::string& what) {
    if (!obj.is_object()) throw FormatError(what + ": expected a JSON object");
    for (const auto& [key, _] : obj.items()) {
      if (!keys.count(key)) throw FormatError(what + ": unknown key '" + key + "'");
    }
  };
  check_keys(j, {"steps", "batch_size", "seed", "all_pixel_loss", "freeze_encoder", "class_weights", "schedule", "optim"},
             "loop");
  LoopConfig loop;
  try {
    loop.steps = j.value("steps", loop.steps);
    loop.batch_size = j.value("batch_size", loop.batch_size);
    loop.seed = j.value("seed", loop.seed);
    loop.all_pixel_loss = j.value("all_pixel_loss", loop.all_pixel_loss);
    loop.freeze_encoder = j.value("freeze_encoder", loop.freeze_encoder);
    loop.class_weights = j.value("class_weights", loop.class_weights);
    if (j.contains("schedule")) {
      const auto& s = j.at("schedule");
      check_keys(s, {"max_lr", "warmup_fraction", "start_divisor", "final_divisor"}, "loop.schedule");
      loop.schedule.max_lr = s.value("max_lr", loop.schedule.max_lr);
      loop.schedule.warmup_fraction = s.value("warmup_fraction", loop.schedule.warmup_fraction);
      loop.schedule.start_divisor = s.value("start_divisor", loop.schedule.start_divisor);
      loop.schedule.final_divisor = s.value("final_divisor", loop.schedule.final_divisor);
    }
    if (j.contains("optim")) {
      const auto& o = j.at("optim");
      check_keys(o, {"beta1", "beta2", "eps", "weight_decay"}, "loop.optim");
      loop.optim.beta1 = o.value("beta1", loop.optim.beta1);
      loop.optim.beta2 = o.value("beta2", loop.optim.beta2);
      loop.optim.eps = o.value("eps", loop.optim.eps);
      loop.optim.weight_decay = o.value("weight_decay", loop.optim.weight_decay);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("loop: ") + e.what());
  }
  loop.schedule.total_steps = loop.steps;
  return loop;
}

std::vector<std::size_t> batch_indices(std::uint64_t seed, std::size_t step, std::size_t batch,
                                       std::size_t dataset_size) {
  if (dataset_size == 0) throw Error("dataset is empty");
  CounterRng rng = CounterRng(seed).split(kBatch, step);
  std::vector<std::size_t> idx(batch);
  for (auto& i : idx) i = static_cast<std::size_t>(rng.below(dataset_size));
  return idx;
}

std::vector<masking::MaskSpec> step_masks(const ModelConfig& cfg, std::uint64_t seed, std::size_t step,
                                          std::size_t batch) {
  const auto t = static_cast<std::size_t>(cfg.num_timesteps / cfg.patch_size.t);
  const auto gh = static_cast<std::size_t>(cfg.input_height / cfg.patch_size.h);
  const auto gw = static_cast<std::size_t>(cfg.input_width / cfg.patch_size.w);
  std::vector<masking::MaskSpec> specs;
  for (std::size_t k = 0; k < batch; ++k) {
    const std::uint64_t mask_seed = CounterRng(seed).split(kMask, step).at(k);
    if (cfg.mask_layout == MaskLayout::kWindowAligned) {
      specs.push_back(masking::generate_window_aligned_mask(t, gh, gw, static_cast<std::size_t>(cfg.window.h),
                                                            cfg.mask_ratio, mask_seed));
    } else {
      specs.push_back(masking::generate_window_mask(t, gh, gw, cfg.mask_ratio, mask_seed));
    }
  }
  return specs;
}

Tensor stack_cubes(std::span<const Tensor* const> cubes) {
  if (cubes.empty()) throw ShapeError("stack_cubes: empty batch");
  const Shape& s = cubes.front()->shape();
  Shape out_shape{cubes.size()};
  out_shape.insert(out_shape.end(), s.begin(), s.end());
  Tensor out(out_shape);
  const std::size_t n = cubes.front()->size();
  for (std::size_t k = 0; k < cubes.size(); ++k) {
    if (cubes[k]->shape() != s) {
      throw ShapeError("stack_cubes: " + to_string(cubes[k]->shape()) + " vs " + to_string(s));
    }
    std::copy_n(cubes[k]->data(), n, out.data() + k * n);
  }
  return out;
}

std::vector<double> pretrain(MaeModel& model, std::span<const Tensor> cubes, const LoopConfig& loop,
                             OptimState& state, const Hooks& hooks) {
  expect_loop(loop);
  if (cubes.empty()) throw Error("pretrain: dataset is empty");
  const ScheduleConfig sched = loop_schedule(loop);
  state.hp = loop.optim;
  std::vector<double> losses;
  const auto& params = model.params().entries();
  for (std::size_t step = state.step; step < loop.steps; ++step) {
    std::vector<const Tensor*> batch;
    for (std::size_t i : batch_indices(loop.seed, step, loop.batch_size, cubes.size())) batch.push_back(&cubes[i]);
    const Tensor x = stack_cubes(batch);
    const auto specs = step_masks(model.config(), loop.seed, step, loop.batch_size);
    model.params().zero_grad();
    Var pred = model.forward(Var(x), specs);
    Var loss = mae_loss(pred, x, specs, model.config().patch_size, loop.all_pixel_loss);
    backward(loss);
    adamw_step(params, state, lr_at(step, sched));
    const double value = static_cast<double>(loss.value()[0]);
    losses.push_back(value);
    if (hooks.on_step) hooks.on_step(step, value);
    if (hooks.after_step && hooks.after_step(step + 1)) break;
  }
  model.params().zero_grad();
  return losses;
}

std::vector<double> finetune(UnetModel& model, std::span<const LabeledSample> samples, const LoopConfig& loop,
                             OptimState& state, const Hooks& hooks) {
  expect_loop(loop);
  if (samples.empty()) throw Error("finetune: dataset is empty");
  const ScheduleConfig sched = loop_schedule(loop);
  state.hp = loop.optim;
  const auto trainable = model.trainable(loop.freeze_encoder);
  std::vector<double> losses;
  for (std::size_t step = state.step; step < loop.steps; ++step) {
    std::vector<const Tensor*> cubes;
    std::vector<const LabeledSample*> batch;
    for (std::size_t i : batch_indices(loop.seed, step, loop.batch_size, samples.size())) {
      batch.push_back(&samples[i]);
      cubes.push_back(&samples[i].cube);
    }
    model.params().zero_grad();
    Var out = model.forward(Var(stack_cubes(cubes)));
    Var loss = task_loss(out, batch, model.task(), loop.class_weights);
    backward(loss);
    adamw_step(trainable, state, lr_at(step, sched));
    const double value = static_cast<double>(loss.value()[0]);
    losses.push_back(value);
    if (hooks.on_step) hooks.on_step(step, value);
    if (hooks.after_step && hooks.after_step(step + 1)) break;
  }
  model.params().zero_grad();
  return losses;
}

EvalResult evaluate(const UnetModel& model, std::span<const LabeledSample> samples) {
  NoGradGuard no_grad;
  EvalResult result;
  const TaskConfig& task = model.task();
  std::vector<double> pred, truth;
  if (task.kind == TaskKind::kSegmentation) {
    result.confusion.emplace(static_cast<std::size_t>(task.num_classes));
  }
  for (const auto& sample : samples) {
    const Tensor* cube = &sample.cube;
    Var out = model.forward(Var(stack_cubes(std::span<const Tensor* const>(&cube, 1))));
    const Shape& s = out.shape();
    const auto& l = sample.label;
    if (l.t != s[1] || l.h != s[2] || l.w != s[3]) {
      throw ShapeError("evaluate: label [" + std::to_string(l.t) + "," + std::to_string(l.h) + "," +
                       std::to_string(l.w) + "] vs output " + to_string(s));
    }
    if (task.kind == TaskKind::kSegmentation) {
      result.confusion->accumulate(argmax_labels(out.value()), l.classes, -1);
    } else {
      const Tensor reported = reported_output(out.value(), task.kind);
      for (Real v : reported.values()) pred.push_back(static_cast<double>(v));
      for (float v : l.values) truth.push_back(static_cast<double>(v));
    }
  }
  if (task.kind == TaskKind::kRegression) result.regression = metrics::regression_metrics(pred, truth);
  return result;
}

}  // namespace train
SATSWIN_NAMESPACE_END
