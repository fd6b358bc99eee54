// SPDX-License-Identifier: Apache-2.0
#include "satswin/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "satswin/checkpoint.hpp"
#include "satswin/data_io.hpp"
#include "satswin/errors.hpp"
#include "satswin/metrics.hpp"
#include "satswin/model.hpp"

SATSWIN_NAMESPACE_BEGIN
namespace cli {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- run config -------------------------------------------------------------

namespace {

void reject_unknown(const json& j, const std::set<std::string>& keys, const std::string& what) {
  if (!j.is_object()) throw FormatError(what + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!keys.count(key)) throw FormatError(what + ": unknown key '" + key + "'");
  }
}

template <typename T>
T field(const json& j, const char* key, T fallback, const std::string& what) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(what + "." + key + ": " + e.what());
  }
}

}  // namespace

RunConfig run_config_from_json(const json& j, const fs::path& base_dir) {
  reject_unknown(j, {"model", "task", "loop", "data", "eval", "output", "seed"}, "run config");
  RunConfig rc;
  if (j.contains("model")) rc.model = model_config_from_json(j.at("model"));
  if (j.contains("task")) rc.task = task_config_from_json(j.at("task"));
  if (j.contains("loop")) rc.loop = train::loop_config_from_json(j.at("loop"));
  rc.seed = field(j, "seed", rc.seed, "run config");
  if (j.contains("data")) {
    const auto& d = j.at("data");
    reject_unknown(d, {"manifest", "split"}, "data");
    const auto manifest = field(d, "manifest", std::string(), "data");
    if (!manifest.empty()) rc.manifest = base_dir / manifest;
    rc.split = field(d, "split", rc.split, "data");
  }
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    reject_unknown(e, {"every", "split"}, "eval");
    rc.eval.every = field(e, "every", rc.eval.every, "eval");
    rc.eval.split = field(e, "split", rc.eval.split, "eval");
  }
  if (j.contains("output")) {
    const auto& o = j.at("output");
    reject_unknown(o, {"image_every", "checkpoint_every"}, "output");
    rc.output.image_every = field(o, "image_every", rc.output.image_every, "output");
    rc.output.checkpoint_every = field(o, "checkpoint_every", rc.output.checkpoint_every, "output");
  }
  return rc;
}

json to_json(const RunConfig& rc) {
  json j{
      {"model", to_json(rc.model)},
      {"loop", train::to_json(rc.loop)},
      {"data", {{"manifest", rc.manifest.generic_string()}, {"split", rc.split}}},
      {"eval", {{"every", rc.eval.every}, {"split", rc.eval.split}}},
      {"output", {{"image_every", rc.output.image_every}, {"checkpoint_every", rc.output.checkpoint_every}}},
      {"seed", rc.seed},
  };
  if (rc.task) j["task"] = to_json(*rc.task);
  return j;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UserError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return run_config_from_json(j, path.parent_path());
}

std::vector<std::string> validate_run_config(const RunConfig& rc, bool needs_task) {
  auto errors = validate_config(rc.model);
  if (needs_task) {
    if (!rc.task) {
      errors.push_back("task section is required");
    } else if (errors.empty()) {
      auto more = validate_task(rc.model, *rc.task);
      errors.insert(errors.end(), more.begin(), more.end());
    }
  }
  auto loop = train::validate_loop(rc.loop);
  errors.insert(errors.end(), loop.begin(), loop.end());
  static const std::set<std::string> splits{"train", "val", "test"};
  if (!splits.count(rc.split)) errors.push_back("data.split must be train, val or test");
  if (!splits.count(rc.eval.split)) errors.push_back("eval.split must be train, val or test");
  if (rc.manifest.empty()) errors.push_back("data.manifest is required");
  return errors;
}

// ---- run directory ----------------------------------------------------------

RunLock::RunLock(const fs::path& dir) : path_(dir / ".lock") {
  fs::create_directories(dir);
  std::FILE* f = std::fopen(path_.string().c_str(), "wx");
  if (!f) throw UserError("run directory " + dir.string() + " is locked by another run (" + path_.string() + ")");
  std::fclose(f);
}

RunLock::~RunLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

namespace {

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void expect_valid_run(const RunConfig& rc, bool needs_task) {
  auto errors = validate_run_config(rc, needs_task);
  if (!errors.empty()) throw ConfigError(std::move(errors));
}

std::vector<data::ManifestEntry> entries_for(const data::DatasetManifest& m, const std::string& split,
                                             bool fallback_to_train) {
  auto entries = m.split(split);
  if (entries.empty() && fallback_to_train) entries = m.split("train");
  if (entries.empty()) throw UserError("manifest has no chips in split '" + split + "'");
  return entries;
}

void check_chip_dims(const data::Chip& chip, const ModelConfig& cfg, const fs::path& path) {
  if (static_cast<std::int64_t>(chip.timesteps()) != cfg.num_timesteps ||
      static_cast<std::int64_t>(chip.height()) != cfg.input_height ||
      static_cast<std::int64_t>(chip.width()) != cfg.input_width) {
    throw UserError(path.string() + ": chip " + ::satswin::to_string(chip.cube.shape()) +
                    " does not match the configured input " + std::to_string(cfg.num_timesteps) + "x" +
                    std::to_string(cfg.input_height) + "x" + std::to_string(cfg.input_width));
  }
}

std::vector<data::Chip> load_chips(const std::vector<data::ManifestEntry>& entries, const ModelConfig& cfg) {
  std::vector<data::Chip> chips;
  for (const auto& e : entries) {
    chips.push_back(data::read_chip(e.path, static_cast<std::size_t>(cfg.num_bands)));
    check_chip_dims(chips.back(), cfg, e.path);
  }
  return chips;
}

std::vector<train::LabeledSample> labeled(std::vector<data::Chip> chips, const std::vector<data::ManifestEntry>& entries,
                                          const TaskConfig& task) {
  std::vector<train::LabeledSample> out;
  for (std::size_t i = 0; i < chips.size(); ++i) {
    auto& c = chips[i];
    const data::LabelKind want =
        task.kind == TaskKind::kSegmentation ? data::LabelKind::kClass : data::LabelKind::kRegression;
    if (!c.label || c.label->kind != want) {
      throw UserError(entries[i].path.string() + ": chip lacks " + to_string(task.kind) + " labels");
    }
    out.push_back({std::move(c.cube), std::move(*c.label)});
  }
  return out;
}

void print_pipeline(std::ostream& out, const std::vector<PipelineEntry>& pipeline, std::size_t params) {
  std::size_t width = 0;
  for (const auto& e : pipeline) width = std::max(width, e.name.size());
  for (const auto& e : pipeline) out << std::left << std::setw(static_cast<int>(width) + 2) << e.name << ::satswin::to_string(e.shape) << '\n';
  out << "parameters: " << params << '\n';
}

// Masked patches shown as zeros.
Tensor masked_view(const Tensor& cube, const masking::MaskSpec& spec, const PatchSize& patch) {
  Tensor out = cube;
  const std::size_t t = cube.dim(0), h = cube.dim(1), w = cube.dim(2), b = cube.dim(3);
  for (std::size_t k = 0; k < t; ++k)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j)
        if (spec.at(k / static_cast<std::size_t>(patch.t), i / static_cast<std::size_t>(patch.h),
                    j / static_cast<std::size_t>(patch.w)))
          std::fill_n(out.data() + ((k * h + i) * w + j) * b, b, Real(0));
  return out;
}

void write_triptychs(const fs::path& dir, const std::string& stem, const Tensor& original,
                     const masking::MaskSpec& spec, const Tensor& recon, const PatchSize& patch,
                     const std::vector<std::string>& band_names) {
  const auto bands = data::rgb_bands(band_names);
  const Tensor masked = masked_view(original, spec, patch);
  for (std::size_t t = 0; t < original.dim(0); ++t) {
    auto img = data::hconcat({data::render_rgb(original, t, bands), data::render_rgb(masked, t, bands),
                              data::render_rgb(recon, t, bands)});
    data::write_ppm(dir / (stem + "_t" + std::to_string(t) + ".ppm"), img);
  }
}

Tensor reconstruct_one(const MaeModel& model, const Tensor& cube, const masking::MaskSpec& spec) {
  NoGradGuard no_grad;
  Shape s{1};
  s.insert(s.end(), cube.shape().begin(), cube.shape().end());
  Var out = model.forward(Var(cube.reshaped(s)), std::span<const masking::MaskSpec>(&spec, 1));
  return out.value().reshaped(cube.shape());
}

std::string step_name(const char* prefix, std::size_t step, const char* suffix) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s%06zu%s", prefix, step, suffix);
  return buf;
}

// ---- commands ---------------------------------------------------------------

struct SynthArgs {
  std::string kind;
  std::size_t count = 1;
  std::string dims = "3x64x64x6";
  std::uint64_t seed = 0;
  std::string out;
  std::string dtype = "float32";
  std::size_t val = 0;
  std::size_t test = 0;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  const auto kind = data::synth_kind_from_string(a.kind);
  const auto dims = data::parse_dims(a.dims);
  if (a.dtype != "float32" && a.dtype != "uint8") throw UserError("--dtype must be float32 or uint8");
  if (a.count == 0) throw UserError("--count must be positive");
  if (a.val + a.test >= a.count) throw UserError("--val plus --test must leave at least one training chip");
  RunLock lock(a.out);
  const auto manifest = data::synth_generate(kind, dims, a.count, a.seed, a.out,
                                             a.dtype == "uint8" ? data::DType::kUint8 : data::DType::kFloat32);
  if (a.val + a.test > 0) {
    // trailing chips become val, then test
    auto m = data::load_manifest(manifest);
    const std::size_t first_val = a.count - a.val - a.test;
    for (std::size_t i = first_val; i < a.count; ++i) m.chips[i].split = i < first_val + a.val ? "val" : "test";
    data::save_manifest(manifest, m);
  }
  write_json(fs::path(a.out) / "config.json",
             {{"command", "synth"}, {"kind", a.kind}, {"count", a.count}, {"dims", a.dims}, {"seed", a.seed},
              {"dtype", a.dtype}, {"val", a.val}, {"test", a.test}});
  out << "wrote " << a.count << " " << a.kind << " chips and " << manifest.string() << '\n';
  return kExitOk;
}

struct TrainArgs {
  std::string config;
  std::string out;
  std::string checkpoint;
  std::optional<std::uint64_t> seed;
  std::optional<double> mask_ratio;
  bool dry_run = false;
  bool no_skip = false;
  bool from_scratch = false;
};

RunConfig prepared_config(const TrainArgs& a, bool needs_task) {
  RunConfig rc = load_run_config(a.config);
  if (a.seed) rc.seed = *a.seed;
  rc.loop.seed = rc.seed;
  if (a.mask_ratio) rc.model.mask_ratio = *a.mask_ratio;
  if (a.no_skip && rc.task) rc.task->skip_connections = false;
  expect_valid_run(rc, needs_task);
  return rc;
}

int cmd_pretrain(const TrainArgs& a, std::ostream& out) {
  RunConfig rc = prepared_config(a, false);
  if (a.dry_run) {
    MaeModel model(rc.model, rc.seed);
    print_pipeline(out, shape_pipeline(rc.model), model.params().scalar_count());
    return kExitOk;
  }
  if (a.out.empty()) throw UserError("--out is required");
  const fs::path dir = a.out;
  const auto manifest = data::load_manifest(rc.manifest);
  const auto entries = entries_for(manifest, rc.split, false);
  auto chips = load_chips(entries, rc.model);

  RunLock lock(dir);
  write_json(dir / "config.json", to_json(rc));
  MaeModel model(rc.model, rc.seed);
  train::OptimState state;
  state.hp = rc.loop.optim;
  if (!a.checkpoint.empty()) {
    const auto ckpt = load_checkpoint(a.checkpoint);
    if (ckpt.kind != "mae") throw UserError(a.checkpoint + ": expected a pretraining checkpoint, got '" + ckpt.kind + "'");
    if (!(ckpt.config == rc.model)) throw UserError(a.checkpoint + ": model config differs from the run config");
    restore_params(ckpt, model.params());
    state = train::restore_optim(ckpt, rc.loop.optim);
    out << "resuming at step " << state.step << '\n';
  }
  std::vector<Tensor> cubes;
  for (const auto& c : chips) cubes.push_back(c.cube);

  const auto& patch = rc.model.patch_size;
  const auto preview = train::step_masks(rc.model, rc.seed ^ 0x9E3779B97F4A7C15ULL, 0, 1).front();
  auto dump_images = [&](std::size_t step) {
    write_triptychs(dir / "recon", step_name("step_", step, ""), cubes.front(), preview,
                    reconstruct_one(model, cubes.front(), preview), patch, chips.front().band_names);
  };
  auto save = [&](const fs::path& path, std::size_t step) {
    Checkpoint ckpt{"mae", rc.model, std::nullopt, step, json::object(), {}};
    store_params(ckpt, model.params());
    train::store_optim(ckpt, state);
    save_checkpoint(path, ckpt);
  };

  std::ofstream csv(dir / "loss.csv");
  csv << "step,loss,lr\n";
  train::ScheduleConfig sched = rc.loop.schedule;
  sched.total_steps = rc.loop.steps;
  train::Hooks hooks;
  hooks.on_step = [&](std::size_t step, double loss) {
    csv << step << ',' << std::setprecision(9) << loss << ',' << train::lr_at(step, sched) << '\n';
  };
  hooks.after_step = [&](std::size_t done) {
    if (rc.output.checkpoint_every && done % rc.output.checkpoint_every == 0 && done < rc.loop.steps) {
      save(dir / step_name("ckpt_", done, ".ckpt"), done);
    }
    if (rc.output.image_every && done % rc.output.image_every == 0 && done < rc.loop.steps) dump_images(done);
    return false;
  };
  const auto losses = train::pretrain(model, cubes, rc.loop, state, hooks);
  csv.close();
  save(dir / "final.ckpt", state.step);
  dump_images(state.step);
  if (!losses.empty()) {
    out << "pretrained " << losses.size() << " steps: loss " << losses.front() << " -> " << losses.back() << '\n';
  }
  return kExitOk;
}

std::vector<std::string> segmentation_header(std::size_t k) {
  std::vector<std::string> cols{"step", "loss"};
  for (std::size_t c = 0; c < k; ++c) cols.push_back("iou_" + std::to_string(c));
  cols.insert(cols.end(), {"miou", "macc", "overall_acc"});
  return cols;
}

int cmd_finetune(const TrainArgs& a, std::ostream& out) {
  RunConfig rc = prepared_config(a, true);
  const TaskConfig& task = *rc.task;
  if (a.checkpoint.empty() && !a.from_scratch) {
    throw UserError("--checkpoint is required unless --from-scratch is given");
  }
  if (!a.checkpoint.empty() && !fs::exists(a.checkpoint)) throw UserError("checkpoint " + a.checkpoint + " does not exist");
  if (a.dry_run) {
    UnetModel model(rc.model, task, rc.seed);
    print_pipeline(out, shape_pipeline(rc.model, task), model.params().scalar_count());
    return kExitOk;
  }
  if (a.out.empty()) throw UserError("--out is required");
  const fs::path dir = a.out;
  const auto manifest = data::load_manifest(rc.manifest);
  const auto train_entries = entries_for(manifest, rc.split, false);
  const auto eval_entries = entries_for(manifest, rc.eval.split, true);
  const auto samples = labeled(load_chips(train_entries, rc.model), train_entries, task);
  const auto eval_samples = labeled(load_chips(eval_entries, rc.model), eval_entries, task);

  RunLock lock(dir);
  write_json(dir / "config.json", to_json(rc));
  UnetModel model(rc.model, task, rc.seed);
  train::OptimState state;
  state.hp = rc.loop.optim;
  if (!a.checkpoint.empty()) {
    const auto ckpt = load_checkpoint(a.checkpoint);
    if (ckpt.kind == "mae") {
      const ParamStore pre = params_from_checkpoint(ckpt);
      const auto report = transfer_weights(pre, ckpt.config, model);
      std::ofstream rep(dir / "transfer.txt");
      rep << "copied " << report.copied.size() << " tensors (" << report.copied_scalars << " values)\n";
      for (const auto& n : report.copied) rep << "  copied  " << n << '\n';
      for (const auto& n : report.dropped) rep << "  dropped " << n << '\n';
      for (const auto& n : report.fresh) rep << "  fresh   " << n << '\n';
      out << "transferred " << report.copied.size() << " tensors, " << report.fresh.size() << " fresh\n";
    } else if (ckpt.kind == "unet") {
      if (!(ckpt.config == rc.model) || !ckpt.task || !(*ckpt.task == task)) {
        throw UserError(a.checkpoint + ": finetuning checkpoint does not match the run config");
      }
      restore_params(ckpt, model.params());
      state = train::restore_optim(ckpt, rc.loop.optim);
      out << "resuming at step " << state.step << '\n';
    } else {
      throw UserError(a.checkpoint + ": unknown checkpoint kind '" + ckpt.kind + "'");
    }
  }

  std::ofstream csv(dir / "metrics.csv");
  if (task.kind == TaskKind::kSegmentation) {
    const auto cols = segmentation_header(static_cast<std::size_t>(task.num_classes));
    for (std::size_t i = 0; i < cols.size(); ++i) csv << (i ? "," : "") << cols[i];
    csv << '\n';
  } else {
    csv << "step,loss,mse,mae\n";
  }
  std::ofstream loss_csv(dir / "loss.csv");
  loss_csv << "step,loss\n";
  double last_loss = 0;
  auto log_eval = [&](std::size_t step) {
    const auto result = train::evaluate(model, eval_samples);
    csv << step << ',' << std::setprecision(9) << last_loss;
    if (result.confusion) {
      const auto row = metrics::segmentation_row("", *result.confusion);
      for (double v : row.class_iou) csv << ',' << v;
      csv << ',' << row.miou << ',' << row.macc << ',' << row.overall_acc << '\n';
    } else {
      csv << ',' << result.regression->mse << ',' << result.regression->mae << '\n';
    }
  };
  auto save = [&](const fs::path& path, std::size_t step) {
    json extra{{"name", dir.filename().string() + (task.skip_connections ? "" : " (no skip)")}};
    Checkpoint ckpt{"unet", rc.model, task, step, extra, {}};
    store_params(ckpt, model.params());
    train::store_optim(ckpt, state);
    save_checkpoint(path, ckpt);
  };
  train::Hooks hooks;
  hooks.on_step = [&](std::size_t step, double loss) {
    last_loss = loss;
    loss_csv << step << ',' << std::setprecision(9) << loss << '\n';
  };
  hooks.after_step = [&](std::size_t done) {
    if (rc.eval.every && done % rc.eval.every == 0 && done < rc.loop.steps) log_eval(done);
    if (rc.output.checkpoint_every && done % rc.output.checkpoint_every == 0 && done < rc.loop.steps) {
      save(dir / step_name("ckpt_", done, ".ckpt"), done);
    }
    return false;
  };
  train::finetune(model, samples, rc.loop, state, hooks);
  log_eval(state.step);
  save(dir / "final.ckpt", state.step);
  out << "finetuned " << state.step << " steps, metrics in " << (dir / "metrics.csv").string() << '\n';
  return kExitOk;
}

struct EvalArgs {
  std::vector<std::string> checkpoints;
  std::string manifest;
  std::string split = "test";
  std::string out;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const auto manifest = data::load_manifest(a.manifest);
  std::vector<metrics::SegmentationRow> seg_rows;
  std::vector<metrics::RegressionRow> reg_rows;
  for (const auto& path : a.checkpoints) {
    const auto ckpt = load_checkpoint(path);
    if (ckpt.kind != "unet" || !ckpt.task) throw UserError(path + ": eval needs a finetuning checkpoint");
    UnetModel model(ckpt.config, *ckpt.task, 0);
    restore_params(ckpt, model.params());
    const auto entries = entries_for(manifest, a.split, true);
    const auto samples = labeled(load_chips(entries, ckpt.config), entries, *ckpt.task);
    const auto result = train::evaluate(model, samples);
    const std::string name = ckpt.extra.value("name", fs::path(path).stem().string());
    if (result.confusion) {
      if (!reg_rows.empty()) throw UserError("cannot mix segmentation and regression checkpoints in one table");
      seg_rows.push_back(metrics::segmentation_row(name, *result.confusion));
    } else {
      if (!seg_rows.empty()) throw UserError("cannot mix segmentation and regression checkpoints in one table");
      reg_rows.push_back({name, *result.regression});
    }
  }
  std::ostringstream table, csv;
  if (!seg_rows.empty()) {
    if (seg_rows.size() > 1) {
      for (const auto& r : seg_rows) {
        if (r.class_iou.size() != seg_rows.front().class_iou.size()) {
          throw UserError("checkpoints disagree on the number of classes");
        }
      }
    }
    metrics::write_segmentation_table(table, seg_rows);
    metrics::write_segmentation_csv(csv, seg_rows);
  } else {
    metrics::write_regression_table(table, reg_rows);
    metrics::write_regression_csv(csv, reg_rows);
  }
  out << table.str();
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    std::ofstream(fs::path(a.out) / "metrics.csv") << csv.str();
    std::ofstream(fs::path(a.out) / "table.txt") << table.str();
    write_json(fs::path(a.out) / "config.json",
               {{"command", "eval"}, {"checkpoints", a.checkpoints}, {"manifest", a.manifest}, {"split", a.split}});
  }
  return kExitOk;
}

struct ReconstructArgs {
  std::string checkpoint;
  std::string chip;
  std::uint64_t seed = 0;
  std::string out;
  std::optional<double> mask_ratio;
  std::string mask_mode = "auto";
};

int cmd_reconstruct(const ReconstructArgs& a, std::ostream& out) {
  const auto ckpt = load_checkpoint(a.checkpoint);
  if (ckpt.kind != "mae") throw UserError(a.checkpoint + ": reconstruct needs a pretraining checkpoint");
  ModelConfig cfg = ckpt.config;
  if (a.mask_ratio) cfg.mask_ratio = *a.mask_ratio;
  expect_valid(cfg);
  MaeModel model(cfg, 0);
  restore_params(ckpt, model.params());
  const auto chip = data::read_chip(a.chip, static_cast<std::size_t>(cfg.num_bands));
  check_chip_dims(chip, cfg, a.chip);

  const bool has_occlusion = chip.label && chip.label->kind == data::LabelKind::kOcclusion;
  std::string mode = a.mask_mode;
  if (mode == "auto") mode = has_occlusion && !a.mask_ratio ? "occlusion" : "random";
  if (mode == "occlusion" && !has_occlusion) throw UserError(a.chip + ": --mask occlusion needs an occlusion label");
  const auto tt = static_cast<std::size_t>(cfg.num_timesteps / cfg.patch_size.t);
  const auto gh = static_cast<std::size_t>(cfg.input_height / cfg.patch_size.h);
  const auto gw = static_cast<std::size_t>(cfg.input_width / cfg.patch_size.w);
  masking::MaskSpec spec;
  if (mode == "none") {
    spec = masking::MaskSpec::none(tt, gh, gw);
  } else if (mode == "occlusion") {
    spec = masking::mask_from_pixels(chip.label->classes, chip.height(), chip.width(), tt, 0,
                                     static_cast<std::size_t>(cfg.patch_size.h), static_cast<std::size_t>(cfg.patch_size.w));
  } else if (mode == "random") {
    spec = masking::generate_window_mask(tt, gh, gw, cfg.mask_ratio, a.seed);
  } else {
    throw UserError("--mask must be auto, random, occlusion or none");
  }
  const Tensor recon = reconstruct_one(model, chip.cube, spec);

  RunLock lock(a.out);
  const fs::path dir = a.out;
  write_triptychs(dir, "recon", chip.cube, spec, recon, cfg.patch_size, chip.band_names);
  masking::write_mask_bitmap(dir / "mask.sswm", spec);

  json report{{"checkpoint", a.checkpoint}, {"chip", a.chip}, {"seed", a.seed}, {"mask", mode},
              {"masked_tokens", spec.masked_total()}};
  const Tensor weight = train::masked_pixel_weights(
      Shape{1, chip.timesteps(), chip.height(), chip.width(), chip.bands()}, std::span(&spec, 1), cfg.patch_size);
  double se = 0, wsum = 0, se_all = 0;
  for (std::size_t i = 0; i < recon.size(); ++i) {
    const double d = static_cast<double>(recon[i]) - static_cast<double>(chip.cube[i]);
    se += static_cast<double>(weight[i]) * d * d;
    wsum += static_cast<double>(weight[i]);
    se_all += d * d;
  }
  report["mse_all"] = se_all / static_cast<double>(recon.size());
  if (wsum > 0) report["mse_masked"] = se / wsum;
  out << "reconstruction mse (all pixels): " << report["mse_all"].get<double>() << '\n';
  if (wsum > 0) out << "reconstruction mse (masked patches): " << report["mse_masked"].get<double>() << '\n';

  if (has_occlusion && chip.timesteps() >= 2) {
    // The scene is static, so frame 1 is the cloud-free reference for frame 0.
    const std::size_t h = chip.height(), w = chip.width(), b = chip.bands();
    std::vector<std::uint8_t> hole(h * w, 0);
    for (std::size_t gi = 0; gi < gh; ++gi)
      for (std::size_t gj = 0; gj < gw; ++gj)
        if (spec.at(0, gi, gj))
          for (std::size_t i = 0; i < static_cast<std::size_t>(cfg.patch_size.h); ++i)
            for (std::size_t j = 0; j < static_cast<std::size_t>(cfg.patch_size.w); ++j)
              hole[(gi * static_cast<std::size_t>(cfg.patch_size.h) + i) * w + gj * static_cast<std::size_t>(cfg.patch_size.w) + j] = 1;
    const Tensor baseline = data::bilinear_fill(chip.cube, 0, hole);
    double model_se = 0, base_se = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        if (!chip.label->classes[i * w + j]) continue;
        for (std::size_t c = 0; c < b; ++c) {
          const double truth = static_cast<double>(chip.cube.at({1, i, j, c}));
          const double dm = static_cast<double>(recon.at({0, i, j, c})) - truth;
          const double db = static_cast<double>(baseline.at({i, j, c})) - truth;
          model_se += dm * dm;
          base_se += db * db;
          ++n;
        }
      }
    if (n > 0) {
      report["infill_mse"] = model_se / static_cast<double>(n);
      report["bilinear_mse"] = base_se / static_cast<double>(n);
      out << "infill mse over occluded T0 pixels: " << report["infill_mse"].get<double>()
          << " (bilinear baseline " << report["bilinear_mse"].get<double>() << ")\n";
    }
  }
  write_json(dir / "report.json", report);
  write_json(dir / "config.json", {{"command", "reconstruct"}, {"checkpoint", a.checkpoint}, {"chip", a.chip},
                                   {"seed", a.seed}, {"mask", mode}, {"mask_ratio", cfg.mask_ratio}});
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hierarchical spatio-temporal masked autoencoder for satellite time series", "satswin"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate synthetic chips and a manifest");
  s->add_option("--kind", synth.kind, "textured-fields | moving-cloud | two-class-blobs | density-ramp")->required();
  s->add_option("--count", synth.count, "Number of chips");
  s->add_option("--dims", synth.dims, "TxHxWxB");
  s->add_option("--seed", synth.seed);
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--dtype", synth.dtype, "float32 | uint8");
  s->add_option("--val", synth.val, "Trailing chips assigned to the val split");
  s->add_option("--test", synth.test, "Chips after the val block assigned to the test split");

  TrainArgs pre;
  auto* p = app.add_subcommand("pretrain", "Masked-autoencoder pretraining");
  p->add_option("--config", pre.config)->required();
  p->add_option("--out", pre.out, "Run directory");
  p->add_option("--checkpoint", pre.checkpoint, "Resume from a pretraining checkpoint");
  p->add_option("--seed", pre.seed);
  p->add_option("--mask-ratio", pre.mask_ratio);
  p->add_flag("--dry-run", pre.dry_run, "Print the shape pipeline and parameter count");

  TrainArgs fine;
  auto* f = app.add_subcommand("finetune", "Finetune the UNet-style model on a labeled task");
  f->add_option("--config", fine.config)->required();
  f->add_option("--out", fine.out, "Run directory");
  f->add_option("--checkpoint", fine.checkpoint, "Pretraining checkpoint (or finetuning checkpoint to resume)");
  f->add_option("--seed", fine.seed);
  f->add_flag("--no-skip", fine.no_skip, "Disable skip connections");
  f->add_flag("--from-scratch", fine.from_scratch, "Random initialization instead of pretrained weights");
  f->add_flag("--dry-run", fine.dry_run, "Print the shape pipeline and parameter count");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate finetuned checkpoints");
  e->add_option("--checkpoint", ev.checkpoints, "Finetuned checkpoint; repeat for several rows")->required();
  e->add_option("--manifest", ev.manifest)->required();
  e->add_option("--split", ev.split);
  e->add_option("--out", ev.out, "Directory for metrics.csv and table.txt");

  ReconstructArgs rec;
  auto* r = app.add_subcommand("reconstruct", "Dump original / masked / reconstructed images");
  r->add_option("--checkpoint", rec.checkpoint)->required();
  r->add_option("--chip", rec.chip)->required();
  r->add_option("--seed", rec.seed);
  r->add_option("--out", rec.out)->required();
  r->add_option("--mask-ratio", rec.mask_ratio);
  r->add_option("--mask", rec.mask_mode, "auto | random | occlusion | none");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (!reversed.empty()) reversed.pop_back();  // program name
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& pe) {
    const int code = app.exit(pe, out, err);
    return code == 0 ? kExitOk : kExitUser;
  }
  try {
    if (s->parsed()) return cmd_synth(synth, out);
    if (p->parsed()) return cmd_pretrain(pre, out);
    if (f->parsed()) return cmd_finetune(fine, out);
    if (e->parsed()) return cmd_eval(ev, out);
    if (r->parsed()) return cmd_reconstruct(rec, out);
  } catch (const ConfigError& ce) {
    err << "error: invalid configuration\n";
    for (const auto& v : ce.violations()) err << "  - " << v << '\n';
    return kExitUser;
  } catch (const UserError& ue) {
    err << "error: " << ue.what() << '\n';
    return kExitUser;
  } catch (const FormatError& fe) {
    err << "error: " << fe.what() << '\n';
    return kExitUser;
  } catch (const std::exception& ex) {
    err << "internal error: " << ex.what() << '\n';
    return kExitInternal;
  }
  return kExitInternal;
}

int run_cli(int argc, char** argv) {
  return run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}

}  // namespace cli
SATSWIN_NAMESPACE_END
