// SPDX-License-Identifier: Apache-2.0
#include <cstdio>
#include <cstring>
#include <memory>

#include "acceptance.hpp"
#include "satswin/data_io.hpp"
#include "satswin/model.hpp"
#include "satswin/training.hpp"

using namespace satswin;

namespace acceptance {

namespace {

const data::SynthDims kDims{3, 64, 64, 6};

ModelConfig two_stage(std::int64_t width) {
  ModelConfig cfg;
  cfg.patch_size = {1, 4, 4};
  cfg.embed_dim = width;
  cfg.stage_depths = {2, 2};
  cfg.stage_heads = {width / 16, width / 8};
  cfg.head_dim = 16;
  cfg.window = {3, 4, 4};
  cfg.num_bands = 6;
  cfg.num_timesteps = 3;
  cfg.input_height = 64;
  cfg.input_width = 64;
  cfg.decoder_depths = {1};
  cfg.mask_ratio = 0.75;
  return cfg;
}

bool same_bits(const ParamStore& a, const ParamStore& b) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Tensor& x = a.entries()[i].var.value();
    const Tensor& y = b.entries()[i].var.value();
    if (x.shape() != y.shape() || std::memcmp(x.data(), y.data(), x.size() * sizeof(Real)) != 0) return false;
  }
  return true;
}

// Masked MSE of the model over `cubes`, each under its own fixed mask.
double masked_mse(const MaeModel& model, const std::vector<Tensor>& cubes, const std::vector<masking::MaskSpec>& masks) {
  NoGradGuard no_grad;
  double sum = 0;
  for (std::size_t i = 0; i < cubes.size(); ++i) {
    Shape s{1};
    s.insert(s.end(), cubes[i].shape().begin(), cubes[i].shape().end());
    const Tensor cube = cubes[i].reshaped(s);
    const Var pred = model.forward(Var(cube), std::span(&masks[i], 1));
    sum += double(train::mae_loss(pred, cube, std::span(&masks[i], 1), model.config().patch_size).value()[0]);
  }
  return sum / double(cubes.size());
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

struct BlobData {
  std::vector<Tensor> cubes;
  std::vector<train::LabeledSample> train, val;
};

BlobData blob_data() {
  BlobData d;
  for (std::size_t i = 0; i < 64; ++i) {
    auto chip = data::synth_chip(data::SynthKind::kTwoClassBlobs, kDims, 21, i);
    d.cubes.push_back(chip.cube);
    d.train.push_back({chip.cube, *chip.label});
  }
  for (std::size_t i = 0; i < 16; ++i) {
    auto chip = data::synth_chip(data::SynthKind::kTwoClassBlobs, kDims, 21, 1000 + i);
    d.val.push_back({chip.cube, *chip.label});
  }
  return d;
}

std::unique_ptr<MaeModel> pretrained_on(const ModelConfig& cfg, const std::vector<Tensor>& cubes) {
  auto mae = std::make_unique<MaeModel>(cfg, 1);
  train::LoopConfig loop;
  loop.steps = 300;
  loop.batch_size = 2;
  loop.schedule.max_lr = 2e-3;
  loop.seed = 3;
  train::OptimState state;
  train::pretrain(*mae, cubes, loop, state);
  return mae;
}

train::LoopConfig finetune_loop(std::uint64_t seed) {
  train::LoopConfig loop;
  loop.steps = 200;
  loop.batch_size = 2;
  loop.schedule.max_lr = 1e-3;
  loop.seed = 50 + seed;
  return loop;
}

}  // namespace

Outcome overfit() {
  const ModelConfig cfg = two_stage(32);
  std::vector<Tensor> cubes;
  for (std::size_t i = 0; i < 4; ++i) cubes.push_back(data::synth_chip(data::SynthKind::kTexturedFields, kDims, 7, i).cube);
  std::vector<masking::MaskSpec> probe;
  for (std::size_t i = 0; i < cubes.size(); ++i) probe.push_back(masking::generate_window_mask(3, 16, 16, 0.75, 900 + i));

  train::LoopConfig loop;
  loop.steps = 500;
  loop.schedule.max_lr = 2e-3;
  loop.seed = 3;
  MaeModel a(cfg, 1), b(cfg, 1);
  const std::size_t params = a.params().scalar_count();
  const double before = masked_mse(a, cubes, probe);
  train::OptimState sa, sb;
  const auto la = train::pretrain(a, cubes, loop, sa);
  const double after = masked_mse(a, cubes, probe);
  const auto lb = train::pretrain(b, cubes, loop, sb);
  const bool repeat = la == lb && same_bits(a.params(), b.params());
  const double ratio = after / before;
  return {params <= 200000 && ratio < 0.1 && repeat,
          fmt("%.0f params, 4 textured chips, 500 steps; fixed-mask masked MSE %.4g -> %.4g (ratio %.3f < 0.1)", double(params),
              before, after, ratio) +
              (repeat ? "; repeat run bitwise identical" : "; repeat run DIFFERS")};
}

Outcome temporal_infill() {
  ModelConfig cfg = two_stage(48);
  cfg.stage_depths = {2};
  cfg.stage_heads = {3};
  cfg.decoder_depths = {};
  std::vector<Tensor> cubes;
  for (std::size_t i = 0; i < 8; ++i) cubes.push_back(data::synth_chip(data::SynthKind::kMovingCloud, kDims, 11, i).cube);
  MaeModel model(cfg, 1);
  train::LoopConfig loop;
  loop.steps = 4000;
  loop.schedule.max_lr = 3e-3;
  loop.seed = 5;
  train::OptimState state;
  train::pretrain(model, cubes, loop, state);

  const std::size_t h = kDims.h, w = kDims.w, ph = 4, pw = 4, gw = w / pw;
  double model_se = 0, base_se = 0, n = 0;
  for (std::size_t k = 0; k < 8; ++k) {
    const std::size_t index = 1000 + k;
    const auto chip = data::synth_chip(data::SynthKind::kMovingCloud, kDims, 11, index);
    const Tensor truth = data::moving_cloud_base(kDims, 11, index);
    const auto& cloud = chip.label->classes;
    // every T0 token that touches the cloud is hidden from the model and from the baseline
    masking::MaskSpec spec = masking::mask_from_pixels(cloud, h, w, 3, 0, ph, pw);
    std::vector<std::uint8_t> hole(h * w, 0);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) hole[y * w + x] = spec.mask[(y / ph) * gw + x / pw];
    const Tensor baseline = data::bilinear_fill(chip.cube, 0, hole);
    NoGradGuard no_grad;
    const Tensor recon = model.forward(Var(chip.cube.reshaped({1, 3, h, w, 6})), std::span(&spec, 1)).value();
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        if (!cloud[y * w + x]) continue;
        for (std::size_t b = 0; b < 6; ++b) {
          const double t = double(truth.at({0, y, x, b}));
          const double dm = double(recon.at({0, 0, y, x, b})) - t;
          const double db = double(baseline.at({y, x, b})) - t;
          model_se += dm * dm;
          base_se += db * db;
          n += 1;
        }
      }
  }
  const double ratio = model_se / base_se;
  return {ratio < 0.5, fmt("8 held-out chips, occluded-at-T0 MSE model %.4g vs bilinear %.4g (ratio %.3f < 0.5)",
                           model_se / n, base_se / n, ratio)};
}

Outcome transfer_benefit() {
  const ModelConfig cfg = two_stage(32);
  const BlobData d = blob_data();
  const auto mae = pretrained_on(cfg, d.cubes);
  int wins = 0;
  std::string runs;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    std::size_t reached[2];
    for (int pre = 0; pre < 2; ++pre) {
      UnetModel m(cfg, TaskConfig{}, 100 + seed);
      if (pre) transfer_weights(mae->params(), cfg, m);
      const auto loop = finetune_loop(seed);
      std::size_t first = loop.steps + 1;
      train::Hooks hooks;
      hooks.after_step = [&](std::size_t done) {
        if (first > loop.steps && done % 10 == 0 && train::evaluate(m, d.val).confusion->miou() >= 0.85) first = done;
        return first <= loop.steps;
      };
      train::OptimState state;
      train::finetune(m, d.train, loop, state, hooks);
      reached[pre] = first;
    }
    wins += reached[1] < reached[0];
    runs += (seed ? ", " : "") + std::to_string(reached[1]) + " vs " + std::to_string(reached[0]);
  }
  return {wins >= 2, "steps to mIoU 0.85 (pretrained vs scratch, 201 = never): " + runs + "; pretrained faster in " +
                         std::to_string(wins) + "/3 seeds"};
}

Outcome skip_ablation() {
  const ModelConfig cfg = two_stage(32);
  const BlobData d = blob_data();
  const auto mae = pretrained_on(cfg, d.cubes);
  int holds = 0;
  std::string runs;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    double miou[2];
    for (int skip = 0; skip < 2; ++skip) {
      TaskConfig task;
      task.skip_connections = skip == 1;
      UnetModel m(cfg, task, 100 + seed);
      transfer_weights(mae->params(), cfg, m);
      train::OptimState state;
      train::finetune(m, d.train, finetune_loop(seed), state);
      miou[skip] = train::evaluate(m, d.val).confusion->miou();
    }
    holds += miou[1] >= miou[0];
    runs += fmt(seed ? ", %.4f vs %.4f" : "%.4f vs %.4f", miou[1], miou[0]);
  }
  return {holds == 3, "held-out mIoU with skips vs --no-skip: " + runs};
}

}  // namespace acceptance
