// SPDX-License-Identifier: Apache-2.0
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "acceptance.hpp"
#include "satswin/checkpoint.hpp"
#include "satswin/data_io.hpp"
#include "satswin/metrics.hpp"
#include "satswin/model.hpp"
#include "satswin/training.hpp"
#include "support/fixtures.hpp"

using namespace satswin;

namespace acceptance {

namespace {

bool bitwise(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.data(), b.data(), a.size() * sizeof(Real)) == 0;
}

Shape cube_shape(const ModelConfig& cfg, std::size_t n) {
  return {n, std::size_t(cfg.num_timesteps), std::size_t(cfg.input_height), std::size_t(cfg.input_width),
          std::size_t(cfg.num_bands)};
}

}  // namespace

Outcome metric_oracle() {
  const auto cm = metrics::ConfusionMatrix::from_counts({{3, 1}, {2, 4}});
  const bool exact = cm.iou(0) == 3.0 / 6.0 && cm.iou(1) == 4.0 / 7.0 && cm.miou() == (3.0 / 6.0 + 4.0 / 7.0) / 2 &&
                     cm.macc() == (3.0 / 4.0 + 4.0 / 6.0) / 2 && cm.overall_acc() == 7.0 / 10.0;

  // brute force: a direct per-pixel loop over every class
  CounterRng rng(31);
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t k = 2 + rng.below(6), n = 32 * 32;
    std::vector<std::int32_t> truth(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      truth[i] = std::int32_t(rng.below(k));
      pred[i] = rng.uniform() < 0.5 ? truth[i] : std::int32_t(rng.below(k));
    }
    metrics::ConfusionMatrix m(k);
    m.accumulate(pred, truth);
    double iou = 0, acc = 0, present = 0, correct = 0;
    for (std::size_t c = 0; c < k; ++c) {
      double tp = 0, fp = 0, fn = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const bool t = truth[i] == std::int32_t(c), p = pred[i] == std::int32_t(c);
        tp += t && p;
        fp += !t && p;
        fn += t && !p;
      }
      if (tp + fn == 0) continue;
      iou += tp / (tp + fp + fn);
      acc += tp / (tp + fn);
      present += 1;
    }
    for (std::size_t i = 0; i < n; ++i) correct += truth[i] == pred[i];
    worst = std::max({worst, std::abs(m.miou() - iou / present), std::abs(m.macc() - acc / present),
                      std::abs(m.overall_acc() - correct / double(n))});
  }
  char buf[200];
  std::snprintf(buf, sizeof buf, "cm [[3,1],[2,4]] %s; 20 random 32x32 label maps vs per-pixel loop, max |diff| %.1e",
                exact ? "exact" : "MISMATCH", worst);
  return {exact && worst < 1e-12, buf};
}

Outcome mask_invariants() {
  // per-slice counts, including the canonical 56x56 lattice
  bool counts = true;
  struct Lattice { std::size_t t, gh, gw; double ratio; };
  for (const Lattice& l : {Lattice{3, 56, 56, 0.75}, Lattice{3, 56, 56, 0.9}, Lattice{2, 7, 9, 0.3}, Lattice{5, 16, 16, 0.5}}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto spec = masking::generate_window_mask(l.t, l.gh, l.gw, l.ratio, seed);
      const auto want = masking::masked_per_slice(l.ratio, l.gh, l.gw);
      for (std::size_t ti = 0; ti < l.t; ++ti) counts &= spec.masked_in_slice(ti) == want;
    }
  }
  counts &= masking::masked_per_slice(0.75, 56, 56) == 2352;

  // all-false mask against the unmasked forward pass
  const ModelConfig cfg = testing::micro_config();
  MaeModel model(cfg, 3);
  const Tensor cube = testing::random_tensor(cube_shape(cfg, 2), 4, 0, 1);
  const auto none = masking::MaskSpec::none(2, 4, 4);
  const std::vector<masking::MaskSpec> nones{none, none};
  bool same;
  {
    NoGradGuard no_grad;
    same = bitwise(model.forward(Var(cube), {}).value(), model.forward(Var(cube), nones).value());
  }

  // mask-token gradient: zero with nothing masked, nonzero once something is
  const auto grad_norm = [&](const std::vector<masking::MaskSpec>& specs) {
    model.params().zero_grad();
    backward(train::mae_loss(model.forward(Var(cube), specs), cube, specs, cfg.patch_size, true));
    const Var& token = model.encoder().mask_token;
    if (!token.has_grad()) return 0.0;
    double s = 0;
    const Tensor g = token.grad();
    for (std::size_t i = 0; i < g.size(); ++i) s += std::abs(double(g[i]));
    return s;
  };
  const double zero = grad_norm(nones);
  const auto some = masking::generate_window_mask(2, 4, 4, 0.5, 9);
  const double control = grad_norm({some, some});

  char buf[256];
  std::snprintf(buf, sizeof buf,
                "per-slice counts %s (2352 of 3136 at ratio 0.75); all-false mask %s unmasked pass; mask-token |grad| "
                "%.1e with all-false masks (control %.2e)",
                counts ? "exact" : "WRONG", same ? "bitwise equals" : "DIFFERS from", zero, control);
  return {counts && same && zero == 0 && control > 0, buf};
}

Outcome round_trips() {
  testing::TempDir dir("acceptance_io");
  // SSWC
  data::Chip chip = data::synth_chip(data::SynthKind::kTwoClassBlobs, {3, 32, 32, 6}, 5, 0);
  data::write_chip(dir / "chip.sswc", chip);
  const data::Chip back = data::read_chip(dir / "chip.sswc", 6);
  const bool sswc = bitwise(chip.cube, back.cube) && back.label && *back.label == *chip.label &&
                    back.band_names == chip.band_names;

  // checkpoints: forward outputs before and after
  const ModelConfig cfg = testing::micro_config();
  const TaskConfig task;
  const Tensor cube = testing::random_tensor(cube_shape(cfg, 2), 6, 0, 1);
  MaeModel mae(cfg, 7);
  UnetModel unet(cfg, task, 8);
  Checkpoint c1{"mae", cfg, std::nullopt, 3, nlohmann::json::object(), {}};
  store_params(c1, mae.params());
  save_checkpoint(dir / "mae.ckpt", c1);
  Checkpoint c2{"unet", cfg, task, 4, nlohmann::json::object(), {}};
  store_params(c2, unet.params());
  save_checkpoint(dir / "unet.ckpt", c2);
  MaeModel mae2(cfg, 99);
  UnetModel unet2(cfg, task, 98);
  const auto l1 = load_checkpoint(dir / "mae.ckpt");
  const auto l2 = load_checkpoint(dir / "unet.ckpt");
  restore_params(l1, mae2.params());
  restore_params(l2, unet2.params());
  const auto spec = masking::generate_window_mask(2, 4, 4, 0.5, 1);
  const std::vector<masking::MaskSpec> specs{spec, spec};
  bool ckpt;
  {
    NoGradGuard no_grad;
    ckpt = bitwise(mae.forward(Var(cube), specs).value(), mae2.forward(Var(cube), specs).value()) &&
           bitwise(unet.forward(Var(cube)).value(), unet2.forward(Var(cube)).value()) && l1.config == cfg &&
           l2.task && *l2.task == task && l1.step == 3;
  }

  // configs: to_json -> from_json -> to_json is stable and reproduces the struct
  ModelConfig mc = ModelConfig::swin_base();
  mc.mask_ratio = 0.6;
  mc.mlp_ratio = 3.5;
  TaskConfig tc;
  tc.kind = TaskKind::kRegression;
  tc.out_timesteps = 2;
  tc.skip_connections = false;
  train::LoopConfig lc;
  lc.steps = 77;
  lc.schedule.max_lr = 3.25e-4;
  lc.class_weights = {1.0, 2.5};
  const auto mj = to_json(mc), tj = to_json(tc), lj = train::to_json(lc);
  const ModelConfig mc2 = model_config_from_json(nlohmann::json::parse(mj.dump()));
  const TaskConfig tc2 = task_config_from_json(nlohmann::json::parse(tj.dump()));
  const train::LoopConfig lc2 = train::loop_config_from_json(nlohmann::json::parse(lj.dump()));
  const bool config = mc2 == mc && tc2 == tc && to_json(mc2).dump() == mj.dump() && to_json(tc2).dump() == tj.dump() &&
                      train::to_json(lc2).dump() == lj.dump();

  std::string detail = std::string("SSWC ") + (sswc ? "bit-exact" : "MISMATCH") + "; checkpoint reload " +
                       (ckpt ? "reproduces MAE and UNet outputs bitwise" : "CHANGES outputs") + "; config JSON " +
                       (config ? "round trip stable" : "round trip UNSTABLE");
  return {sswc && ckpt && config, detail};
}

}  // namespace acceptance
