// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>

#include "satswin/errors.hpp"
#include "satswin/ops.hpp"
#include "satswin/training.hpp"
#include "support/fixtures.hpp"

using namespace satswin;
using namespace satswin::train;
using testing::random_tensor;

namespace {

ModelConfig tiny_mae_config(std::int64_t hw = 16) {
  ModelConfig cfg = testing::micro_config();
  cfg.patch_size = {1, 4, 4};
  cfg.input_height = cfg.input_width = hw;
  cfg.window = {2, 4, 4};
  cfg.embed_dim = 32;
  cfg.head_dim = 16;
  cfg.stage_heads = {2, 4};
  return cfg;
}

std::vector<Tensor> textured(const ModelConfig& cfg, std::size_t count, std::uint64_t seed) {
  std::vector<Tensor> out;
  data::SynthDims d{std::size_t(cfg.num_timesteps), std::size_t(cfg.input_height), std::size_t(cfg.input_width),
                    std::size_t(cfg.num_bands)};
  for (std::size_t i = 0; i < count; ++i) out.push_back(data::synth_chip(data::SynthKind::kTexturedFields, d, seed, i).cube);
  return out;
}

// Blob labels with every band at 0.25 + 0.5 * label plus noise: separable per pixel.
std::vector<LabeledSample> separable_task(const ModelConfig& cfg, std::size_t count) {
  std::vector<LabeledSample> out;
  const data::SynthDims d{std::size_t(cfg.num_timesteps), std::size_t(cfg.input_height),
                          std::size_t(cfg.input_width), std::size_t(cfg.num_bands)};
  for (std::size_t i = 0; i < count; ++i) {
    auto chip = data::synth_chip(data::SynthKind::kTwoClassBlobs, d, 77, i);
    LabeledSample s;
    s.label = *chip.label;
    s.cube = random_tensor({d.t, d.h, d.w, d.b}, 500 + i, -0.1, 0.1);
    for (std::size_t t = 0; t < d.t; ++t)
      for (std::size_t p = 0; p < d.h * d.w; ++p)
        for (std::size_t b = 0; b < d.b; ++b) s.cube[(t * d.h * d.w + p) * d.b + b] += Real(0.25 + 0.5 * s.label.classes[p]);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

TEST_CASE("mae loss: zero on a perfect reconstruction, one on a unit offset") {
  const Tensor target = random_tensor({1, 1, 8, 8, 2}, 1);
  masking::MaskSpec one = masking::MaskSpec::none(1, 2, 2);
  one.mask[3] = 1;
  CHECK(double(mae_loss(Var(target), target, std::span(&one, 1), {1, 4, 4}).value()[0]) == 0.0);
  Tensor shifted = target;
  for (auto& v : shifted.storage()) v += 1;
  CHECK(double(mae_loss(Var(shifted), target, std::span(&one, 1), {1, 4, 4}).value()[0]) ==
        doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("mae loss equals a loop over the masked patch") {
  const Tensor pred = random_tensor({1, 1, 8, 8, 2}, 2);
  const Tensor target = random_tensor({1, 1, 8, 8, 2}, 3);
  masking::MaskSpec one = masking::MaskSpec::none(1, 2, 2);
  one.mask[1] = 1;  // token (0, 1): rows 0..3, cols 4..7
  double s = 0;
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 4; x < 8; ++x)
      for (std::size_t b = 0; b < 2; ++b) {
        const double d = double(pred.at({0, 0, y, x, b})) - double(target.at({0, 0, y, x, b}));
        s += d * d;
      }
  CHECK(double(mae_loss(Var(pred), target, std::span(&one, 1), {1, 4, 4}).value()[0]) ==
        doctest::Approx(s / 32).epsilon(1e-5));
  double all = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) all += (double(pred[i]) - target[i]) * (double(pred[i]) - target[i]);
  CHECK(double(mae_loss(Var(pred), target, std::span(&one, 1), {1, 4, 4}, true).value()[0]) ==
        doctest::Approx(all / double(pred.size())).epsilon(1e-5));
}

TEST_CASE("mae loss rejects empty masks and shape mismatches") {
  const Tensor t({1, 1, 8, 8, 2});
  const auto none = masking::MaskSpec::none(1, 2, 2);
  CHECK_THROWS(mae_loss(Var(t), t, std::span(&none, 1), {1, 4, 4}));
  masking::MaskSpec one = none;
  one.mask[0] = 1;
  CHECK_THROWS(mae_loss(Var(Tensor({1, 1, 8, 4, 2})), t, std::span(&one, 1), {1, 4, 4}));
}

TEST_CASE("mae loss is non-negative and blind to unmasked pixels") {
  Var pred(random_tensor({2, 2, 8, 8, 3}, 4), true);
  const Tensor target = random_tensor({2, 2, 8, 8, 3}, 5);
  std::vector<masking::MaskSpec> specs{masking::generate_window_mask(2, 2, 2, 0.5, 1),
                                       masking::generate_window_mask(2, 2, 2, 0.5, 2)};
  Var loss = mae_loss(pred, target, specs, {1, 4, 4});
  CHECK(loss.value()[0] >= 0);
  backward(loss);
  const Tensor g = pred.grad();
  const Tensor w = masked_pixel_weights(pred.shape(), specs, {1, 4, 4});
  std::size_t zero = 0;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (w[i] == 0) {
      CHECK(g[i] == 0);
      ++zero;
    }
  CHECK(zero == g.size() / 2);
}

TEST_CASE("schedule: start, peak, floor and shape") {
  ScheduleConfig s;
  s.max_lr = 1e-5;
  s.total_steps = 1000;
  CHECK(warmup_steps(s) == 100);
  CHECK(lr_at(0, s) == doctest::Approx(1e-5 / 25));
  CHECK(lr_at(100, s) == 1e-5);
  CHECK(lr_at(1000, s) == doctest::Approx(1e-9));
  double prev = 0, max_jump = 0;
  for (std::size_t k = 0; k <= 1000; ++k) {
    const double lr = lr_at(k, s);
    CHECK(lr >= 0);
    if (k > 0 && k <= 100) CHECK(lr >= prev);
    if (k > 100) CHECK(lr <= prev);
    if (k > 0) max_jump = std::max(max_jump, std::abs(lr - prev));
    prev = lr;
  }
  // warmup slope (1 - 1/25) / 100 steps dominates the cosine slope pi / (2 * 900)
  CHECK(max_jump <= s.max_lr * 10.0 / double(s.total_steps));
  CHECK_THROWS(lr_at(1001, s));
  s.warmup_fraction = 1.0;
  CHECK(!validate_schedule(s).empty());
}

TEST_CASE("adamw: zero gradient without decay keeps parameters") {
  Var p(random_tensor({4}, 1), true);
  const Tensor before = p.value();
  OptimState st;
  st.hp.weight_decay = 0;
  p.accumulate_grad(Tensor({4}));
  const ParamRef ref{"p", p};
  adamw_step(std::span(&ref, 1), st, 0.1);
  CHECK(bitwise_equal(p.value(), before));
  CHECK(st.step == 1);
}

TEST_CASE("adamw: first step moves by lr against the gradient sign") {
  for (double g : {0.3, -2.0, 1e-3}) {
    Var p(Tensor({1}, Real(0.5)), true);
    p.accumulate_grad(Tensor({1}, Real(g)));
    OptimState st;
    st.hp.weight_decay = 0;
    const ParamRef ref{"p", p};
    adamw_step(std::span(&ref, 1), st, 0.01);
    CHECK(double(p.value()[0]) == doctest::Approx(0.5 - 0.01 * (g > 0 ? 1 : -1)).epsilon(1e-5));
  }
}

TEST_CASE("adamw: decoupled decay shrinks by (1 - lr wd)") {
  Var p(Tensor({3}, {1.0f, -2.0f, 0.5f}), true);
  OptimState st;
  st.hp.weight_decay = 0.1;
  const ParamRef ref{"p", p};
  adamw_step(std::span(&ref, 1), st, 0.5);  // no gradient at all: g = 0
  CHECK(double(p.value()[0]) == doctest::Approx(0.95));
  CHECK(double(p.value()[1]) == doctest::Approx(-1.9));
}

TEST_CASE("adamw: non-finite gradients abort before any update") {
  Var a(Tensor({2}, 1), true), b(Tensor({2}, 1), true);
  a.accumulate_grad(Tensor({2}, 0.5));
  Tensor bad({2}, 0.5);
  bad[1] = std::numeric_limits<Real>::quiet_NaN();
  b.accumulate_grad(bad);
  OptimState st;
  std::vector<ParamRef> ps{{"layer.a", a}, {"layer.b", b}};
  try {
    adamw_step(ps, st, 0.1);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("layer.b") != std::string::npos);
  }
  CHECK(a.value()[0] == 1);
  CHECK(st.step == 0);
  CHECK(st.moments.empty());
}

TEST_CASE("adamw: update independent of parameter order") {
  auto run = [](bool reversed) {
    Var a(random_tensor({3}, 1), true), b(random_tensor({5}, 2), true);
    OptimState st;
    std::vector<ParamRef> ps{{"a", a}, {"b", b}};
    if (reversed) std::reverse(ps.begin(), ps.end());
    for (int k = 0; k < 3; ++k) {
      a.zero_grad();
      b.zero_grad();
      a.accumulate_grad(random_tensor({3}, 10 + k));
      b.accumulate_grad(random_tensor({5}, 20 + k));
      adamw_step(ps, st, 0.01);
    }
    return std::make_pair(a.value(), b.value());
  };
  const auto x = run(false), y = run(true);
  CHECK(bitwise_equal(x.first, y.first));
  CHECK(bitwise_equal(x.second, y.second));
}

TEST_CASE("batch indices and masks are pure functions of (seed, step)") {
  CHECK(batch_indices(3, 7, 4, 10) == batch_indices(3, 7, 4, 10));
  CHECK(batch_indices(3, 7, 4, 10) != batch_indices(3, 8, 4, 10));
  for (auto i : batch_indices(1, 2, 64, 5)) CHECK(i < 5);
  const auto cfg = tiny_mae_config();
  CHECK(step_masks(cfg, 1, 2, 3) == step_masks(cfg, 1, 2, 3));
  const auto m = step_masks(cfg, 1, 2, 3);
  CHECK(m.size() == 3);
  CHECK(m[0].mask != m[1].mask);
}

TEST_CASE("pretrain is deterministic and resumes exactly") {
  const auto cfg = tiny_mae_config();
  const auto cubes = textured(cfg, 3, 1);
  LoopConfig loop;
  loop.steps = 12;
  loop.batch_size = 2;
  loop.schedule.max_lr = 1e-3;
  loop.seed = 4;
  MaeModel a(cfg, 1), b(cfg, 1);
  OptimState sa, sb;
  const auto la = pretrain(a, cubes, loop, sa);
  const auto lb = pretrain(b, cubes, loop, sb);
  CHECK(la == lb);
  REQUIRE(la.size() == 12);

  testing::TempDir dir("resume");
  MaeModel c(cfg, 1);
  OptimState sc;
  std::vector<double> first = pretrain(c, cubes, loop, sc, {nullptr, [](std::size_t done) { return done == 5; }});
  CHECK(first.size() == 5);
  Checkpoint ck;
  ck.kind = "mae";
  ck.config = cfg;
  ck.step = sc.step;
  store_params(ck, c.params());
  store_optim(ck, sc);
  save_checkpoint(dir / "mid.ckpt", ck);

  const Checkpoint back = load_checkpoint(dir / "mid.ckpt");
  MaeModel d(back.config, 99);
  restore_params(back, d.params());
  OptimState sd = restore_optim(back, loop.optim);
  CHECK(sd.step == 5);
  const auto rest = pretrain(d, cubes, loop, sd);
  first.insert(first.end(), rest.begin(), rest.end());
  CHECK(first == la);
  for (const auto& e : a.params().entries()) CHECK(bitwise_equal(e.var.value(), d.params().get(e.name).value()));
}

TEST_CASE("pretrain overfits a single chip") {
  const auto cfg = tiny_mae_config(64);
  const auto cubes = textured(cfg, 1, 2);
  LoopConfig loop;
  loop.steps = 200;
  loop.schedule.max_lr = 3e-3;
  loop.optim.weight_decay = 0;
  MaeModel m(cfg, 3);
  OptimState st;
  const auto losses = pretrain(m, cubes, loop, st);
  double tail = 0;
  for (std::size_t k = 190; k < 200; ++k) tail += losses[k] / 10;
  CHECK(tail < 0.1 * losses[0]);
}

TEST_CASE("a lighter mask is an easier task") {
  auto cfg = tiny_mae_config(64);
  const auto cubes = textured(cfg, 2, 3);
  LoopConfig loop;
  loop.steps = 60;
  loop.schedule.max_lr = 3e-3;
  auto tail_loss = [&](double ratio) {
    cfg.mask_ratio = ratio;
    MaeModel m(cfg, 5);
    OptimState st;
    const auto l = pretrain(m, cubes, loop, st);
    double s = 0;
    for (std::size_t k = 40; k < 60; ++k) s += l[k] / 20;
    return s;
  };
  CHECK(tail_loss(0.01) < tail_loss(0.9));
}

TEST_CASE("finetune separates a threshold task and freezing keeps the encoder") {
  auto cfg = tiny_mae_config();
  const auto samples = separable_task(cfg, 4);
  TaskConfig task;
  task.num_classes = 2;
  LoopConfig loop;
  loop.steps = 300;
  loop.schedule.max_lr = 1e-2;
  UnetModel m(cfg, task, 1);
  OptimState st;
  finetune(m, samples, loop, st);
  const auto res = evaluate(m, samples);
  REQUIRE(res.confusion);
  CHECK(res.confusion->miou() > 0.9);

  UnetModel frozen(cfg, task, 2);
  std::vector<Tensor> before;
  for (const auto& e : frozen.params().entries())
    if (e.name.rfind("encoder.", 0) == 0) before.push_back(e.var.value());
  LoopConfig short_loop = loop;
  short_loop.steps = 5;
  short_loop.freeze_encoder = true;
  OptimState st2;
  finetune(frozen, samples, short_loop, st2);
  std::size_t k = 0, changed = 0;
  for (const auto& e : frozen.params().entries()) {
    if (e.name.rfind("encoder.", 0) == 0) CHECK(bitwise_equal(e.var.value(), before[k++]));
    else if (e.name == "unet.head.weight") changed += !bitwise_equal(e.var.value(), UnetModel(cfg, task, 2).params().get(e.name).value());
  }
  CHECK(changed == 1);
}

TEST_CASE("task loss rejects mismatched labels") {
  auto cfg = tiny_mae_config();
  TaskConfig task;
  UnetModel m(cfg, task, 1);
  auto samples = separable_task(cfg, 1);
  samples[0].label.h = 8;
  samples[0].label.classes.resize(8 * 16);
  const LabeledSample* p = &samples[0];
  Var out = m.forward(Var(samples[0].cube.reshaped({1, 2, 16, 16, 2})));
  CHECK_THROWS_AS(task_loss(out, std::span(&p, 1), task), ShapeError);
}

TEST_CASE("regression task loss is plain MSE on raw outputs") {
  Tensor raw({1, 1, 1, 2, 1}, {120.0f, -10.0f});
  LabeledSample s;
  s.label = data::LabelMap{data::LabelKind::kRegression, 1, 1, 2, {}, {100.0f, 0.0f}};
  const LabeledSample* p = &s;
  TaskConfig task;
  task.kind = TaskKind::kRegression;
  CHECK(double(task_loss(Var(raw), std::span(&p, 1), task).value()[0]) == doctest::Approx(250.0));
}

TEST_CASE("loop config JSON round trip") {
  LoopConfig loop;
  loop.steps = 77;
  loop.batch_size = 3;
  loop.schedule.max_lr = 2e-4;
  loop.schedule.warmup_fraction = 0.2;
  loop.optim.weight_decay = 0.01;
  loop.class_weights = {1.0, 3.0};
  loop.freeze_encoder = true;
  const auto j = to_json(loop);
  const auto back = loop_config_from_json(j);
  CHECK(to_json(back).dump() == j.dump());
  auto bad = j;
  bad["schedule"]["peak"] = 1;
  CHECK_THROWS_AS(loop_config_from_json(bad), FormatError);
}
