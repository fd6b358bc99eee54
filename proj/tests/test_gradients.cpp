// SPDX-License-Identifier: Apache-2.0
// Finite-difference checks; built against the float64 library.
#include <doctest.h>

#include "satswin/masking.hpp"
#include "satswin/model.hpp"
#include "satswin/ops.hpp"
#include "satswin/patching.hpp"
#include "satswin/training.hpp"
#include "support/block_fixtures.hpp"
#include "support/gradcheck.hpp"

using namespace satswin;
using testing::gradcheck;
using testing::probe_loss;
using testing::random_tensor;

static_assert(sizeof(Real) == 8, "gradient checks need the float64 build");

namespace {

Var param(const Shape& s, std::uint64_t seed, double lo = -1, double hi = 1) {
  return Var(random_tensor(s, seed, lo, hi), true);
}

void require_ok(const testing::GradcheckReport& r) {
  INFO(r.summary());
  CHECK(r.ok());
  CHECK(r.checked() > 0);
}

}  // namespace

TEST_CASE("gradient: linear, layer norm, gelu") {
  Var x = param({2, 3, 5}, 1);
  Var w = param({5, 4}, 2), b = param({4}, 3);
  Var g = param({4}, 4, 0.5, 1.5), be = param({4}, 5);
  require_ok(gradcheck([&] { return probe_loss(gelu(layer_norm(linear(x, w, b), g, be)), 6); },
                       {{"x", x}, {"w", w}, {"b", b}, {"gamma", g}, {"beta", be}}));
}

TEST_CASE("gradient: patch partition and embedding") {
  Var cube = param({1, 2, 4, 4, 2}, 10, 0, 1);
  patching::EmbedWeights e{param({8, 6}, 11), param({6}, 12)};
  require_ok(gradcheck(
      [&] { return probe_loss(patching::linear_embed(patching::patch_partition(cube, {1, 2, 2}), e), 13); },
      {{"cube", cube}, {"embed.matrix", e.matrix}, {"embed.bias", e.bias}}));
}

TEST_CASE("gradient: patch merge with norm") {
  Var grid = param({1, 2, 4, 4, 2}, 20);
  patching::MergeWeights m{param({8}, 21, 0.5, 1.5), param({8}, 22), param({8, 4}, 23)};
  require_ok(gradcheck([&] { return probe_loss(patching::patch_merge(grid, m), 24); },
                       {{"grid", grid}, {"norm.gamma", m.norm_gamma}, {"norm.beta", m.norm_beta},
                        {"projection", m.projection}}));
}

TEST_CASE("gradient: patch expand and final expand") {
  Var grid = param({1, 2, 2, 2, 8}, 30);
  patching::ExpandWeights ex{param({8, 16}, 31)};
  patching::FinalExpandWeights fe{param({4, 2 * 2 * 3}, 32)};
  require_ok(gradcheck(
      [&] { return probe_loss(patching::final_patch_expand(patching::patch_expand(grid, ex), fe, 2, 2), 33); },
      {{"grid", grid}, {"expand", ex.projection}, {"final_expand", fe.projection}}));
}

TEST_CASE("gradient: window attention with relative bias") {
  auto w = testing::random_attention(8, 2, {2, 2, 2}, 40, 0.5, true);
  Var grid = param({1, 2, 4, 4, 8}, 41);
  require_ok(gradcheck(
      [&] {
        auto ws = attention::window_partition(grid, {2, 2, 2});
        return probe_loss(attention::window_reverse(attention::window_attention(ws, w, nullptr)), 42);
      },
      {{"grid", grid}, {"qkv.weight", w.qkv_weight}, {"qkv.bias", w.qkv_bias}, {"proj.weight", w.proj_weight},
       {"proj.bias", w.proj_bias}, {"bias_table", w.bias_table}}));
}

TEST_CASE("gradient: shifted swin block on a padded grid") {
  auto b = testing::random_block(8, 2, 16, {2, 2, 2}, 50, true);
  Var grid = param({1, 2, 3, 5, 8}, 51);
  auto ps = testing::block_params(b);
  ps.push_back({"grid", grid});
  for (bool shifted : {false, true})
    require_ok(gradcheck([&] { return probe_loss(attention::swin_block(grid, b, {2, 2, 2}, shifted), 52); }, ps));
}

TEST_CASE("gradient: mask token substitution") {
  Var grid = param({2, 2, 2, 2, 4}, 60);
  Var token = param({4}, 61);
  std::vector<masking::MaskSpec> specs{masking::generate_window_mask(2, 2, 2, 0.5, 1),
                                       masking::generate_window_mask(2, 2, 2, 0.5, 2)};
  require_ok(gradcheck([&] { return probe_loss(masking::apply_mask(grid, specs, token), 62); },
                       {{"grid", grid}, {"token", token}}));
}

TEST_CASE("gradient: temporal modulator") {
  Var x = param({1, 4, 2, 2, 3}, 70);
  Var w = param({2, 3}, 71), b = param({3}, 72);
  require_ok(gradcheck([&] { return probe_loss(temporal_conv(x, w, b, 2), 73); },
                       {{"x", x}, {"weight", w}, {"bias", b}}));
}

TEST_CASE("gradient: losses") {
  Var pred = param({1, 2, 4, 4, 2}, 80);
  const Tensor target = random_tensor({1, 2, 4, 4, 2}, 81);
  const auto spec = masking::generate_window_mask(2, 2, 2, 0.5, 3);
  require_ok(gradcheck([&] { return train::mae_loss(pred, target, std::span(&spec, 1), {1, 2, 2}); }, {{"pred", pred}}));

  Var logits = param({2, 3, 4}, 82, -2, 2);
  const std::vector<std::int32_t> labels{0, 3, -1, 2, 1, 1};
  const std::vector<double> weights{1.0, 2.0, 0.5, 1.5};
  require_ok(gradcheck([&] { return softmax_cross_entropy(logits, labels, weights); }, {{"logits", logits}}));
}

TEST_CASE("gradient: clamp and concat") {
  Var a = param({2, 3}, 90, -2, 2), b = param({2, 2}, 91);
  // keep samples away from the clamp kinks
  for (auto& v : a.mutable_value().storage())
    if (std::abs(std::abs(v) - 1) < 0.05) v *= 1.2;
  require_ok(gradcheck([&] { return probe_loss(concat_channels(clamp(a, -1, 1), b), 92); }, {{"a", a}, {"b", b}}));
}

TEST_CASE("gradient: micro MAE and UNet end to end") {
  const auto cfg = testing::micro_config();
  MaeModel mae(cfg, 100);
  // move every tensor off its initial value so no gradient is trivially zero
  for (const auto& e : mae.params().entries()) {
    auto& t = e.var.mutable_value();
    const Tensor r = random_tensor(t.shape(), init::name_key(e.name), -0.3, 0.3);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += r[i];
  }
  const Tensor cube = random_tensor({1, 2, 8, 8, 2}, 101, 0, 1);
  const auto spec = masking::generate_window_mask(2, 4, 4, 0.5, 7);
  auto report = gradcheck(
      [&] { return train::mae_loss(mae.forward(Var(cube), std::span(&spec, 1)), cube, std::span(&spec, 1), cfg.patch_size); },
      mae.params().entries(), {.max_per_tensor = 24});
  require_ok(report);

  TaskConfig task;
  task.num_classes = 3;
  UnetModel unet(cfg, task, 102);
  for (const auto& e : unet.params().entries()) {
    auto& t = e.var.mutable_value();
    const Tensor r = random_tensor(t.shape(), init::name_key(e.name) + 1, -0.3, 0.3);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += r[i];
  }
  std::vector<std::int32_t> labels(64);
  for (std::size_t i = 0; i < 64; ++i) labels[i] = std::int32_t(i * 7 % 3);
  require_ok(gradcheck([&] { return softmax_cross_entropy(unet.forward(Var(cube)), labels); }, unet.trainable(),
                       {.max_per_tensor = 24}));
}

TEST_CASE("gradcheck flags a wrong backward rule") {
  Var x = param({3}, 110);
  auto square_wrong = [&] {
    Tensor y = x.value();
    for (auto& v : y.storage()) v = v * v;
    return sum(Var::record(y, {x}, [xv = x.value(), x](const Tensor& g) {
      Tensor gx = g;
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= 3 * xv[i];  // should be 2 x
      x.accumulate_grad(gx);
    }));
  };
  CHECK(!gradcheck(square_wrong, {{"x", x}}).ok());
}
