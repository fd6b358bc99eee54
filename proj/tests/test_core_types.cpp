// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <nlohmann/json.hpp>

#include "satswin/autograd.hpp"
#include "satswin/config.hpp"
#include "satswin/errors.hpp"
#include "satswin/ops.hpp"
#include "satswin/rng.hpp"
#include "support/fixtures.hpp"

using namespace satswin;

namespace {

ModelConfig tiny_profile_224() {
  ModelConfig cfg;
  cfg.patch_size = {1, 4, 4};
  cfg.embed_dim = 96;
  cfg.stage_depths = {2, 2, 6, 2};
  cfg.stage_heads = {3, 6, 12, 24};
  cfg.head_dim = 32;
  cfg.window = {3, 7, 7};
  cfg.num_timesteps = 3;
  cfg.input_height = cfg.input_width = 224;
  cfg.num_bands = 6;
  return cfg;
}

bool any_contains(const std::vector<std::string>& errors, const std::string& needle) {
  return std::any_of(errors.begin(), errors.end(),
                     [&](const std::string& e) { return e.find(needle) != std::string::npos; });
}

}  // namespace

TEST_CASE("validate_config accepts the 224 tiny profile") {
  CHECK(validate_config(tiny_profile_224(), InputShape{3, 224, 224, 6}).empty());
  CHECK(validate_config(ModelConfig::swin_base()).empty());
}

TEST_CASE("validate_config names the stage with a head mismatch") {
  auto cfg = tiny_profile_224();
  cfg.stage_heads = {3, 6, 12, 23};
  auto errors = validate_config(cfg);
  REQUIRE(errors.size() == 1);
  CHECK(errors[0].find("stage 3") != std::string::npos);
  CHECK(errors[0].find("736") != std::string::npos);
  CHECK(errors[0].find("768") != std::string::npos);
}

TEST_CASE("validate_config rejects mask ratio on the boundary") {
  auto cfg = tiny_profile_224();
  for (double r : {0.0, 1.0, -0.5, 1.5}) {
    cfg.mask_ratio = r;
    CHECK(any_contains(validate_config(cfg), "mask_ratio out of open interval"));
  }
}

TEST_CASE("validate_config reports every violation") {
  auto cfg = tiny_profile_224();
  cfg.mask_ratio = 1.0;
  cfg.window = {4, 7, 5};
  cfg.input_height = 220;
  cfg.decoder_depths = {2};
  auto errors = validate_config(cfg);
  CHECK(any_contains(errors, "mask_ratio"));
  CHECK(any_contains(errors, "square"));
  CHECK(any_contains(errors, "window.t"));
  CHECK(any_contains(errors, "input_height"));
  CHECK(any_contains(errors, "decoder_depths"));
}

TEST_CASE("validate_config names the stage that cannot merge") {
  auto cfg = tiny_profile_224();
  cfg.input_height = cfg.input_width = 200;  // 50 -> 25 is odd at stage 1
  auto errors = validate_config(cfg);
  CHECK(any_contains(errors, "stage 1"));
}

TEST_CASE("validate_config checks the input shape against the config") {
  auto errors = validate_config(tiny_profile_224(), InputShape{3, 224, 224, 4});
  CHECK(!errors.empty());
}

TEST_CASE("validate_config is total over arbitrary integers") {
  CounterRng rng(99);
  auto pick = [&] {
    static const std::int64_t pool[] = {-7, -1, 0, 1, 2, 3, 4, 7, 8, 16, 63, 224, 1 << 20,
                                        std::numeric_limits<std::int64_t>::max(),
                                        std::numeric_limits<std::int64_t>::min()};
    return pool[rng.below(std::size(pool))];
  };
  for (int trial = 0; trial < 2000; ++trial) {
    ModelConfig cfg;
    cfg.patch_size = {pick(), pick(), pick()};
    cfg.embed_dim = pick();
    cfg.head_dim = pick();
    cfg.window = {pick(), pick(), pick()};
    cfg.num_bands = pick();
    cfg.num_timesteps = pick();
    cfg.input_height = pick();
    cfg.input_width = pick();
    cfg.mask_ratio = rng.uniform(-1, 2);
    cfg.stage_depths.assign(rng.below(5), pick());
    cfg.stage_heads.assign(rng.below(5), pick());
    cfg.decoder_depths.assign(rng.below(4), pick());
    std::vector<std::string> errors;
    CHECK_NOTHROW(errors = validate_config(cfg, InputShape{pick(), pick(), pick(), pick()}));
  }
}

TEST_CASE("model config JSON round trip and unknown keys") {
  const auto cfg = tiny_profile_224();
  const auto j = to_json(cfg);
  CHECK(model_config_from_json(j) == cfg);
  CHECK(to_json(model_config_from_json(j)).dump() == j.dump());
  auto bad = j;
  bad["embed_dimension"] = 3;
  CHECK_THROWS_AS(model_config_from_json(bad), FormatError);

  TaskConfig task;
  task.kind = TaskKind::kRegression;
  task.out_timesteps = 1;
  task.temporal_kernel = 3;
  CHECK(task_config_from_json(to_json(task)) == task);
}

TEST_CASE("shape pipeline for the canonical cube") {
  const auto pipe = shape_pipeline(ModelConfig::swin_base());
  CHECK(pipeline_shape(pipe, "input") == Shape{1, 3, 224, 224, 6});
  CHECK(pipeline_shape(pipe, "embed") == Shape{1, 3, 56, 56, 128});
  CHECK(pipeline_shape(pipe, "bottleneck") == Shape{1, 3, 7, 7, 1024});
  CHECK(pipeline_shape(pipe, "mae.output") == Shape{1, 3, 224, 224, 6});
}

TEST_CASE("shape pipeline channel accounting per stage") {
  auto cfg = tiny_profile_224();
  const auto pipe = shape_pipeline(cfg, 2);
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& s = pipeline_shape(pipe, "encoder.stage" + std::to_string(i));
    CHECK(s == Shape{2, 3, 56u >> i, 56u >> i, 96u << i});
  }
}

TEST_CASE("temporal geometry") {
  TaskConfig task;
  task.out_timesteps = 1;
  auto g = temporal_geometry(3, task);
  CHECK(g.kernel == 3);
  CHECK(g.out_steps == 1);
  task.out_timesteps = 3;
  g = temporal_geometry(3, task);
  CHECK(g.kernel == 1);
  CHECK(g.stride == 1);
  task.out_timesteps = 4;
  CHECK_THROWS_AS(temporal_geometry(3, task), ConfigError);
}

TEST_CASE("tensor basics") {
  Tensor t({2, 3}, Real(1.5));
  CHECK(t.size() == 6);
  t.at({1, 2}) = 4;
  CHECK(t[5] == 4);
  CHECK_THROWS(t.at({2, 0}));
  CHECK(t.reshaped({3, 2}).shape() == Shape{3, 2});
  CHECK_THROWS(t.reshaped({4, 2}));
  CHECK(bitwise_equal(t, t));
  Tensor u = t;
  u[0] = Real(-0.0);
  Tensor v = t;
  v[0] = Real(0.0);
  CHECK(!bitwise_equal(u, v));
}

TEST_CASE("counter rng is reproducible and splittable") {
  CounterRng a(7), b(7);
  for (int i = 0; i < 10; ++i) CHECK(a.next_u64() == b.next_u64());
  CHECK(CounterRng(7).split(1).at(0) != CounterRng(7).split(2).at(0));
  CHECK(CounterRng(7).split(1, 2).at(5) == CounterRng(7).split(1).split(2).at(5));
  CounterRng c(3);
  std::vector<int> hist(5, 0);
  for (int i = 0; i < 5000; ++i) ++hist[c.below(5)];
  for (int h : hist) CHECK(std::abs(h - 1000) < 5 * 29);  // 5 sigma of Binomial(5000, 0.2)
}

TEST_CASE("autograd accumulates through shared inputs") {
  Var x(Tensor({3}, {1, 2, 3}), true);
  Var y = add(x, x);
  backward(sum(y));
  CHECK(x.grad()[0] == 2);
  CHECK(x.grad()[2] == 2);
}

TEST_CASE("no-grad guard records nothing") {
  Var x(Tensor({2}, {1, 2}), true);
  NoGradGuard guard;
  Var y = scale(x, 2);
  CHECK(!y.requires_grad());
}
