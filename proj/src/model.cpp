// SPDX-License-Identifier: Apache-2.0
#include "satswin/model.hpp"

#include <algorithm>

#include "satswin/errors.hpp"
#include "satswin/ops.hpp"

SATSWIN_NAMESPACE_BEGIN

namespace {

using attention::BlockWeights;

std::string stage_name(const char* prefix, std::size_t i) { return prefix + std::to_string(i); }

attention::Extent3 extent_of(const WindowSize& w) {
  return {static_cast<std::size_t>(w.t), static_cast<std::size_t>(w.h), static_cast<std::size_t>(w.w)};
}

BlockWeights build_block(ParamStore& store, const std::string& prefix, const ModelConfig& cfg,
                         std::size_t channels, std::size_t heads, std::uint64_t seed) {
  const std::size_t hidden = cfg.mlp_hidden(channels);
  auto weight = [&](const std::string& name, Shape shape) {
    return store.add(prefix + name, init::truncated_normal(shape, seed, prefix + name));
  };
  auto zeros = [&](const std::string& name, Shape shape) {
    return store.add(prefix + name, init::zeros(shape));
  };
  BlockWeights b;
  b.norm1_gamma = store.add(prefix + ".norm1.weight", init::ones({channels}));
  b.norm1_beta = zeros(".norm1.bias", {channels});
  b.attn.qkv_weight = weight(".attn.qkv.weight", {channels, 3 * channels});
  b.attn.qkv_bias = zeros(".attn.qkv.bias", {3 * channels});
  b.attn.proj_weight = weight(".attn.proj.weight", {channels, channels});
  b.attn.proj_bias = zeros(".attn.proj.bias", {channels});
  b.attn.table_window = extent_of(cfg.window);
  b.attn.heads = heads;
  b.attn.bias_table = weight(".attn.relative_bias_table",
                             {attention::relative_table_rows(b.attn.table_window), heads});
  b.norm2_gamma = store.add(prefix + ".norm2.weight", init::ones({channels}));
  b.norm2_beta = zeros(".norm2.bias", {channels});
  b.fc1_weight = weight(".mlp.fc1.weight", {channels, hidden});
  b.fc1_bias = zeros(".mlp.fc1.bias", {hidden});
  b.fc2_weight = weight(".mlp.fc2.weight", {hidden, channels});
  b.fc2_bias = zeros(".mlp.fc2.bias", {channels});
  return b;
}

Var run_blocks(Var x, const std::vector<BlockWeights>& blocks, const WindowSize& window) {
  for (std::size_t j = 0; j < blocks.size(); ++j) {
    x = attention::swin_block(x, blocks[j], window, j % 2 == 1);
  }
  return x;
}

void trace_if(ForwardTrace* trace, const std::string& name, const Var& v) {
  if (trace) trace->record(name, v);
}

void check_cube(const Var& cube, const ModelConfig& cfg) {
  const Shape& s = cube.shape();
  if (s.size() != 5) throw ShapeError("expected cube [N,T,H,W,B], got " + to_string(s));
  const InputShape in{static_cast<std::int64_t>(s[1]), static_cast<std::int64_t>(s[2]),
                      static_cast<std::int64_t>(s[3]), static_cast<std::int64_t>(s[4])};
  auto errors = validate_config(cfg, in);
  if (!errors.empty()) throw ConfigError(std::move(errors));
}

}  // namespace

const Tensor& ForwardTrace::at(const std::string& name) const {
  for (const auto& [n, t] : entries) {
    if (n == name) return t;
  }
  throw Error("trace has no entry '" + name + "'");
}

bool ForwardTrace::contains(const std::string& name) const {
  return std::any_of(entries.begin(), entries.end(), [&](const auto& e) { return e.first == name; });
}

Var temporal_conv(const Var& x, const Var& weight, const Var& bias, std::size_t stride) {
  const Shape& s = x.shape();
  if (s.size() != 5) throw ShapeError("temporal_conv: expected [N,T,H,W,C], got " + to_string(s));
  const std::size_t n = s[0], t = s[1], hw = s[2] * s[3], c = s[4];
  if (weight.shape().size() != 2 || weight.dim(1) != c || bias.shape() != Shape{c}) {
    throw ShapeError("temporal_conv: kernel " + to_string(weight.shape()) + ", bias " +
                     to_string(bias.shape()) + " for " + std::to_string(c) + " channels");
  }
  const std::size_t k = weight.dim(0);
  if (k > t || stride == 0) {
    throw ShapeError("temporal_conv: kernel " + std::to_string(k) + " over " + std::to_string(t) +
                     " steps with stride " + std::to_string(stride));
  }
  const std::size_t t_out = (t - k) / stride + 1;
  Tensor y({n, t_out, s[2], s[3], c});
  const Real* xv = x.value().data();
  const Real* wv = weight.value().data();
  const Real* bv = bias.value().data();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < t_out; ++o)
      for (std::size_t p = 0; p < hw; ++p) {
        Real* yr = y.data() + ((b * t_out + o) * hw + p) * c;
        for (std::size_t ch = 0; ch < c; ++ch) yr[ch] = bv[ch];
        for (std::size_t kk = 0; kk < k; ++kk) {
          const Real* xr = xv + ((b * t + o * stride + kk) * hw + p) * c;
          const Real* wr = wv + kk * c;
          for (std::size_t ch = 0; ch < c; ++ch) yr[ch] += wr[ch] * xr[ch];
        }
      }
  return Var::record(std::move(y), {x, weight, bias},
                     [x, weight, bias, n, t, hw, c, k, t_out, stride](const Tensor& g) {
    Tensor gx(x.shape());
    Tensor gw(weight.shape());
    Tensor gb(bias.shape());
    const Real* xv = x.value().data();
    const Real* wv = weight.value().data();
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t o = 0; o < t_out; ++o)
        for (std::size_t p = 0; p < hw; ++p) {
          const Real* gr = g.data() + ((b * t_out + o) * hw + p) * c;
          for (std::size_t ch = 0; ch < c; ++ch) gb[ch] += gr[ch];
          for (std::size_t kk = 0; kk < k; ++kk) {
            const std::size_t row = ((b * t + o * stride + kk) * hw + p) * c;
            for (std::size_t ch = 0; ch < c; ++ch) {
              gw[kk * c + ch] += gr[ch] * xv[row + ch];
              gx[row + ch] += gr[ch] * wv[kk * c + ch];
            }
          }
        }
    if (x.requires_grad()) x.accumulate_grad(gx);
    if (weight.requires_grad()) weight.accumulate_grad(gw);
    if (bias.requires_grad()) bias.accumulate_grad(gb);
  });
}

EncodeResult encode(const Var& cube, const ModelConfig& cfg, const EncoderWeights& w,
                    std::span<const masking::MaskSpec> masks, ForwardTrace* trace) {
  check_cube(cube, cfg);
  trace_if(trace, "input", cube);
  Var x = patching::patch_partition(cube, cfg.patch_size);
  trace_if(trace, "patch_partition", x);
  x = patching::linear_embed(x, w.embed);
  if (!masks.empty()) x = masking::apply_mask(x, masks, w.mask_token);
  trace_if(trace, "embed", x);
  EncodeResult out;
  const std::size_t stages = cfg.num_stages();
  for (std::size_t i = 0; i < stages; ++i) {
    x = run_blocks(x, w.blocks[i], cfg.window);
    trace_if(trace, stage_name("encoder.stage", i), x);
    out.skips.push_back(x);
    if (i + 1 < stages) {
      x = patching::patch_merge(x, w.merges[i]);
      trace_if(trace, stage_name("encoder.stage", i) + ".merge", x);
    }
  }
  trace_if(trace, "bottleneck", x);
  out.bottleneck = x;
  return out;
}

Var decode_trunk(const EncodeResult& enc, const ModelConfig& cfg, const DecoderWeights& w,
                 const SkipFusionWeights* fusion, ForwardTrace* trace) {
  const std::size_t stages = cfg.num_stages();
  Var x = enc.bottleneck;
  for (std::size_t j = 0; j + 1 < stages; ++j) {
    const std::size_t level = stages - 2 - j;
    const std::string prefix = stage_name("decoder.stage", j);
    x = patching::patch_expand(x, w.expands[j]);
    trace_if(trace, prefix + ".expand", x);
    if (fusion) {
      if (enc.skips.size() != stages) {
        throw ShapeError("decode_trunk: fusion needs " + std::to_string(stages) + " skips, got " +
                         std::to_string(enc.skips.size()));
      }
      x = linear(concat_channels(enc.skips[level], x), fusion->weight[j], fusion->bias[j]);
      trace_if(trace, prefix + ".fusion", x);
    }
    x = run_blocks(x, w.blocks[j], cfg.window);
    trace_if(trace, prefix, x);
  }
  return x;
}

Var decode_mae(const Var& bottleneck, const ModelConfig& cfg, const DecoderWeights& w,
               ForwardTrace* trace) {
  EncodeResult enc;
  enc.bottleneck = bottleneck;
  Var x = decode_trunk(enc, cfg, w, nullptr, trace);
  x = linear(x, w.head_weight, w.head_bias);
  trace_if(trace, "mae.head", x);
  x = patching::patch_unpartition(x, cfg.patch_size, static_cast<std::size_t>(cfg.num_bands));
  trace_if(trace, "mae.output", x);
  return x;
}

Var unet_forward(const Var& cube, const ModelConfig& cfg, const TaskConfig& task,
                 const UnetWeights& w, ForwardTrace* trace) {
  EncodeResult enc = encode(cube, cfg, w.encoder, {}, trace);
  Var x = decode_trunk(enc, cfg, w.decoder, task.skip_connections ? &w.fusion : nullptr, trace);
  const auto ph = static_cast<std::size_t>(cfg.patch_size.h);
  const auto pw = static_cast<std::size_t>(cfg.patch_size.w);
  if (task.expand_before_modulate) {
    x = patching::final_patch_expand(x, w.final_expand, ph, pw);
    trace_if(trace, "unet.final_expand", x);
    x = temporal_conv(x, w.temporal.weight, w.temporal.bias, w.temporal.stride);
    trace_if(trace, "unet.temporal", x);
  } else {
    x = temporal_conv(x, w.temporal.weight, w.temporal.bias, w.temporal.stride);
    trace_if(trace, "unet.temporal", x);
    x = patching::final_patch_expand(x, w.final_expand, ph, pw);
    trace_if(trace, "unet.final_expand", x);
  }
  x = linear(x, w.head.weight, w.head.bias);
  trace_if(trace, "unet.head", x);
  return x;
}

EncoderWeights build_encoder(ParamStore& store, const ModelConfig& cfg, std::uint64_t seed,
                             bool with_mask_token) {
  expect_valid(cfg);
  EncoderWeights w;
  const std::size_t c0 = cfg.stage_channels(0);
  w.embed.matrix = store.add("encoder.patch_embed.weight",
                             init::truncated_normal({cfg.tokens_per_patch_channels(), c0}, seed,
                                                    "encoder.patch_embed.weight"));
  w.embed.bias = store.add("encoder.patch_embed.bias", init::zeros({c0}));
  if (with_mask_token) {
    w.mask_token = store.add("encoder.mask_token",
                             init::truncated_normal({c0}, seed, "encoder.mask_token"));
  }
  const std::size_t stages = cfg.num_stages();
  w.blocks.resize(stages);
  for (std::size_t i = 0; i < stages; ++i) {
    const std::size_t c = cfg.stage_channels(i);
    const auto heads = static_cast<std::size_t>(cfg.stage_heads[i]);
    for (std::int64_t j = 0; j < cfg.stage_depths[i]; ++j) {
      const std::string prefix = stage_name("encoder.stage", i) + stage_name(".block", j);
      w.blocks[i].push_back(build_block(store, prefix, cfg, c, heads, seed));
    }
    if (i + 1 < stages) {
      const std::string prefix = stage_name("encoder.stage", i) + ".merge";
      patching::MergeWeights m;
      if (cfg.merge_norm) {
        m.norm_gamma = store.add(prefix + ".norm.weight", init::ones({4 * c}));
        m.norm_beta = store.add(prefix + ".norm.bias", init::zeros({4 * c}));
      }
      m.projection = store.add(prefix + ".reduction.weight",
                               init::truncated_normal({4 * c, 2 * c}, seed, prefix + ".reduction.weight"));
      w.merges.push_back(m);
    }
  }
  return w;
}

DecoderWeights build_decoder(ParamStore& store, const ModelConfig& cfg, std::uint64_t seed) {
  expect_valid(cfg);
  DecoderWeights w;
  const std::size_t stages = cfg.num_stages();
  w.blocks.resize(stages - 1);
  for (std::size_t j = 0; j + 1 < stages; ++j) {
    const std::size_t level = stages - 2 - j;
    const std::size_t c_in = cfg.stage_channels(level + 1);
    const std::size_t c = cfg.stage_channels(level);
    const std::string prefix = stage_name("decoder.stage", j);
    w.expands.push_back({store.add(prefix + ".expand.weight",
                                   init::truncated_normal({c_in, 2 * c_in}, seed, prefix + ".expand.weight"))});
    const auto heads = static_cast<std::size_t>(cfg.stage_heads[level]);
    for (std::int64_t k = 0; k < cfg.decoder_depths[j]; ++k) {
      w.blocks[j].push_back(build_block(store, prefix + stage_name(".block", k), cfg, c, heads, seed));
    }
  }
  const std::size_t c0 = cfg.stage_channels(0);
  w.head_weight = store.add("decoder.head.weight",
                            init::truncated_normal({c0, cfg.tokens_per_patch_channels()}, seed,
                                                   "decoder.head.weight"));
  w.head_bias = store.add("decoder.head.bias", init::zeros({cfg.tokens_per_patch_channels()}));
  return w;
}

MaeModel::MaeModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  enc_ = build_encoder(params_, cfg_, seed, true);
  dec_ = build_decoder(params_, cfg_, seed);
}

Var MaeModel::forward(const Var& cube, std::span<const masking::MaskSpec> masks,
                      ForwardTrace* trace) const {
  EncodeResult enc = encode(cube, cfg_, enc_, masks, trace);
  return decode_mae(enc.bottleneck, cfg_, dec_, trace);
}

UnetModel::UnetModel(const ModelConfig& cfg, const TaskConfig& task, std::uint64_t seed)
    : cfg_(cfg), task_(task) {
  expect_valid(cfg_, task_);
  w_.encoder = build_encoder(params_, cfg_, seed, false);
  w_.decoder = build_decoder(params_, cfg_, seed);
  auto weight = [&](const std::string& name, Shape shape) {
    return params_.add(name, init::truncated_normal(shape, seed, name));
  };
  const std::size_t stages = cfg_.num_stages();
  if (task_.skip_connections) {
    for (std::size_t j = 0; j + 1 < stages; ++j) {
      const std::size_t c = cfg_.stage_channels(stages - 2 - j);
      const std::string prefix = stage_name("unet.fusion", j);
      w_.fusion.weight.push_back(weight(prefix + ".weight", {2 * c, c}));
      w_.fusion.bias.push_back(params_.add(prefix + ".bias", init::zeros({c})));
    }
  }
  const std::size_t c0 = cfg_.stage_channels(0);
  const std::size_t c_out = task_.out_channels > 0 ? static_cast<std::size_t>(task_.out_channels) : c0;
  const auto ph = static_cast<std::size_t>(cfg_.patch_size.h);
  const auto pw = static_cast<std::size_t>(cfg_.patch_size.w);
  w_.final_expand.projection = weight("unet.final_expand.weight", {c0, ph * pw * c_out});
  const auto tg = temporal_geometry(cfg_.num_timesteps / cfg_.patch_size.t, task_);
  const std::size_t c_t = task_.expand_before_modulate ? c_out : c0;
  w_.temporal.weight = weight("unet.temporal.weight", {tg.kernel, c_t});
  w_.temporal.bias = params_.add("unet.temporal.bias", init::zeros({c_t}));
  w_.temporal.stride = tg.stride;
  w_.head.kind = task_.kind;
  w_.head.weight = weight("unet.head.weight", {c_out, task_.head_outputs()});
  w_.head.bias = params_.add("unet.head.bias", init::zeros({task_.head_outputs()}));
}

Var UnetModel::forward(const Var& cube, ForwardTrace* trace) const {
  return unet_forward(cube, cfg_, task_, w_, trace);
}

std::vector<ParamRef> UnetModel::trainable(bool freeze_encoder) const {
  std::vector<ParamRef> out;
  for (const auto& e : params_.entries()) {
    if (e.name.rfind("decoder.head.", 0) == 0) continue;
    if (freeze_encoder && e.name.rfind("encoder.", 0) == 0) continue;
    out.push_back(e);
  }
  return out;
}

Tensor reported_output(const Tensor& raw, TaskKind kind) {
  if (kind == TaskKind::kSegmentation) return raw;
  Tensor out = raw;
  for (auto& v : out.values()) v = std::clamp(v, Real(0), Real(100));
  return out;
}

std::vector<std::int32_t> argmax_labels(const Tensor& logits) {
  const std::size_t k = logits.shape().back();
  const std::size_t rows = logits.size() / k;
  std::vector<std::int32_t> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* row = logits.data() + r * k;
    out[r] = static_cast<std::int32_t>(std::max_element(row, row + k) - row);
  }
  return out;
}

TransferReport transfer_weights(const ParamStore& pretrained, const ModelConfig& pretrained_cfg,
                                UnetModel& target) {
  const ModelConfig& cfg = target.config();
  if (pretrained_cfg.num_stages() != cfg.num_stages()) {
    throw ShapeError("transfer: pretrained model has " + std::to_string(pretrained_cfg.num_stages()) +
                     " stages, target has " + std::to_string(cfg.num_stages()));
  }
  for (std::size_t i = 0; i < cfg.num_stages(); ++i) {
    if (pretrained_cfg.stage_depths[i] != cfg.stage_depths[i]) {
      throw ShapeError("transfer: encoder stage " + std::to_string(i) + " depth " +
                       std::to_string(pretrained_cfg.stage_depths[i]) + " vs " +
                       std::to_string(cfg.stage_depths[i]));
    }
  }
  for (std::size_t j = 0; j < cfg.decoder_depths.size() && j < pretrained_cfg.decoder_depths.size(); ++j) {
    if (pretrained_cfg.decoder_depths[j] != cfg.decoder_depths[j]) {
      throw ShapeError("transfer: decoder stage " + std::to_string(j) + " depth " +
                       std::to_string(pretrained_cfg.decoder_depths[j]) + " vs " +
                       std::to_string(cfg.decoder_depths[j]));
    }
  }
  TransferReport report;
  std::vector<std::string> mismatches;
  for (const auto& e : pretrained.entries()) {
    if (e.name == "encoder.mask_token") continue;
    if (!target.params().contains(e.name)) {
      mismatches.push_back(e.name + ": absent from target");
    } else if (target.params().get(e.name).shape() != e.var.shape()) {
      mismatches.push_back(e.name + ": " + to_string(e.var.shape()) + " vs " +
                           to_string(target.params().get(e.name).shape()));
    }
  }
  if (!mismatches.empty()) {
    std::string msg = "transfer: incompatible tensors:";
    for (const auto& m : mismatches) msg += "\n  " + m;
    throw ShapeError(msg);
  }
  for (const auto& e : pretrained.entries()) {
    if (e.name == "encoder.mask_token") {
      report.dropped.push_back(e.name);
      continue;
    }
    target.params().get(e.name).mutable_value() = e.var.value();
    report.copied.push_back(e.name);
    report.copied_scalars += e.var.value().size();
  }
  for (const auto& e : target.params().entries()) {
    if (!pretrained.contains(e.name)) report.fresh.push_back(e.name);
  }
  return report;
}

SATSWIN_NAMESPACE_END
