// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <vector>

#include "satswin/config.hpp"
#include "satswin/masking.hpp"
#include "satswin/params.hpp"
#include "satswin/patching.hpp"
#include "satswin/window_attention.hpp"

SATSWIN_NAMESPACE_BEGIN

struct EncoderWeights {
  patching::EmbedWeights embed;
  Var mask_token;  // [C]
  std::vector<std::vector<attention::BlockWeights>> blocks;  // per stage
  std::vector<patching::MergeWeights> merges;               // S - 1 entries
};

/// Decoder stage j runs at encoder level S-2-j: expand, then blocks.
struct DecoderWeights {
  std::vector<patching::ExpandWeights> expands;
  std::vector<std::vector<attention::BlockWeights>> blocks;
  Var head_weight;  // [C, pt*ph*pw*B], reconstruction projection
  Var head_bias;
};

/// Per decoder stage: concat(skip, decoder) [2C] -> C.
struct SkipFusionWeights {
  std::vector<Var> weight;
  std::vector<Var> bias;
};

/// Depthwise convolution along time, kernel [k, C], bias [C].
struct TemporalModulatorWeights {
  Var weight;
  Var bias;
  std::size_t stride = 1;
};

struct TaskHead {
  TaskKind kind = TaskKind::kSegmentation;
  Var weight;  // [C_out, K]
  Var bias;    // [K]
};

/// Optional capture of intermediate activations keyed by shape-pipeline names.
struct ForwardTrace {
  std::vector<std::pair<std::string, Tensor>> entries;
  void record(const std::string& name, const Var& v) { entries.emplace_back(name, v.value()); }
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;
};

struct EncodeResult {
  Var bottleneck;
  std::vector<Var> skips;  // finest first, each a stage's pre-merge output
};

/// out[n, o, h, w, c] = bias[c] + sum_k weight[k, c] * x[n, o*stride + k, h, w, c]
Var temporal_conv(const Var& x, const Var& weight, const Var& bias, std::size_t stride);

/// Partition, embed, mask-substitute when `masks` is non-empty (one spec per
/// sample or one shared), then the stages. No merge after the last stage.
EncodeResult encode(const Var& cube, const ModelConfig& cfg, const EncoderWeights& w,
                    std::span<const masking::MaskSpec> masks = {}, ForwardTrace* trace = nullptr);

/// Decoder trunk back to the finest token level. With `fusion` each stage
/// fuses the encoder skip of its resolution after expanding.
Var decode_trunk(const EncodeResult& enc, const ModelConfig& cfg, const DecoderWeights& w,
                 const SkipFusionWeights* fusion, ForwardTrace* trace = nullptr);

/// Reconstruction [N, T, H, W, B]; no skips.
Var decode_mae(const Var& bottleneck, const ModelConfig& cfg, const DecoderWeights& w,
               ForwardTrace* trace = nullptr);

struct UnetWeights {
  EncoderWeights encoder;
  DecoderWeights decoder;
  SkipFusionWeights fusion;  // empty without skip connections
  patching::FinalExpandWeights final_expand;
  TemporalModulatorWeights temporal;
  TaskHead head;
};

/// Raw task output [N, T_out, H, W, K]; regression values are unclamped here.
Var unet_forward(const Var& cube, const ModelConfig& cfg, const TaskConfig& task,
                 const UnetWeights& w, ForwardTrace* trace = nullptr);

// ---- parameter construction ------------------------------------------------

EncoderWeights build_encoder(ParamStore& store, const ModelConfig& cfg, std::uint64_t seed,
                             bool with_mask_token);
DecoderWeights build_decoder(ParamStore& store, const ModelConfig& cfg, std::uint64_t seed);

class MaeModel {
 public:
  MaeModel(const ModelConfig& cfg, std::uint64_t seed);
  MaeModel(const MaeModel&) = delete;
  MaeModel& operator=(const MaeModel&) = delete;
  MaeModel(MaeModel&&) = default;
  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const EncoderWeights& encoder() const { return enc_; }
  const DecoderWeights& decoder() const { return dec_; }
  /// cube [N,T,H,W,B]; masks empty for an unmasked pass.
  Var forward(const Var& cube, std::span<const masking::MaskSpec> masks,
              ForwardTrace* trace = nullptr) const;

 private:
  ModelConfig cfg_;
  ParamStore params_;
  EncoderWeights enc_;
  DecoderWeights dec_;
};

class UnetModel {
 public:
  UnetModel(const ModelConfig& cfg, const TaskConfig& task, std::uint64_t seed);
  UnetModel(const UnetModel&) = delete;
  UnetModel& operator=(const UnetModel&) = delete;
  UnetModel(UnetModel&&) = default;
  const ModelConfig& config() const { return cfg_; }
  const TaskConfig& task() const { return task_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const UnetWeights& weights() const { return w_; }
  Var forward(const Var& cube, ForwardTrace* trace = nullptr) const;
  /// Names updated by finetuning; the carried reconstruction head is excluded
  /// and `freeze_encoder` drops every encoder.* tensor.
  std::vector<ParamRef> trainable(bool freeze_encoder = false) const;

 private:
  ModelConfig cfg_;
  TaskConfig task_;
  ParamStore params_;
  UnetWeights w_;
};

/// Reported outputs: segmentation logits unchanged, regression clamped to [0, 100].
Tensor reported_output(const Tensor& raw, TaskKind kind);
/// Per-pixel argmax over the last axis.
std::vector<std::int32_t> argmax_labels(const Tensor& logits);

struct TransferReport {
  std::vector<std::string> copied;
  std::vector<std::string> fresh;
  std::vector<std::string> dropped;
  std::size_t copied_scalars = 0;
};

/// Copies every pretrained tensor except the mask token into `target`; the
/// remaining target tensors keep their fresh initialization.
TransferReport transfer_weights(const ParamStore& pretrained, const ModelConfig& pretrained_cfg,
                                UnetModel& target);

SATSWIN_NAMESPACE_END
