// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "satswin/autograd.hpp"

SATSWIN_NAMESPACE_BEGIN

// Differentiable tensor primitives shared by every layer. Channel-wise ops act
// on the last axis; everything before it is treated as a flat list of rows.

/// y = x W (+ b), tokenwise. x [..., in], weight [in, out], bias [out] or undefined.
Var linear(const Var& x, const Var& weight, const Var& bias = Var());

Var add(const Var& a, const Var& b);
Var scale(const Var& x, Real factor);
Var reshape(const Var& x, Shape shape);

/// Layer normalization over the last axis with affine gamma/beta.
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, Real eps = Real(1e-5));

/// Exact (erf-based) GELU.
Var gelu(const Var& x);

/// Elementwise clamp; gradient passes only where lo < x < hi.
Var clamp(const Var& x, Real lo, Real hi);

/// Row gather. x is viewed as rows of `row_width` values; output row k is
/// x[index[k]] or zeros when index[k] < 0. Output takes `out_shape`, whose
/// volume must be index.size() * row_width. Backward scatter-adds.
Var gather_rows(const Var& x, std::size_t row_width, std::span<const std::int64_t> index,
                Shape out_shape);

/// Concatenate along the last axis; leading dims must agree.
Var concat_channels(const Var& a, const Var& b);

/// Rows of x (tokens of width C) where select[r] != 0 are replaced by `token`.
Var substitute_rows(const Var& x, std::span<const std::uint8_t> select, const Var& token);

/// Sum of all entries; returns a scalar of shape {}.
Var sum(const Var& x);

// ---- losses (scalar outputs) -------------------------------------------------

/// sum(w * (pred - target)^2) / sum(w). Throws if sum(w) == 0.
Var weighted_mse(const Var& pred, const Tensor& target, const Tensor& weight);

/// Mean softmax cross-entropy over rows of logits [..., K]. labels has one entry
/// per row; rows equal to ignore_label are skipped. With class weights the mean
/// is weight-normalized.
Var softmax_cross_entropy(const Var& logits, std::span<const std::int32_t> labels,
                          std::span<const double> class_weights = {},
                          std::int32_t ignore_label = -1);

SATSWIN_NAMESPACE_END
