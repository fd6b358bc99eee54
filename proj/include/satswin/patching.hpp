// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "satswin/autograd.hpp"
#include "satswin/config.hpp"

SATSWIN_NAMESPACE_BEGIN
namespace patching {

// Lattice reshaping on channel-last tensors with an explicit leading batch axis:
// cubes are [N, T, H, W, B] and token grids [N, T, Gh, Gw, C].

/// Token embedding: embed_matrix [(pt*ph*pw*B) x C], embed_bias [C].
struct EmbedWeights {
  Var matrix;
  Var bias;
};

/// 1x2x2 merge: optional layer norm over the 4C concatenation, then 4C -> 2C.
struct MergeWeights {
  Var norm_gamma;  // undefined when merge_norm is off
  Var norm_beta;
  Var projection;  // [4C, 2C]
};

/// C -> 2C projection followed by a 2x2 pixel shuffle down to C/2 channels.
struct ExpandWeights {
  Var projection;  // [C, 2C]
};

/// C -> ph*pw*C_out projection followed by a ph x pw pixel shuffle.
struct FinalExpandWeights {
  Var projection;  // [C, ph*pw*C_out]
};

/// [N,T,H,W,B] -> [N,T/pt,H/ph,W/pw,pt*ph*pw*B]; token channels ordered
/// (dt, dh, dw, band) row-major.
Var patch_partition(const Var& cube, const PatchSize& patch);
/// Exact inverse of patch_partition.
Var patch_unpartition(const Var& grid, const PatchSize& patch, std::size_t bands);

Var linear_embed(const Var& grid, const EmbedWeights& w);

/// Concatenates the 2x2 spatial neighbours in order (0,0),(0,1),(1,0),(1,1)
/// into 4C channels and projects to 2C. T is untouched.
Var patch_merge(const Var& grid, const MergeWeights& w);

/// Projects C -> 2C and spreads each token's 2C channels over a 2x2 block of
/// C/2 channels, block order (0,0),(0,1),(1,0),(1,1).
Var patch_expand(const Var& grid, const ExpandWeights& w);

/// Projects C -> ph*pw*C_out and spreads the result over a ph x pw pixel block.
Var final_patch_expand(const Var& grid, const FinalExpandWeights& w, std::size_t ph,
                       std::size_t pw);

}  // namespace patching
SATSWIN_NAMESPACE_END
