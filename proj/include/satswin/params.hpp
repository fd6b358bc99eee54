// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "satswin/autograd.hpp"

SATSWIN_NAMESPACE_BEGIN

struct ParamRef {
  std::string name;
  Var var;
};

/// Named trainable tensors in registration order. Names are stable
/// dot-separated paths such as `encoder.stage0.block1.attn.qkv.weight`.
class ParamStore {
 public:
  /// Registers a leaf that requires gradients. Duplicate names throw.
  Var add(const std::string& name, Tensor init);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Var& get(const std::string& name) const;
  const std::vector<ParamRef>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  /// Total number of scalars.
  std::size_t scalar_count() const;
  void zero_grad() const;

 private:
  std::vector<ParamRef> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Deterministic initializers. Each tensor draws from a stream keyed by
/// (seed, name), so values do not depend on registration order.
namespace init {
std::uint64_t name_key(const std::string& name);
Tensor truncated_normal(const Shape& shape, std::uint64_t seed, const std::string& name,
                        double sigma = 0.02);
Tensor zeros(const Shape& shape);
Tensor ones(const Shape& shape);
}  // namespace init

SATSWIN_NAMESPACE_END
