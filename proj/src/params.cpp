// SPDX-License-Identifier: Apache-2.0
#include "satswin/params.hpp"

#include "satswin/errors.hpp"
#include "satswin/rng.hpp"

SATSWIN_NAMESPACE_BEGIN

Var ParamStore::add(const std::string& name, Tensor init) {
  if (contains(name)) throw Error("duplicate parameter name '" + name + "'");
  Var v(std::move(init), true);
  index_.emplace(name, entries_.size());
  entries_.push_back({name, v});
  return v;
}

const Var& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("no parameter named '" + name + "'");
  return entries_[it->second].var;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.var.value().size();
  return n;
}

void ParamStore::zero_grad() const {
  for (const auto& e : entries_) e.var.zero_grad();
}

namespace init {

std::uint64_t name_key(const std::string& name) {
  std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

Tensor truncated_normal(const Shape& shape, std::uint64_t seed, const std::string& name,
                        double sigma) {
  Tensor t(shape);
  CounterRng rng = CounterRng(seed).split(name_key(name));
  for (auto& v : t.values()) v = static_cast<Real>(rng.truncated_normal(sigma));
  return t;
}

Tensor zeros(const Shape& shape) { return Tensor(shape); }
Tensor ones(const Shape& shape) { return Tensor(shape, Real(1)); }

}  // namespace init

SATSWIN_NAMESPACE_END
