// SPDX-License-Identifier: Apache-2.0
#include "satswin/checkpoint.hpp"

#include "binary_io.hpp"
#include "satswin/errors.hpp"

SATSWIN_NAMESPACE_BEGIN

namespace {
constexpr char kMagic[8] = {'S', 'A', 'T', 'S', 'W', 'C', 'K', 'P'};
constexpr int kVersion = 1;
}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t.value;
  }
  return nullptr;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json index = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : ckpt.tensors) {
    const std::uint64_t nbytes = t.value.size() * 4;
    index.push_back({{"name", t.name}, {"shape", t.value.shape()}, {"offset", offset}, {"nbytes", nbytes}});
    offset += nbytes;
  }
  nlohmann::json manifest{
      {"format", "satswin-checkpoint"},
      {"version", kVersion},
      {"kind", ckpt.kind},
      {"step", ckpt.step},
      {"config", to_json(ckpt.config)},
      {"extra", ckpt.extra},
      {"tensors", index},
  };
  if (ckpt.task) manifest["task"] = to_json(*ckpt.task);
  const std::string text = manifest.dump();

  detail::LeWriter w;
  w.raw(kMagic, sizeof kMagic);
  w.u64(text.size());
  w.raw(text.data(), text.size());
  w.bytes().reserve(w.bytes().size() + offset);
  for (const auto& t : ckpt.tensors) {
    for (Real v : t.value.values()) w.f32(static_cast<float>(v));
  }
  detail::write_file(path, w.bytes());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  detail::LeReader r(bytes, path.string());
  char magic[8];
  r.raw(magic, sizeof magic);
  if (!std::equal(magic, magic + 8, kMagic)) throw FormatError(path.string() + ": not a checkpoint (bad magic)");
  const std::uint64_t len = r.u64();
  r.need(len);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(reinterpret_cast<const char*>(r.cursor()),
                                     reinterpret_cast<const char*>(r.cursor()) + len);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": manifest: " + e.what());
  }
  r.skip(len);
  Checkpoint ckpt;
  try {
    if (manifest.at("format") != "satswin-checkpoint" || manifest.at("version") != kVersion) {
      throw FormatError(path.string() + ": unsupported checkpoint format/version");
    }
    ckpt.kind = manifest.at("kind").get<std::string>();
    ckpt.step = manifest.at("step").get<std::uint64_t>();
    ckpt.config = model_config_from_json(manifest.at("config"));
    if (manifest.contains("task")) ckpt.task = task_config_from_json(manifest.at("task"));
    ckpt.extra = manifest.value("extra", nlohmann::json::object());
    const std::size_t base = r.position();
    for (const auto& entry : manifest.at("tensors")) {
      NamedTensor t;
      t.name = entry.at("name").get<std::string>();
      const Shape shape = entry.at("shape").get<Shape>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const auto nbytes = entry.at("nbytes").get<std::uint64_t>();
      if (nbytes != volume(shape) * 4) {
        throw FormatError(path.string() + ": tensor " + t.name + " declares " +
                          std::to_string(nbytes) + " bytes for shape " + to_string(shape));
      }
      if (base + offset + nbytes > bytes.size()) {
        throw FormatError(path.string() + ": truncated, tensor " + t.name + " needs bytes up to " +
                          std::to_string(base + offset + nbytes) + ", file has " +
                          std::to_string(bytes.size()));
      }
      t.value = Tensor(shape);
      const std::uint8_t* p = bytes.data() + base + offset;
      for (std::size_t i = 0; i < t.value.size(); ++i, p += 4) {
        const std::uint32_t u = std::uint32_t{p[0]} | std::uint32_t{p[1]} << 8 |
                                std::uint32_t{p[2]} << 16 | std::uint32_t{p[3]} << 24;
        t.value[i] = static_cast<Real>(std::bit_cast<float>(u));
      }
      ckpt.tensors.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": manifest: " + e.what());
  }
  return ckpt;
}

void store_params(Checkpoint& ckpt, const ParamStore& store) {
  for (const auto& e : store.entries()) ckpt.tensors.push_back({e.name, e.var.value()});
}

void restore_params(const Checkpoint& ckpt, ParamStore& store) {
  std::vector<std::string> problems;
  for (const auto& e : store.entries()) {
    const Tensor* t = ckpt.find(e.name);
    if (!t) {
      problems.push_back(e.name + ": missing from checkpoint");
    } else if (t->shape() != e.var.shape()) {
      problems.push_back(e.name + ": checkpoint " + to_string(t->shape()) + " vs model " +
                         to_string(e.var.shape()));
    }
  }
  if (!problems.empty()) {
    std::string msg = "checkpoint does not match model:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ShapeError(msg);
  }
  for (const auto& e : store.entries()) e.var.mutable_value() = *ckpt.find(e.name);
}

ParamStore params_from_checkpoint(const Checkpoint& ckpt, const std::string& prefix_filter) {
  ParamStore store;
  for (const auto& t : ckpt.tensors) {
    if (t.name.rfind("optim.", 0) == 0) continue;
    if (!prefix_filter.empty() && t.name.rfind(prefix_filter, 0) != 0) continue;
    store.add(t.name, t.value);
  }
  return store;
}

SATSWIN_NAMESPACE_END
