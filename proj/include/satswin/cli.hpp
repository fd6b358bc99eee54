// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "satswin/config.hpp"
#include "satswin/errors.hpp"
#include "satswin/training.hpp"

SATSWIN_NAMESPACE_BEGIN
namespace cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUser = 1;
inline constexpr int kExitInternal = 2;

/// Error caused by the operator's input (bad flags, missing files, locked run directory).
class UserError : public Error {
 public:
  using Error::Error;
};

struct OutputSettings {
  std::size_t image_every = 0;       // 0: only at the end
  std::size_t checkpoint_every = 0;  // 0: only at the end
};

struct EvalSettings {
  std::size_t every = 0;  // 0: only at the end
  std::string split = "val";  // falls back to train when empty
};

/// Merged run description; every section is validated before any compute.
struct RunConfig {
  ModelConfig model;
  std::optional<TaskConfig> task;
  train::LoopConfig loop;
  std::filesystem::path manifest;
  std::string split = "train";
  EvalSettings eval;
  OutputSettings output;
  std::uint64_t seed = 0;
};

/// Paths inside the document resolve against `base_dir`.
RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
nlohmann::json to_json(const RunConfig& rc);
RunConfig load_run_config(const std::filesystem::path& path);
/// Every violation across model, task and loop sections.
std::vector<std::string> validate_run_config(const RunConfig& rc, bool needs_task);

/// Exclusive marker file in a run directory, removed on destruction.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path path_;
};

/// Entry point shared by the executable and the tests. Returns the exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace cli
SATSWIN_NAMESPACE_END
