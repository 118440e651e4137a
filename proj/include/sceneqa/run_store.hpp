#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace sceneqa::runs {

inline constexpr std::string_view kToolVersion = "0.1.0";

struct RunManifest {
  std::string run_id;
  std::string command;
  std::string config_snapshot;                 // canonical JSON text
  std::map<std::string, std::string> inputs;   // path -> sha256
  std::map<std::string, std::string> outputs;  // path -> sha256
  std::string started_at;                      // ISO 8601 UTC
  std::string finished_at;
  std::string tool_version = std::string(kToolVersion);

  bool operator==(const RunManifest&) const = default;
};

nlohmann::json to_json(const RunManifest& m);
RunManifest manifest_from_json(const nlohmann::json& j);

std::string utc_now_iso8601();

// Starts a manifest: assigns a fresh run id, stamps the start time and
// digests every input now, before the command touches anything.
RunManifest begin_run(const std::string& command, const nlohmann::json& config,
                      const std::vector<std::filesystem::path>& inputs);

// Append-only JSONL registry (registry.jsonl) under a runs directory.
class RunRegistry {
 public:
  explicit RunRegistry(std::filesystem::path dir);

  // RUNS_DIR if set, otherwise `fallback`.
  static std::filesystem::path resolve_dir(const std::filesystem::path& fallback);

  // Digests `outputs` (which must exist), stamps the finish time and appends
  // under an exclusive file lock. Throws IoError on missing outputs, a
  // duplicate run id or a corrupt registry.
  std::string record_run(RunManifest manifest, const std::vector<std::filesystem::path>& outputs);

  std::vector<RunManifest> list() const;
  const std::filesystem::path& registry_path() const { return path_; }

 private:
  std::filesystem::path dir_;
  std::filesystem::path path_;
};

}  // namespace sceneqa::runs
