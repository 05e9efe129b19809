#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "kacflow/studies.hpp"

namespace kacflow {

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kVersion = "0.1.0";

// Validates a run configuration. Errors are ConfigError with a JSON pointer
// prefix, e.g. "/seed: required".
StudyConfig parse_config(const nlohmann::json& j);
StudyConfig load_config(const std::filesystem::path& path);
// Normalized echo of a configuration, with every default filled in.
nlohmann::json config_json(const StudyConfig& c);

nlohmann::json summary_json(const StudyConfig& c, const StudyResult& r);

struct RunOutcome {
  nlohmann::json summary;
  bool all_pass = true;
  int exit_code() const { return all_pass ? 0 : 1; }
};

// Runs the study and writes summary.json plus its data files into `out`.
RunOutcome run(const StudyConfig& c, const std::filesystem::path& out);

// Long-format CSV: study,parameter,metric,value,tolerance,pass.
std::string report(const std::vector<std::filesystem::path>& summaries);
// Summaries matching a glob pattern, sorted by path.
std::vector<std::filesystem::path> expand_glob(const std::string& pattern);

}  // namespace kacflow
