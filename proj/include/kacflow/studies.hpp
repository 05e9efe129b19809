#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kacflow/flow.hpp"
#include "kacflow/grid.hpp"
#include "kacflow/kernels.hpp"
#include "kacflow/kinetic_solver.hpp"
#include "kacflow/ldp.hpp"

namespace kacflow {

// One line of the long-format results table. Rows with a tolerance are checks.
struct ResultRow {
  std::string parameter;  // e.g. "N=256" or "" for study-wide values
  std::string metric;
  double value = 0.0;
  std::optional<double> tolerance;
  std::optional<bool> pass;
};

struct DataFile {
  std::string name;
  std::string content;
};

struct StudyResult {
  nlohmann::json results = nlohmann::json::object();
  std::vector<ResultRow> rows;
  std::vector<DataFile> files;

  void add(std::string parameter, std::string metric, double value);
  void check(std::string parameter, std::string metric, double value, double tolerance, bool pass);
  bool all_pass() const;
};

// Runs f(0..count-1) on up to `threads` workers. Results are stored by index,
// so reductions over them do not depend on scheduling.
void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& f);

struct StudyConfig {
  std::string kind;
  std::uint64_t seed = 0;
  KernelDescriptor kernel{"maxwell_sigma1", 1, {}};
  std::vector<std::size_t> N;
  double T = 1.0;
  double dt = 0.05;
  VelocityGrid grid{1, 6.0, 64};
  std::vector<int> grid_sizes;  // refinement list, empty for a single grid
  int replicas = 1;
  unsigned threads = 1;
  TimeMethod method = TimeMethod::rk4;
  Interpolation interpolation = Interpolation::linear;
  nlohmann::json initial = {{"kind", "gaussian"}};
  nlohmann::json tilt;  // tilted kernel descriptor, null when unused
  nlohmann::json extra = nlohmann::json::object();  // kind-specific fields
  // Tolerance overrides by metric name.
  nlohmann::json tolerances = nlohmann::json::object();

  double tolerance(const std::string& metric, double fallback) const;
};

StudyResult simulate_study(const StudyConfig& c);
StudyResult solve_study(const StudyConfig& c);
StudyResult lln_study(const StudyConfig& c);
StudyResult girsanov_study(const StudyConfig& c);
StudyResult rate_study(const StudyConfig& c);
StudyResult gradflow_study(const StudyConfig& c);
StudyResult fixture_study(const StudyConfig& c);

StudyResult run_study(const StudyConfig& c);

// Grid density of an initial-density descriptor, normalized on the grid.
DensityGrid initial_grid_density(const nlohmann::json& initial, const VelocityGrid& g);

// JSONL line {"t","i","j","in","out"} per event.
std::string event_log_jsonl(const EventLog& events);

}  // namespace kacflow
