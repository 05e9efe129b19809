#include "kacflow/cli.hpp"

#include <glob.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "kacflow/errors.hpp"
#include "kacflow/walk.hpp"

namespace kacflow {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

const std::set<std::string> kKinds{"simulate",       "solve",     "lln-study", "girsanov-check",
                                   "gradflow-check", "rate-eval", "fixture"};

const std::set<std::string> kKeys{"schema_version", "name",        "kind",     "seed",    "kernel",  "d",
                                  "N",              "T",           "dt",       "grid",    "grid_sizes",
                                  "replicas",       "threads",     "method",   "interpolation",
                                  "initial",        "tilt",        "tolerances", "max_events", "g",
                                  "until",          "horizon",     "spacing",  "early_intervals",
                                  "late_intervals", "radii"};

const std::set<std::string> kExtra{"name", "max_events", "g", "until", "horizon", "spacing",
                                   "early_intervals", "late_intervals", "radii"};

[[noreturn]] void fail(const std::string& pointer, const std::string& what) {
  throw ConfigError(pointer + ": " + what);
}

double positive(const json& j, const std::string& pointer) {
  if (!j.is_number()) fail(pointer, "must be a number");
  const double x = j.get<double>();
  if (!(x > 0.0)) fail(pointer, "must be positive");
  return x;
}

long positive_integer(const json& j, const std::string& pointer) {
  if (!j.is_number_integer() || j.get<long>() < 1) fail(pointer, "must be a positive integer");
  return j.get<long>();
}

// Sub-parsers throw ConfigError without a location.
template <class F>
auto at_pointer(const std::string& pointer, F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    fail(pointer, e.what());
  } catch (const json::exception& e) {
    fail(pointer, e.what());
  }
}

Interpolation parse_interpolation(const json& j) {
  if (j == "linear") return Interpolation::linear;
  if (j == "cubic") return Interpolation::cubic;
  fail("/interpolation", "must be \"linear\" or \"cubic\"");
}

std::string format_number(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string study_name(const json& summary) {
  const auto& c = summary.at("config");
  return c.contains("name") ? c["name"].get<std::string>() : summary.at("kind").get<std::string>();
}

}  // namespace

StudyConfig parse_config(const json& j) {
  if (!j.is_object()) fail("", "configuration must be a JSON object");
  for (const auto& [key, value] : j.items())
    if (!kKeys.count(key)) fail("/" + key, "unknown field");
  if (j.contains("schema_version") && j["schema_version"] != kSchemaVersion)
    fail("/schema_version", "unsupported schema version (expected " + std::to_string(kSchemaVersion) + ")");

  StudyConfig c;
  if (!j.contains("kind") || !j["kind"].is_string()) fail("/kind", "required string");
  c.kind = j["kind"].get<std::string>();
  if (!kKinds.count(c.kind)) fail("/kind", "unknown experiment kind \"" + c.kind + "\"");
  if (!j.contains("seed")) fail("/seed", "required (no wall-clock seeding)");
  if (!j["seed"].is_number_unsigned() && !(j["seed"].is_number_integer() && j["seed"].get<long>() >= 0)) fail("/seed", "must be a non-negative integer");
  c.seed = j["seed"].get<std::uint64_t>();

  int d = 1;
  if (j.contains("d")) d = static_cast<int>(positive_integer(j["d"], "/d"));
  c.kernel = {c.kind == "fixture" ? "paper_example" : "maxwell_sigma1", d, json::object()};
  if (j.contains("kernel")) {
    const auto& k = j["kernel"];
    c.kernel = at_pointer("/kernel", [&] {
      return k.is_string() ? KernelDescriptor{k.get<std::string>(), d, json::object()} : parse_kernel_descriptor(k);
    });
    if (j.contains("d")) {
      if (k.is_object() && k.contains("dim") && k["dim"] != d) fail("/kernel/dim", "disagrees with /d");
      c.kernel.dim = d;
    }
  }
  c.grid.dim = c.kernel.dim;
  at_pointer("/kernel", [&] { make_kernel(c.kernel); });

  if (j.contains("N")) {
    const auto& N = j["N"];
    if (N.is_array()) {
      if (N.empty()) fail("/N", "must not be empty");
      for (std::size_t i = 0; i < N.size(); ++i)
        c.N.push_back(static_cast<std::size_t>(positive_integer(N[i], "/N/" + std::to_string(i))));
    } else {
      c.N.push_back(static_cast<std::size_t>(positive_integer(N, "/N")));
    }
    for (std::size_t n : c.N)
      if (n < 2) fail("/N", "needs at least two particles");
  }
  if ((c.kind == "simulate" || c.kind == "lln-study" || c.kind == "girsanov-check") && c.N.empty())
    fail("/N", "required for kind \"" + c.kind + "\"");

  if (c.kind == "gradflow-check") {
    c.interpolation = Interpolation::cubic;
    c.dt = 0.025;
  }
  if (j.contains("T")) c.T = positive(j["T"], "/T");
  if (j.contains("dt")) c.dt = positive(j["dt"], "/dt");
  if (j.contains("grid")) {
    const auto& g = j["grid"];
    if (!g.is_object()) fail("/grid", "must be an object");
    for (const auto& [key, value] : g.items())
      if (key != "vmax" && key != "n") fail("/grid/" + key, "unknown field");
    if (g.contains("vmax")) c.grid.vmax = positive(g["vmax"], "/grid/vmax");
    if (g.contains("n")) c.grid.n = static_cast<int>(positive_integer(g["n"], "/grid/n"));
  }
  if (j.contains("grid_sizes")) {
    const auto& s = j["grid_sizes"];
    if (!s.is_array()) fail("/grid_sizes", "must be an array");
    for (std::size_t i = 0; i < s.size(); ++i)
      c.grid_sizes.push_back(static_cast<int>(positive_integer(s[i], "/grid_sizes/" + std::to_string(i))));
  }
  if (j.contains("replicas")) c.replicas = static_cast<int>(positive_integer(j["replicas"], "/replicas"));
  c.threads = std::max(1u, std::thread::hardware_concurrency());
  if (j.contains("threads")) c.threads = static_cast<unsigned>(positive_integer(j["threads"], "/threads"));
  if (j.contains("method")) {
    if (!j["method"].is_string()) fail("/method", "must be a string");
    c.method = at_pointer("/method", [&] { return parse_time_method(j["method"].get<std::string>()); });
  }
  if (j.contains("interpolation")) c.interpolation = parse_interpolation(j["interpolation"]);
  if (j.contains("initial")) {
    c.initial = j["initial"];
    at_pointer("/initial", [&] { parse_initial_density(c.initial, c.kernel.dim); });
  }
  if (j.contains("tilt")) {
    c.tilt = j["tilt"];
    at_pointer("/tilt", [&] { make_tilted_kernel(c.tilt, c.kernel.dim); });
  }
  if (j.contains("tolerances")) {
    if (!j["tolerances"].is_object()) fail("/tolerances", "must be an object");
    for (const auto& [key, value] : j["tolerances"].items()) positive(value, "/tolerances/" + key);
    c.tolerances = j["tolerances"];
  }
  for (const auto& key : kExtra)
    if (j.contains(key)) c.extra[key] = j[key];
  if (c.extra.contains("name") && !c.extra["name"].is_string()) fail("/name", "must be a string");
  return c;
}

StudyConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(j);
}

json config_json(const StudyConfig& c) {
  json j = {{"schema_version", kSchemaVersion},
            {"kind", c.kind},
            {"seed", c.seed},
            {"kernel", to_json(c.kernel)},
            {"d", c.kernel.dim},
            {"T", c.T},
            {"dt", c.dt},
            {"grid", {{"vmax", c.grid.vmax}, {"n", c.grid.n}}},
            {"grid_sizes", c.grid_sizes},
            {"replicas", c.replicas},
            {"method", to_string(c.method)},
            {"interpolation", c.interpolation == Interpolation::cubic ? "cubic" : "linear"},
            {"initial", c.initial},
            {"tolerances", c.tolerances}};
  if (!c.N.empty()) j["N"] = c.N;
  if (!c.tilt.is_null()) j["tilt"] = c.tilt;
  for (const auto& [key, value] : c.extra.items()) j[key] = value;
  return j;
}

json summary_json(const StudyConfig& c, const StudyResult& r) {
  json rows = json::array();
  for (const auto& row : r.rows) {
    json x = {{"parameter", row.parameter}, {"metric", row.metric}, {"value", row.value}};
    if (row.tolerance) x["tolerance"] = *row.tolerance;
    if (row.pass) x["pass"] = *row.pass;
    rows.push_back(std::move(x));
  }
  json files = json::array();
  for (const auto& f : r.files) files.push_back(f.name);
  // Thread count is left out so the summary does not depend on it.
  return {{"schema_version", kSchemaVersion},
          {"version", kVersion},
          {"kind", c.kind},
          {"config", config_json(c)},
          {"results", r.results},
          {"rows", rows},
          {"files", files},
          {"all_pass", r.all_pass()}};
}

RunOutcome run(const StudyConfig& c, const fs::path& out) {
  fs::create_directories(out);
  const auto r = run_study(c);
  RunOutcome o{summary_json(c, r), r.all_pass()};
  auto write = [&](const std::string& name, const std::string& content) {
    std::ofstream f(out / name, std::ios::binary);
    f << content;
    if (!f) throw Error("cannot write " + (out / name).string());
  };
  write("summary.json", o.summary.dump(2) + "\n");
  for (const auto& f : r.files) write(f.name, f.content);
  return o;
}

std::string report(const std::vector<fs::path>& summaries) {
  std::ostringstream csv;
  csv << "study,parameter,metric,value,tolerance,pass\n";
  std::optional<int> version;
  for (const auto& path : summaries) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    json s;
    try {
      in >> s;
    } catch (const json::parse_error& e) {
      throw Error(path.string() + ": " + e.what());
    }
    if (!s.contains("schema_version")) throw Error(path.string() + ": missing schema_version");
    const int v = s["schema_version"].get<int>();
    if (version && *version != v)
      throw Error("conflicting schema versions " + std::to_string(*version) + " and " + std::to_string(v) + " (" +
                  path.string() + ")");
    version = v;
    const auto study = study_name(s);
    for (const auto& row : s.at("rows")) {
      csv << study << "," << row.at("parameter").get<std::string>() << "," << row.at("metric").get<std::string>()
          << "," << (row.at("value").is_number() ? format_number(row["value"].get<double>()) : "nan") << ","
          << (row.contains("tolerance") ? format_number(row["tolerance"].get<double>()) : "") << ","
          << (row.contains("pass") ? (row["pass"].get<bool>() ? "PASS" : "FAIL") : "") << "\n";
    }
  }
  return csv.str();
}

std::vector<fs::path> expand_glob(const std::string& pattern) {
  glob_t g{};
  std::vector<fs::path> paths;
  const int rc = ::glob(pattern.c_str(), 0, nullptr, &g);
  if (rc == 0)
    for (std::size_t i = 0; i < g.gl_pathc; ++i) paths.emplace_back(g.gl_pathv[i]);
  globfree(&g);
  if (rc != 0 && rc != GLOB_NOMATCH) throw Error("glob failed for " + pattern);
  std::sort(paths.begin(), paths.end());
  return paths;
}

}  // namespace kacflow
