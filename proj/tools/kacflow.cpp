#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "kacflow/cli.hpp"
#include "kacflow/errors.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Kac walk large-deviation studies"};
  app.set_version_flag("--version", kacflow::kVersion);
  app.require_subcommand(1);

  std::string config_path, out_dir = ".";
  unsigned threads = 0;
  auto* run = app.add_subcommand("run", "Run the study described by a JSON config");
  run->add_option("config", config_path, "Config file")->required();
  run->add_option("--out", out_dir, "Output directory");
  run->add_option("--threads", threads, "Replica threads")->check(CLI::PositiveNumber);

  std::string pattern;
  auto* report = app.add_subcommand("report", "Merge summary files into one CSV table on stdout");
  report->add_option("glob", pattern, "Glob of summary.json files")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*run) {
      auto config = kacflow::load_config(config_path);
      if (threads > 0) config.threads = threads;
      const auto outcome = kacflow::run(config, out_dir);
      for (const auto& row : outcome.summary["rows"])
        if (row.contains("pass"))
          std::cout << (row["pass"].get<bool>() ? "PASS " : "FAIL ") << row["metric"].get<std::string>() << " "
                    << row["parameter"].get<std::string>() << " value=" << row["value"].dump()
                    << " tolerance=" << row["tolerance"].dump() << "\n";
      return outcome.exit_code();
    }
    std::cout << kacflow::report(kacflow::expand_glob(pattern));
    return 0;
  } catch (const kacflow::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
  }
  return 2;
}
