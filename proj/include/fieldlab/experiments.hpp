#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fieldlab/config.hpp"

namespace fieldlab::cli {

// Per-kind experiment runners. Each consumes its config section, writes any
// side files (datasets, CSV tables) into out_dir, and returns the structured
// results that the dispatcher stores as results.json.
nlohmann::json run_teacherflow_experiment(const Config& cfg, const std::filesystem::path& out_dir);
nlohmann::json run_pde_experiment(const Config& cfg, const std::filesystem::path& out_dir);
nlohmann::json run_reveal_experiment(const Config& cfg, const std::filesystem::path& out_dir);
nlohmann::json run_continual_experiment(const Config& cfg, const std::filesystem::path& out_dir);
nlohmann::json run_pareto_experiment(const Config& cfg, const std::filesystem::path& out_dir);
nlohmann::json run_metrics_report_experiment(const Config& cfg, const std::filesystem::path& out_dir);

/// Loads a config, dispatches the experiment, writes results.json and
/// manifest.json. Exit codes: 0 success, 1 runtime failure, 2 invalid config.
int run_experiment(const std::string& config_path, const std::string& out_override = "",
                   std::optional<std::int64_t> seed_override = std::nullopt);

int report_command(const std::string& results_dir);
int sweep_command(const std::string& config_path, const std::vector<std::int64_t>& seeds,
                  std::int64_t jobs);

/// Full command-line entry (args exclude the program name).
int cli_main(const std::vector<std::string>& args);

std::string read_text_file(const std::string& path);
void write_text_file(const std::filesystem::path& path, const std::string& content);

}  // namespace fieldlab::cli
