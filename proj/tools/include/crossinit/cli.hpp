#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "crossinit/inversion.hpp"

namespace crossinit::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfigError = 2,
  kNonFinite = 3,
  kAdapterMissing = 4,
};

/// Everything a command needs. Config-file keys are the long flag names with
/// '-' replaced by '_' (see `config_keys()`).
struct RunConfig {
  std::string command;

  std::string backend = "toy";
  nlohmann::json backend_options = nlohmann::json::object();
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "crossinit_out";
  std::string run_id = "run";

  std::optional<std::filesystem::path> names;
  std::vector<std::filesystem::path> images;
  OptimizerConfig optimizer;
  std::string init_template;
  std::vector<std::string> templates;
  std::vector<std::string> super_tokens;
  int k_tokens = 2;

  std::optional<std::filesystem::path> concept_path;
  std::optional<std::string> prompt;
  int repeats = 4;
  std::optional<int> position;

  std::optional<std::filesystem::path> prompts;
  int n_per_prompt = 2;
  int sample_steps = 50;
  bool decode = false;
  std::string class_word;
  int threads = 1;

  std::string mode = "all";
};

/// Built-in defaults as a JSON object; the base layer of every run.
nlohmann::json default_config();
const std::vector<std::string>& config_keys();

/// Overlays `layer` onto `base`; unknown keys throw InvalidConfig.
void merge_config(nlohmann::json& base, const nlohmann::json& layer);

/// JSON (already merged) to RunConfig; type errors throw InvalidConfig.
RunConfig config_from_json(const nlohmann::json& j, std::string command);

/// Referenced inputs exist and the output directory can be created.
void check_paths(const RunConfig& config);

/// Parses flags, layers defaults < config file < flags, runs the command.
/// `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Hex SHA-256 of a file's bytes.
std::string file_sha256(const std::filesystem::path& path);

}  // namespace crossinit::cli
