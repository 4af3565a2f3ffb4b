#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

namespace featlab {

inline constexpr const char* kToolVersion = "0.3.0";
inline constexpr const char* kOutputRootEnv = "FEATLAB_OUTPUT_ROOT";

std::string sha256_hex(const std::string& data);

struct RunManifest {
  std::string command;
  nlohmann::json config;  // every default materialized
  std::string input;      // config path or empty
  std::string output_dir;
  std::uint64_t seed = 0;
  double wall_seconds = 0.0;

  // Hash over the reproducibility-relevant fields only (command, config, seed,
  // tool version, PRNG id), so reruns write identical header lines.
  std::string hash() const;
  std::string header() const { return "featlab manifest=" + hash(); }
  nlohmann::json to_json() const;
};

// Output directory: explicit path if given, else $FEATLAB_OUTPUT_ROOT/<name>, else ./out/<name>.
std::filesystem::path resolve_output_dir(const std::string& explicit_dir, const std::string& name);

void write_json(const nlohmann::json& j, const std::filesystem::path& path,
                const std::string& header_comment = "");
// Parses JSON, skipping leading '#' comment lines.
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace featlab
