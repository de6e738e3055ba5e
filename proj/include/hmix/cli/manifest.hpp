#pragma once

// Provenance record written next to every command's outputs.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace hmix {

inline constexpr std::string_view kManifestVersion = "hmix-manifest-v1";

std::string sha256_file(const std::filesystem::path& path);
std::string sha256_hex(std::string_view bytes);

struct RunManifest {
  std::string command;
  std::vector<std::string> arguments;
  std::string config_hash;
  std::vector<std::uint64_t> seeds;
  std::vector<std::pair<std::string, std::string>> inputs;  // path, sha256
  std::vector<std::string> outputs;                          // relative to the output directory
  std::string started_at;
  std::string finished_at;

  void add_input(const std::filesystem::path& path);
  nlohmann::json to_json() const;
  // Writes <dir>/manifest.json.
  void write(const std::filesystem::path& dir) const;
};

std::string utc_timestamp();

}  // namespace hmix
