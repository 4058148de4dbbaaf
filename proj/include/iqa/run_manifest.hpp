#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace iqa {

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_file(const std::filesystem::path& path);

/// Record of one command invocation. Holds no timestamps or absolute output
/// locations, so identical invocations write identical manifests.
struct RunManifest {
  std::string command;
  std::string tool_version;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> config;
  std::map<std::string, std::string> inputs;   // path as given -> sha256
  std::map<std::string, std::string> weights;  // file name -> sha256
  std::map<std::string, std::string> outputs;  // path relative to the output location -> sha256

  void add_input(const std::filesystem::path& path);
  void add_weight(const std::filesystem::path& path);
  void add_output(const std::filesystem::path& root, const std::filesystem::path& path);
  /// Hashes every regular file below `root` except `skip`.
  void add_output_tree(const std::filesystem::path& root, const std::string& skip);

  std::string to_json() const;
  void write(const std::filesystem::path& path) const;
};

}  // namespace iqa
