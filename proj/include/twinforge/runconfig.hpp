#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "twinforge/cgan.hpp"
#include "twinforge/convergence.hpp"
#include "twinforge/signal_io.hpp"

namespace twinforge::cli {

// Minimal TOML subset: [section] headers, key = value lines with string,
// number, and boolean values, and # comments.  Keys flatten to
// "section.key".
struct TomlValue {
  enum class Kind { string, number, boolean };
  Kind kind = Kind::string;
  std::string str;
  double num = 0.0;
  bool flag = false;
};

std::map<std::string, TomlValue> parse_toml(const std::string& text);

struct ClassifierConfig {
  double c = 1.0;
  int epochs = 200;
  double holdout_fraction = 0.172;
  int generated_per_class = 1000;
};

// Fully-resolved run parameters; serialized verbatim into every manifest.
struct RunConfig {
  gan::GanConfig gan;
  PreprocessConfig preprocess;
  convergence::ConvergenceConfig convergence;
  double ratio_threshold = 1.5;
  ClassifierConfig classifier;
  std::uint64_t seed = 1;
  int threads = 0;  // 0 = hardware default, capped by TWINFORGE_THREADS

  static RunConfig defaults_for(gan::ScalePreset preset);
  void apply_preset(gan::ScalePreset preset);
  // Accepts a .toml file or a manifest .json produced by a previous run.
  void apply_config_file(const std::filesystem::path& path);
  void finalize();  // derive dependent fields and validate

  std::string to_json_string() const;
  static RunConfig from_json_string(const std::string& s);

  int effective_threads() const;
};

struct ManifestEntry {
  std::string role;
  std::string path;  // relative to the manifest directory
  std::string fnv64;
};

struct Manifest {
  std::string command;
  RunConfig config;
  std::vector<ManifestEntry> inputs;
  std::vector<ManifestEntry> outputs;

  void add_input(const std::string& role, const std::filesystem::path& file,
                 const std::filesystem::path& base);
  void add_output(const std::string& role, const std::filesystem::path& file,
                  const std::filesystem::path& base);
  void write(const std::filesystem::path& path) const;
  static Manifest read(const std::filesystem::path& path);

  // Path of the entry with this role; verifies the recorded content hash and
  // throws on missing or stale files.
  std::filesystem::path resolve_input(const std::string& role,
                                      const std::filesystem::path& base) const;
  std::filesystem::path resolve_output(const std::string& role,
                                       const std::filesystem::path& base) const;
};

}  // namespace twinforge::cli
