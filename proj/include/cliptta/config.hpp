#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

#include "cliptta/datagen.hpp"
#include "cliptta/engine.hpp"

namespace cliptta {

/// Invalid or unreadable configuration; the message names the offending field.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  EngineConfig engine;
  StreamSpec stream;
  double eps_norm = 1e-5;

  /// Seeds both the engine and the stream.
  void set_seed(std::uint64_t seed);
  void validate() const;
};

/// Flat `key = value` text; '#' starts a comment. Unknown keys are errors.
ExperimentConfig parse_config(const std::string& text, ExperimentConfig base = {});
ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base = {});

/// Every key with its canonical value, in a fixed order. Parsing the rendered text gives back
/// an identical configuration.
std::map<std::string, std::string> config_entries(const ExperimentConfig& cfg);
std::string render_config(const ExperimentConfig& cfg);

std::string to_string(ShiftKind k);
ShiftKind parse_shift_kind(const std::string& s);

}  // namespace cliptta
