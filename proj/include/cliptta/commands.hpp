#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cliptta/config.hpp"
#include "cliptta/engine.hpp"

namespace cliptta {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int {
  kExitOk = 0,
  kExitAcceptanceFailure = 1,
  kExitConfigError = 2,
  kExitNumericError = 3,
};

struct CommandOptions {
  std::optional<std::filesystem::path> config_path;
  std::optional<std::uint64_t> seed;  // overrides the config seed
  std::filesystem::path out_dir = "out";
  bool dump_memory = false;
  /// simulate: run this many consecutive seeds and write mean / half-width columns.
  std::size_t multi_seed = 0;
  /// gradcheck
  std::size_t configurations = 100;
  bool flip_reg_sign = false;
};

/// Config from the options: file (or defaults) then the seed override. Throws ConfigError.
ExperimentConfig resolve_config(const CommandOptions& opts);

/// One full stream run of a configuration.
RunResult run_experiment(const ExperimentConfig& cfg);

int cmd_simulate(const CommandOptions& opts, std::ostream& out, std::ostream& err);
int cmd_gradcheck(const CommandOptions& opts, std::ostream& out, std::ostream& err);
int cmd_collapse_demo(const CommandOptions& opts, std::ostream& out, std::ostream& err);
int cmd_openset(const CommandOptions& opts, std::ostream& out, std::ostream& err);

/// Descent direction -dL/dz of one ambiguous sample projected on every prototype.
struct DirectionDecomposition {
  std::string method;
  std::vector<double> inner_products;  // one per class
};

struct AmbiguousSampleDemo {
  std::size_t predicted_class;
  std::size_t runner_up_class;
  std::size_t true_class;
  std::vector<double> q;  // class probabilities of the ambiguous sample
  std::vector<std::size_t> pseudo_counts;
  std::vector<DirectionDecomposition> directions;  // tent, cliptta
};

/// Toy batch: a dominant class holds most pseudo-labels and one sample of the runner-up class
/// is predicted as the dominant class by a small margin.
AmbiguousSampleDemo ambiguous_sample_demo(double tau = 0.1, double lambda_reg = 1.0);

}  // namespace cliptta
