#pragma once

// Command-line entry points: train, parse, eval, inspect and generate.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "structlab/model.hpp"
#include "structlab/training.hpp"

namespace structlab::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

/// Bad flags or configuration; maps to kUsage.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flat key=value configuration shared by every command. Command-line flags
/// are applied after the file, so they win.
struct RunConfig {
  model::ModelConfig model;
  training::TrainConfig train;
  std::string corpus;
  std::string heldout;
  std::string out;
  std::vector<std::uint64_t> seeds{1};
  std::size_t min_frequency = 1;
  bool lowercase = false;
  std::uint64_t eval_seed = 12345;

  /// Throws UsageError naming the key for unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  /// Lines of `key = value`; '#' starts a comment.
  void load(const std::filesystem::path& path);
  /// Resolved echo; feeding it back to load() reproduces this config.
  std::string echo() const;
};

/// Worker count from STRUCTLAB_THREADS (default: hardware concurrency).
std::size_t thread_budget();

/// Runs one command line (args exclude the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace structlab::cli
