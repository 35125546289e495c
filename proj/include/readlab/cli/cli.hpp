#pragma once

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "readlab/train/trainer.hpp"

namespace readlab::cli {

inline constexpr const char* kToolVersion = "0.1.0";
/// Bumped when the dataset file layout changes.
inline constexpr int kDataFormatVersion = 1;

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfigError = 2,
  kMissingArtifact = 3,
  kNumericFailure = 4,
};

/// An input file or directory that is absent or unusable.
class ArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// TrainConfig plus the keys only the experiment commands read.
struct Settings {
  train::TrainConfig train;
  /// Held-out scenes behind each benchmark suite.
  std::size_t eval_scenes = 1000;
  std::size_t pretrain_epochs = 8;
  /// swap, replace, paraphrase or all.
  std::string suite = "all";

  void set(const std::string& key, const std::string& value);
  std::string to_text() const;
  static Settings from_text(const std::string& text, Settings base);
};

/// Runs one command line (without the program name) and returns the exit
/// code. Diagnostics go to stderr.
int run(const std::vector<std::string>& args);

/// Lowercase hex SHA-256 of a file's bytes.
std::string file_sha256(const std::filesystem::path& path);

}  // namespace readlab::cli
