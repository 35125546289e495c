#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "readlab/world/benchmark.hpp"

namespace readlab::world {

/// A training scene with everything batch assembly samples from: its caption
/// set plus, per caption, pregenerated paraphrases and hard negatives.
struct TrainingScene {
  Scene scene;
  std::vector<CaptionRecord> captions;
  std::vector<std::vector<CaptionRecord>> paraphrases;
  std::vector<std::vector<CaptionRecord>> negatives;
};

struct DatasetOptions {
  std::size_t hard_negatives = 3;
  std::size_t paraphrases = 1;
  double noise_fraction = 0.0;
};

std::vector<TrainingScene> build_training_set(const std::vector<Scene>& scenes,
                                              const DatasetOptions& options, std::uint64_t seed);

// JSON-lines dumps. Caption lines start with the fields
//   scene_id, role, category, token_ids, surface_text
// in that order, followed by context fields (see README).

void write_scenes(const std::filesystem::path& path, const std::vector<Scene>& scenes);
std::vector<Scene> read_scenes(const std::filesystem::path& path);

void write_training_set(const std::filesystem::path& path, const std::vector<TrainingScene>& set);
/// `scenes` supplies the Scene for every scene_id in the file.
std::vector<TrainingScene> read_training_set(const std::filesystem::path& path,
                                             const std::vector<Scene>& scenes);

void write_benchmark(const std::filesystem::path& path, const std::vector<BenchmarkItem>& items);
std::vector<BenchmarkItem> read_benchmark(const std::filesystem::path& path,
                                          const std::vector<Scene>& scenes);

}  // namespace readlab::world
