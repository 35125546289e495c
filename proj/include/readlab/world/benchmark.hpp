#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "readlab/world/captions.hpp"

namespace readlab::world {

enum class SuiteKind { kSwap, kReplace, kParaphrase };

std::string_view to_string(SuiteKind kind);
SuiteKind parse_suite(std::string_view text);

struct BenchmarkItem {
  std::uint64_t item_id = 0;
  Scene scene;
  int jitter = 0;
  ImageRendering image;
  std::vector<CaptionRecord> positives;
  std::vector<CaptionRecord> negatives;
  /// Negative category for swap/replace items, "paraphrase" otherwise.
  std::string category;
};

struct BenchmarkOptions {
  /// Negatives per paraphrase-suite item.
  std::size_t paraphrase_negatives = 3;
};

/// One item per scene (swap items are skipped for scenes where no swap
/// changes the meaning). `scenes` must be disjoint from training scenes.
std::vector<BenchmarkItem> build_benchmark(SuiteKind kind, const std::vector<Scene>& scenes,
                                           std::uint64_t seed, const BenchmarkOptions& options = {});

}  // namespace readlab::world
