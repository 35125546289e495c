#include "readlab/world/benchmark.hpp"

#include <random>
#include <stdexcept>

namespace readlab::world {

std::string_view to_string(SuiteKind kind) {
  switch (kind) {
    case SuiteKind::kSwap: return "swap";
    case SuiteKind::kReplace: return "replace";
    case SuiteKind::kParaphrase: return "paraphrase";
  }
  return "?";
}

SuiteKind parse_suite(std::string_view text) {
  for (auto k : {SuiteKind::kSwap, SuiteKind::kReplace, SuiteKind::kParaphrase}) {
    if (to_string(k) == text) return k;
  }
  throw std::invalid_argument("unknown suite '" + std::string(text) + "'");
}

namespace {

bool is_swap(NegativeCategory c) {
  return c == NegativeCategory::kSwapObject || c == NegativeCategory::kSwapAttribute;
}

}  // namespace

std::vector<BenchmarkItem> build_benchmark(SuiteKind kind, const std::vector<Scene>& scenes,
                                           std::uint64_t seed, const BenchmarkOptions& options) {
  if (scenes.empty()) throw std::invalid_argument("build_benchmark: empty scene list");
  std::vector<BenchmarkItem> items;
  items.reserve(scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const auto& scene = scenes[i];
    std::mt19937_64 rng(derive_seed(seed, i));
    BenchmarkItem item;
    item.item_id = items.size();
    item.scene = scene;
    item.jitter = std::uniform_int_distribution<int>(0, kNumJitter - 1)(rng);
    item.image = render_image(scene, item.jitter);
    const auto set = caption_set(scene);
    const auto& positive = set[std::uniform_int_distribution<std::size_t>(0, set.size() - 1)(rng)];
    item.positives.push_back(positive);

    if (kind == SuiteKind::kParaphrase) {
      item.positives.push_back(make_paraphrase(positive, rng()));
      item.negatives = make_hard_negatives(positive, scene, options.paraphrase_negatives, rng());
      item.category = "paraphrase";
    } else {
      std::vector<NegativeCategory> wanted;
      for (auto c : available_categories(positive, scene)) {
        if (is_swap(c) == (kind == SuiteKind::kSwap)) wanted.push_back(c);
      }
      if (wanted.empty()) continue;
      const auto cat = wanted[std::uniform_int_distribution<std::size_t>(0, wanted.size() - 1)(rng)];
      // Draw the full category set and keep the one requested.
      const auto all = make_hard_negatives(positive, scene, available_categories(positive, scene).size(), rng());
      for (const auto& n : all) {
        if (n.category == cat) item.negatives.push_back(n);
      }
      item.category = std::string(to_string(cat));
    }
    items.push_back(std::move(item));
  }
  return items;
}

}  // namespace readlab::world
