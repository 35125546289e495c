#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "readlab/models/bundle.hpp"
#include "readlab/world/benchmark.hpp"

namespace readlab::eval {

/// Row-major embedding matrix.
struct Embeddings {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<double> data;

  std::span<const double> row(std::size_t i) const { return {data.data() + i * dim, dim}; }
};

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual Embeddings images(const std::vector<world::ImageRendering>& images) = 0;
  virtual Embeddings texts(const std::vector<world::TokenSeq>& texts) = 0;
};

/// Forward passes through a bundle's encoders; never writes to the bundle.
class BundleEmbedder : public Embedder {
 public:
  explicit BundleEmbedder(models::ModelBundle& bundle) : bundle_(bundle) {}
  Embeddings images(const std::vector<world::ImageRendering>& images) override;
  Embeddings texts(const std::vector<world::TokenSeq>& texts) override;

 private:
  models::ModelBundle& bundle_;
};

/// Gaussian vectors keyed by (seed, content): a scorer with no information.
class RandomEmbedder : public Embedder {
 public:
  RandomEmbedder(std::uint64_t seed, std::size_t dim) : seed_(seed), dim_(dim) {}
  Embeddings images(const std::vector<world::ImageRendering>& images) override;
  Embeddings texts(const std::vector<world::TokenSeq>& texts) override;

 private:
  std::uint64_t seed_;
  std::size_t dim_;
};

double cosine(std::span<const double> a, std::span<const double> b);

// Ranking rules. All comparisons are strict: a tie counts as a failure.

/// pos beats every negative. Rejects an empty negative list.
bool single_correct(double pos, std::span<const double> negs);
/// The weakest positive beats the strongest negative.
bool itt_correct(std::span<const double> pos, std::span<const double> negs);
/// The positive pair beats every positive-negative pair.
bool tot_correct(double pos_pos, std::span<const double> pos_neg);

struct RankingResult {
  std::uint64_t item_id = 0;
  std::string category;
  std::vector<double> pos_sims;  // image vs each positive
  std::vector<double> neg_sims;  // image vs each negative
  /// Text-only similarities, present for items with two positives.
  std::optional<double> pos_pos_sim;
  std::vector<double> pos_neg_sims;  // pos1 vs each negative, then pos2 vs each
  bool correct_single = false;       // first positive only
  bool correct_itt = false;
  std::optional<bool> correct_tot;
};

/// Rejects items without negatives or without positives.
std::vector<RankingResult> rank_items(Embedder& embedder, const std::vector<world::BenchmarkItem>& items);

/// Items must have exactly one positive.
double single_positive_accuracy(Embedder& embedder, const std::vector<world::BenchmarkItem>& items);
/// Items must have two positives.
double itt_accuracy(Embedder& embedder, const std::vector<world::BenchmarkItem>& items);
double tot_accuracy(Embedder& embedder, const std::vector<world::BenchmarkItem>& items);

struct RetrievalAccuracy {
  double image_to_text = 0.0;
  double text_to_image = 0.0;
};

/// Recall@1 with image i matching caption i; the match must be the unique
/// maximum of its row (column).
RetrievalAccuracy retrieval_accuracy(Embedder& embedder, const std::vector<world::ImageRendering>& images,
                                     const std::vector<world::TokenSeq>& captions);

struct SimilarityTrace {
  std::size_t epoch = 0;
  double pos_pos = 0.0;
  double pos1_neg = 0.0;
  double pos2_neg = 0.0;
};

/// Mean text-text cosines over a paraphrase suite; every negative of an item
/// contributes one pair per positive.
SimilarityTrace track_pair_similarity(Embedder& embedder, const std::vector<world::BenchmarkItem>& items,
                                      std::size_t epoch = 0);

struct Suites {
  std::vector<world::BenchmarkItem> swap;
  std::vector<world::BenchmarkItem> replace;
  std::vector<world::BenchmarkItem> paraphrase;
};

struct SummaryRow {
  std::size_t epoch = 0;
  std::string suite;
  std::string category;  // "all" for the whole suite
  std::size_t items = 0;
  double acc_single = 0.0;
  std::optional<double> acc_itt;
  std::optional<double> acc_tot;
};

/// One row per category (sorted) followed by the "all" row.
std::vector<SummaryRow> summarize(const std::vector<RankingResult>& results, std::size_t epoch,
                                  const std::string& suite);

struct BenchmarkScores {
  double acc_swap = 0.0;
  double acc_replace = 0.0;
  double acc_itt = 0.0;
  double acc_tot = 0.0;
  SimilarityTrace trace;

  /// Unweighted mean of the four accuracies.
  double average() const { return (acc_swap + acc_replace + acc_itt + acc_tot) / 4.0; }
};

struct Evaluation {
  BenchmarkScores scores;
  std::vector<SummaryRow> summary;
  std::vector<std::pair<std::string, std::vector<RankingResult>>> rankings;  // per suite
};

/// Scores every non-empty suite; accuracies of an empty suite stay 0.
Evaluation evaluate(Embedder& embedder, const Suites& suites, std::size_t epoch);

void write_rankings(const std::filesystem::path& path, const std::vector<RankingResult>& results);
std::vector<RankingResult> read_rankings(const std::filesystem::path& path);
/// Header: epoch,suite,category,items,acc_single,acc_itt,acc_tot. Missing
/// accuracies are empty fields; numbers are printed round-trip exact.
void write_summary_csv(const std::filesystem::path& path, const std::vector<SummaryRow>& rows);

}  // namespace readlab::eval
