#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "readlab/eval/metrics.hpp"
#include "readlab/losses/losses.hpp"
#include "readlab/models/bundle.hpp"
#include "readlab/tensor/optim.hpp"
#include "readlab/world/dataset.hpp"

namespace readlab::train {

enum class ReconTarget { kAlternative, kOriginal };
enum class AlignSource { kRuleParaphrase, kCaptionSetUnion };

std::string to_string(ReconTarget t);
std::string to_string(AlignSource s);

/// Bad configuration values or files.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A non-finite loss or gradient during training.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::size_t batch_size = 64;
  std::size_t m_negatives = 3;
  std::size_t k_targets = 1;
  double alpha = 0.1;
  double beta = 0.5;
  double lr = 3e-3;
  std::size_t warmup = 50;
  std::size_t epochs = 30;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
  ReconTarget recon_target = ReconTarget::kAlternative;
  AlignSource align_source = AlignSource::kRuleParaphrase;
  std::size_t num_paraphrases = 1;
  double noise_fraction = 0.0;
  bool shared_temperature = true;
  /// Caption i also competes with its own negatives for image i.
  bool symmetric_negatives = false;
  double clip_norm = 5.0;
  /// Training scenes; with batch_size this fixes the steps per epoch.
  std::size_t scenes = 2000;
  /// Keep every per-epoch checkpoint instead of only the latest.
  bool keep_checkpoints = false;

  /// Throws ConfigError.
  void validate() const;
  /// Sets one field from its text form; throws ConfigError on an unknown key
  /// or an unparsable value.
  void set(const std::string& key, const std::string& value);
  /// Every field as key=value lines in declaration order.
  std::string to_text() const;
  /// Applies lines "key = value" to `base`; blank lines and lines starting
  /// with '#' are skipped.
  static TrainConfig from_text(const std::string& text, TrainConfig base);
  static TrainConfig from_text(const std::string& text);
  /// SHA-256 of to_text().
  std::string hash() const;
};

/// Paraphrase and negative counts and noise level the dataset must be built with.
world::DatasetOptions dataset_options(const TrainConfig& config);

std::size_t steps_per_epoch(const TrainConfig& config);
std::size_t total_steps(const TrainConfig& config);

/// Warmup-cosine rate for the given step of a run with this config.
double lr_schedule(std::uint64_t step, const TrainConfig& config);

struct BatchSample {
  std::vector<std::size_t> scene_index;
  std::vector<world::ImageRendering> images;
  std::vector<world::TokenSeq> captions;
  /// B * M, sample-major.
  std::vector<world::TokenSeq> negatives;
  /// B lists of K reconstruction targets.
  std::vector<std::vector<world::TokenSeq>> targets;
  std::vector<world::TokenSeq> paraphrases;
};

/// Per-scene sampling for the given scenes (distinct indices into `dataset`).
BatchSample assemble_batch(const std::vector<world::TrainingScene>& dataset, const std::vector<std::size_t>& scenes,
                           const TrainConfig& config, std::mt19937_64& rng);

/// B distinct scenes drawn uniformly, then assemble_batch. Rejects a dataset
/// smaller than B.
BatchSample sample_batch(const std::vector<world::TrainingScene>& dataset, const TrainConfig& config,
                         std::mt19937_64& rng);

struct StepReport {
  double total = 0.0;
  double contrastive = 0.0;
  /// Absent when the component's weight is zero and it was not computed.
  std::optional<double> reconstruction;
  std::optional<double> alignment;
  double tau = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
};

struct LossTensors {
  losses::LossComponents components;
  tensor::Tensor total;
};

/// Builds the training loss of one batch on `g`. Components with zero weight
/// are skipped unless `all_components`. `align_log_scale` replaces the shared
/// temperature in the alignment term when given.
LossTensors batch_loss(tensor::Graph& g, models::ModelBundle& bundle, const BatchSample& batch,
                       const TrainConfig& config, tensor::Parameter* align_log_scale = nullptr,
                       bool all_components = false);

/// Owns the model and optimizer state of a stage-1 run.
class Trainer {
 public:
  /// Rejects an unfrozen decoder and an invalid config.
  Trainer(TrainConfig config, models::ModelBundle bundle);
  ~Trainer();
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  /// One clipped AdamW update at the scheduled learning rate. Throws
  /// NumericError on a non-finite loss, leaving parameters untouched.
  StepReport step(const BatchSample& batch);
  /// As step() with an explicit learning rate.
  StepReport step(const BatchSample& batch, double lr);

  models::ModelBundle& bundle();
  const TrainConfig& config() const;
  std::uint64_t steps() const;
  /// Completed epochs.
  std::size_t epoch() const;
  void set_epoch(std::size_t epoch);
  std::mt19937_64& rng();
  /// Separate alignment temperature, or null when shared.
  tensor::Parameter* align_log_scale();

  /// Bundle, moments, counters, config and RNG state.
  void save(const std::filesystem::path& path);
  /// Rejects a checkpoint written under a different config.
  static std::unique_ptr<Trainer> load(const std::filesystem::path& path, const TrainConfig& config);

 private:
  struct State;
  std::unique_ptr<State> state_;
};

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double loss_total = 0.0;
  double loss_contrastive = 0.0;
  std::optional<double> loss_recon;
  std::optional<double> loss_align;
  eval::BenchmarkScores scores;
  double tau = 0.0;

  double sim_pos_pos() const { return scores.trace.pos_pos; }
  double sim_pos_neg() const { return (scores.trace.pos1_neg + scores.trace.pos2_neg) / 2.0; }
};

/// One JSON object with keys epoch, loss_total, loss_contrastive, loss_recon,
/// loss_align, acc_swap, acc_replace, acc_itt, acc_tot, sim_pos_pos,
/// sim_pos_neg, tau. Skipped loss components are null.
std::string metrics_json(const EpochMetrics& m);
std::vector<EpochMetrics> read_metrics(const std::filesystem::path& path);

struct RunOptions {
  /// metrics.jsonl and checkpoints go here when set.
  std::optional<std::filesystem::path> out_dir;
  /// Continue from this checkpoint instead of starting fresh.
  std::optional<std::filesystem::path> resume_from;
  /// Return once this many epochs are complete; the schedule still spans
  /// config.epochs.
  std::optional<std::size_t> stop_after;
  /// When set, only epochs it accepts are evaluated, reported and added to
  /// history and metrics.jsonl. Checkpoints are still written every epoch.
  std::function<bool(std::size_t epoch)> evaluate_epoch;
  /// Called after each epoch's evaluation.
  std::function<void(const EpochMetrics&, const eval::Evaluation&)> on_epoch;
};

struct RunResult {
  std::vector<EpochMetrics> history;
  std::unique_ptr<Trainer> trainer;
};

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::size_t epoch);

/// Stage-1 training from a frozen decoder: per-epoch evaluation on `suites`,
/// metrics and checkpoints. Rejects an unfrozen decoder or a dataset whose
/// size differs from config.scenes.
RunResult run_training(const TrainConfig& config, const std::vector<world::TrainingScene>& dataset,
                       const eval::Suites& suites, const models::Decoder& decoder, const RunOptions& options = {});

}  // namespace readlab::train
