#pragma once

#include <cstdint>
#include <vector>

#include "readlab/models/decoder.hpp"

namespace readlab::models {

/// Stage-0 training of the decoder as a conditional denoising autoencoder:
/// the memory for a caption is the mean of position-specific token rows of a
/// throwaway table, with token dropout and Gaussian noise during training.
struct PretrainOptions {
  std::size_t epochs = 8;
  std::size_t batch_size = 64;
  double lr = 3e-3;
  std::size_t warmup = 50;
  double token_dropout = 0.15;
  /// Noise standard deviation relative to the RMS of each memory vector.
  double memory_noise = 0.1;
  double clip_norm = 5.0;
  std::size_t min_corpus = 100;
};

struct PretrainReport {
  std::vector<double> train_loss;
  /// Held-out per-token perplexity after each epoch.
  std::vector<double> heldout_perplexity;
  double slot_branching = 0.0;
  /// Pass threshold: 0.8 times slot_branching.
  double perplexity_bound = 0.0;
};

struct PretrainResult {
  Decoder decoder;  // frozen
  Parameter memory_table;
  PretrainReport report;
};

/// Geometric mean over predicted caption positions of the number of tokens
/// the grammar allows there.
double grammar_slot_branching();

/// Memory vectors for captions from the table: [N, width].
Tensor caption_memory(Graph& g, Parameter& table, const std::vector<world::TokenSeq>& captions,
                      std::size_t vocab);

/// Per-token perplexity of `captions` under memories from `table`.
double perplexity(Decoder& decoder, Parameter& table, const std::vector<world::TokenSeq>& captions);

/// Rejects corpora smaller than options.min_corpus.
PretrainResult pretrain_decoder(const std::vector<world::TokenSeq>& corpus,
                                const std::vector<world::TokenSeq>& heldout, std::uint64_t seed,
                                const PretrainOptions& options = {});

}  // namespace readlab::models
