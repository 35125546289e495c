#pragma once

#include <random>
#include <vector>

#include "readlab/models/layers.hpp"
#include "readlab/world/vocabulary.hpp"

namespace readlab::models {

struct DecoderShape {
  std::size_t vocab = 0;
  std::size_t max_len = 16;
  std::size_t width = 48;
  std::size_t hidden = 96;
  std::size_t blocks = 2;
};

DecoderShape default_decoder_shape();

/// Autoregressive decoder conditioned on one memory vector per sequence.
/// Each block runs causal self-attention, attention to the memory, then a
/// feed-forward layer.
struct Decoder {
  struct Block {
    TransformerBlock self;
    Parameter cross_norm_gain, cross_norm_bias;
    // With a single memory position every query puts weight 1 on it, so the
    // cross-attention output is value(memory) projected by `cross_output`.
    Parameter cross_value, cross_output;
  };

  DecoderShape shape;
  Parameter tokens, positions;
  std::vector<Block> blocks;
  Parameter final_norm_gain, final_norm_bias;
  Parameter head, head_bias;
  bool frozen = false;

  static Decoder create(const DecoderShape& shape, std::mt19937_64& rng);
  void collect(std::vector<Parameter*>& out);
  /// Marks every parameter as not requiring gradients.
  void freeze();

  /// Teacher-forced log-probabilities: memory [N, width], targets N token
  /// sequences each starting with BOS. Returns [N, T-1] where entry (n, t) is
  /// log p(y[t+1] | y[..t], memory); entries predicting PAD are 0.
  Tensor token_log_probs(Graph& g, const Tensor& memory,
                         const std::vector<world::TokenSeq>& targets);
  /// Sum of token_log_probs over each sequence: [N].
  Tensor log_likelihood(Graph& g, const Tensor& memory, const std::vector<world::TokenSeq>& targets);
};

}  // namespace readlab::models
