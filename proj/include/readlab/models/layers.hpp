#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "readlab/tensor/tensor.hpp"

namespace readlab::models {

using tensor::Graph;
using tensor::Parameter;
using tensor::Shape;
using tensor::Tensor;

/// Normal(0, stddev) entries.
Parameter normal_parameter(std::string name, Shape shape, double stddev, std::mt19937_64& rng);
Parameter filled_parameter(std::string name, Shape shape, double value);

/// Pre-LN single-head self-attention followed by a GELU feed-forward layer.
struct TransformerBlock {
  Parameter attn_norm_gain, attn_norm_bias;
  Parameter query, key, value, output;
  Parameter ff_norm_gain, ff_norm_bias;
  Parameter ff_in, ff_in_bias, ff_out, ff_out_bias;

  static TransformerBlock create(const std::string& prefix, std::size_t width, std::size_t hidden,
                                 std::mt19937_64& rng);
  void collect(std::vector<Parameter*>& out);
};

/// Attention mask for `count` sequences of length `len`: entry
/// (n, q, k) is 1 when query q of sequence n must not see key k.
std::vector<std::uint8_t> key_padding_mask(std::span<const std::size_t> lengths, std::size_t len);
std::vector<std::uint8_t> causal_mask(std::size_t count, std::size_t len);

/// x: [count * len, width] -> same shape; residual attention sublayer.
Tensor self_attention(Graph& g, TransformerBlock& block, const Tensor& x, std::size_t count,
                      std::size_t len, std::span<const std::uint8_t> mask);
/// Residual feed-forward sublayer.
Tensor feed_forward(Graph& g, TransformerBlock& block, const Tensor& x);

}  // namespace readlab::models
