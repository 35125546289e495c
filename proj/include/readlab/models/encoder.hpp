#pragma once

#include <random>
#include <vector>

#include "readlab/models/layers.hpp"
#include "readlab/world/scene.hpp"

namespace readlab::models {

struct EncoderShape {
  std::size_t vocab = 0;
  /// Id of the first token the table covers; ids are shifted by this.
  std::int64_t id_offset = 0;
  std::size_t max_len = 0;
  std::size_t width = 32;
  std::size_t hidden = 64;
  std::size_t blocks = 1;
  std::size_t out_dim = 32;
  /// Token treated as padding (masked as a key and skipped in pooling); -1 for none.
  std::int64_t pad = -1;
};

/// Token + position embeddings, pre-LN transformer blocks, final norm, masked
/// mean pooling and a linear projection to the shared space.
struct Encoder {
  EncoderShape shape;
  Parameter tokens, positions;
  std::vector<TransformerBlock> blocks;
  Parameter final_norm_gain, final_norm_bias;
  Parameter projection;

  static Encoder create(const std::string& prefix, const EncoderShape& shape, std::mt19937_64& rng);
  void collect(std::vector<Parameter*>& out);

  /// [seqs.size(), out_dim]. Rejects empty, overlong or out-of-vocabulary input.
  Tensor forward(Graph& g, const std::vector<world::TokenSeq>& seqs);
};

EncoderShape text_encoder_shape();
EncoderShape image_encoder_shape();

Tensor encode_text(Graph& g, Encoder& encoder, const std::vector<world::TokenSeq>& captions);
Tensor encode_image(Graph& g, Encoder& encoder, const std::vector<world::ImageRendering>& images);

}  // namespace readlab::models
