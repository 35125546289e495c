#include "readlab/models/encoder.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "readlab/tensor/ops.hpp"
#include "readlab/world/vocabulary.hpp"

namespace readlab::models {

namespace ops = readlab::tensor;

Encoder Encoder::create(const std::string& prefix, const EncoderShape& shape, std::mt19937_64& rng) {
  Encoder e;
  e.shape = shape;
  e.tokens = normal_parameter(prefix + ".tokens", {shape.vocab, shape.width}, 0.1, rng);
  e.positions = normal_parameter(prefix + ".positions", {shape.max_len, shape.width}, 0.1, rng);
  for (std::size_t b = 0; b < shape.blocks; ++b) {
    e.blocks.push_back(TransformerBlock::create(prefix + ".block" + std::to_string(b), shape.width,
                                                shape.hidden, rng));
  }
  e.final_norm_gain = filled_parameter(prefix + ".final_norm.gain", {shape.width}, 1.0);
  e.final_norm_bias = filled_parameter(prefix + ".final_norm.bias", {shape.width}, 0.0);
  e.projection = normal_parameter(prefix + ".projection", {shape.width, shape.out_dim},
                                  1.0 / std::sqrt(static_cast<double>(shape.width)), rng);
  return e;
}

void Encoder::collect(std::vector<Parameter*>& out) {
  out.push_back(&tokens);
  out.push_back(&positions);
  for (auto& b : blocks) b.collect(out);
  out.push_back(&final_norm_gain);
  out.push_back(&final_norm_bias);
  out.push_back(&projection);
}

Tensor Encoder::forward(Graph& g, const std::vector<world::TokenSeq>& seqs) {
  if (seqs.empty()) throw std::invalid_argument("encoder: no sequences");
  std::size_t len = 0;
  for (const auto& s : seqs) len = std::max(len, s.size());
  if (len == 0) throw std::invalid_argument("encoder: empty sequence");
  if (len > shape.max_len) {
    throw std::invalid_argument("encoder: sequence of length " + std::to_string(len) +
                                " exceeds maximum " + std::to_string(shape.max_len));
  }
  const std::size_t count = seqs.size();
  std::vector<std::int64_t> ids(count * len, 0);
  std::vector<std::int64_t> pos(count * len);
  std::vector<std::size_t> lengths(count);
  std::vector<double> pool(count * len, 0.0);
  for (std::size_t n = 0; n < count; ++n) {
    const auto& s = seqs[n];
    std::size_t real = 0;
    for (std::size_t t = 0; t < len; ++t) {
      pos[n * len + t] = static_cast<std::int64_t>(t);
      if (t >= s.size()) continue;
      const auto id = s[t] - shape.id_offset;
      if (id < 0 || static_cast<std::size_t>(id) >= shape.vocab) {
        throw std::invalid_argument("encoder: token id " + std::to_string(s[t]) + " out of vocabulary");
      }
      ids[n * len + t] = id;
      if (s[t] != shape.pad) real = t + 1;
    }
    if (real == 0) throw std::invalid_argument("encoder: sequence has no real tokens");
    lengths[n] = real;
    for (std::size_t t = 0; t < real; ++t) {
      if (s[t] != shape.pad) pool[n * len + t] = 1.0;
    }
    double total = 0.0;
    for (std::size_t t = 0; t < real; ++t) total += pool[n * len + t];
    for (std::size_t t = 0; t < real; ++t) pool[n * len + t] /= total;
  }

  auto x = ops::add(ops::embedding(g.param(tokens), ids), ops::embedding(g.param(positions), pos));
  const bool padded = std::any_of(lengths.begin(), lengths.end(), [&](std::size_t l) { return l < len; });
  const auto mask = padded ? key_padding_mask(lengths, len) : std::vector<std::uint8_t>{};
  for (auto& b : blocks) {
    x = self_attention(g, b, x, count, len, mask);
    x = feed_forward(g, b, x);
  }
  x = ops::layer_norm(x, g.param(final_norm_gain), g.param(final_norm_bias));
  auto weights = g.constant({count, 1, len}, std::move(pool));
  auto pooled = ops::reshape(ops::bmm(weights, ops::reshape(x, {count, len, shape.width})),
                             {count, shape.width});
  return ops::matmul(pooled, g.param(projection));
}

EncoderShape text_encoder_shape() {
  EncoderShape s;
  s.vocab = world::Vocabulary::standard().size();
  s.id_offset = 0;
  s.max_len = 16;
  s.width = 32;
  s.hidden = 64;
  s.blocks = 2;
  s.out_dim = 32;
  s.pad = world::Vocabulary::kPad;
  return s;
}

EncoderShape image_encoder_shape() {
  const auto& v = world::Vocabulary::standard();
  EncoderShape s;
  s.vocab = v.visual_size();
  s.id_offset = static_cast<std::int64_t>(v.visual_offset());
  s.max_len = 6;
  s.width = 32;
  s.hidden = 64;
  s.blocks = 1;
  s.out_dim = 32;
  return s;
}

Tensor encode_text(Graph& g, Encoder& encoder, const std::vector<world::TokenSeq>& captions) {
  return encoder.forward(g, captions);
}

Tensor encode_image(Graph& g, Encoder& encoder, const std::vector<world::ImageRendering>& images) {
  std::vector<world::TokenSeq> seqs;
  seqs.reserve(images.size());
  for (const auto& im : images) seqs.emplace_back(im.tokens.begin(), im.tokens.end());
  return encoder.forward(g, seqs);
}

}  // namespace readlab::models
