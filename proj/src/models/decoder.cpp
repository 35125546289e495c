#include "readlab/models/decoder.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "readlab/tensor/ops.hpp"

namespace readlab::models {

namespace ops = readlab::tensor;
using world::Vocabulary;

namespace {
constexpr double kMemoryEps = 1e-18;
}  // namespace

DecoderShape default_decoder_shape() {
  DecoderShape s;
  s.vocab = Vocabulary::standard().size();
  return s;
}

Decoder Decoder::create(const DecoderShape& shape, std::mt19937_64& rng) {
  Decoder d;
  d.shape = shape;
  const double sw = 1.0 / std::sqrt(static_cast<double>(shape.width));
  d.tokens = normal_parameter("decoder.tokens", {shape.vocab, shape.width}, 0.5, rng);
  d.positions = normal_parameter("decoder.positions", {shape.max_len, shape.width}, 0.5, rng);
  for (std::size_t b = 0; b < shape.blocks; ++b) {
    const std::string prefix = "decoder.block" + std::to_string(b);
    d.blocks.push_back(Block{
        TransformerBlock::create(prefix, shape.width, shape.hidden, rng),
        filled_parameter(prefix + ".cross_norm.gain", {shape.width}, 1.0),
        filled_parameter(prefix + ".cross_norm.bias", {shape.width}, 0.0),
        normal_parameter(prefix + ".cross_value", {shape.width, shape.width}, sw, rng),
        normal_parameter(prefix + ".cross_output", {shape.width, shape.width}, sw, rng),
    });
  }
  d.final_norm_gain = filled_parameter("decoder.final_norm.gain", {shape.width}, 1.0);
  d.final_norm_bias = filled_parameter("decoder.final_norm.bias", {shape.width}, 0.0);
  d.head = normal_parameter("decoder.head", {shape.width, shape.vocab}, sw, rng);
  d.head_bias = filled_parameter("decoder.head.bias", {shape.vocab}, 0.0);
  return d;
}

void Decoder::collect(std::vector<Parameter*>& out) {
  out.push_back(&tokens);
  out.push_back(&positions);
  for (auto& b : blocks) {
    b.self.collect(out);
    out.push_back(&b.cross_norm_gain);
    out.push_back(&b.cross_norm_bias);
    out.push_back(&b.cross_value);
    out.push_back(&b.cross_output);
  }
  out.push_back(&final_norm_gain);
  out.push_back(&final_norm_bias);
  out.push_back(&head);
  out.push_back(&head_bias);
}

void Decoder::freeze() {
  frozen = true;
  std::vector<Parameter*> params;
  collect(params);
  for (auto* p : params) p->set_requires_grad(false);
}

Tensor Decoder::token_log_probs(Graph& g, const Tensor& memory,
                                const std::vector<world::TokenSeq>& targets) {
  const std::size_t count = targets.size();
  if (count == 0) throw std::invalid_argument("decoder: no targets");
  if (memory.shape() != Shape{count, shape.width}) {
    throw tensor::ShapeError("decoder: memory " + tensor::to_string(memory.shape()) + " for " +
                             std::to_string(count) + " targets of width " + std::to_string(shape.width));
  }
  std::size_t full = 0;
  for (const auto& y : targets) {
    if (y.size() < 2) throw std::invalid_argument("decoder: target needs at least BOS and one token");
    if (y.front() != Vocabulary::kBos) throw std::invalid_argument("decoder: target must start with BOS");
    for (auto id : y) {
      if (id < 0 || static_cast<std::size_t>(id) >= shape.vocab) {
        throw std::invalid_argument("decoder: token id " + std::to_string(id) + " out of vocabulary");
      }
    }
    full = std::max(full, y.size());
  }
  if (full > shape.max_len) {
    throw std::invalid_argument("decoder: target of length " + std::to_string(full) + " exceeds maximum " +
                                std::to_string(shape.max_len));
  }
  const std::size_t len = full - 1;
  std::vector<std::int64_t> inputs(count * len, Vocabulary::kPad), pos(count * len);
  std::vector<std::size_t> next(count * len, Vocabulary::kPad);
  std::vector<double> keep(count * len, 0.0);
  std::vector<std::size_t> row_of(count * len);
  for (std::size_t n = 0; n < count; ++n) {
    const auto& y = targets[n];
    for (std::size_t t = 0; t < len; ++t) {
      const std::size_t i = n * len + t;
      pos[i] = static_cast<std::int64_t>(t);
      row_of[i] = n;
      if (t < y.size()) inputs[i] = y[t];
      if (t + 1 < y.size()) {
        next[i] = static_cast<std::size_t>(y[t + 1]);
        keep[i] = y[t + 1] == Vocabulary::kPad ? 0.0 : 1.0;
      }
    }
  }

  auto x = ops::add(ops::embedding(g.param(tokens), inputs), ops::embedding(g.param(positions), pos));
  const auto mask = causal_mask(count, len);
  for (auto& b : blocks) {
    x = self_attention(g, b.self, x, count, len, mask);
    // Tiny epsilon keeps the decoder invariant to the scale of the memory.
    auto m = ops::layer_norm(memory, g.param(b.cross_norm_gain), g.param(b.cross_norm_bias), kMemoryEps);
    auto cross = ops::matmul(ops::matmul(m, g.param(b.cross_value)), g.param(b.cross_output));
    x = ops::add(x, ops::gather_rows(cross, row_of));
    x = feed_forward(g, b.self, x);
  }
  x = ops::layer_norm(x, g.param(final_norm_gain), g.param(final_norm_bias));
  auto logits = ops::add_row(ops::matmul(x, g.param(head)), g.param(head_bias));
  auto picked = ops::pick(ops::log_softmax(logits), next);
  return ops::reshape(ops::mul(picked, g.constant({count * len}, std::move(keep))), {count, len});
}

Tensor Decoder::log_likelihood(Graph& g, const Tensor& memory, const std::vector<world::TokenSeq>& targets) {
  return ops::sum_last(token_log_probs(g, memory, targets));
}

}  // namespace readlab::models
