#include "readlab/models/layers.hpp"

#include <cmath>

#include "readlab/tensor/ops.hpp"

namespace readlab::models {

namespace ops = readlab::tensor;

namespace {
// Large finite instead of -inf so masked rows stay finite under softmax.
constexpr double kMasked = -1e30;
}  // namespace

Parameter normal_parameter(std::string name, Shape shape, double stddev, std::mt19937_64& rng) {
  Parameter p(std::move(name), std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : p.values()) v = dist(rng);
  return p;
}

Parameter filled_parameter(std::string name, Shape shape, double value) {
  Parameter p(std::move(name), std::move(shape));
  for (double& v : p.values()) v = value;
  return p;
}

TransformerBlock TransformerBlock::create(const std::string& prefix, std::size_t width,
                                          std::size_t hidden, std::mt19937_64& rng) {
  const double sw = 1.0 / std::sqrt(static_cast<double>(width));
  const double sh = 1.0 / std::sqrt(static_cast<double>(hidden));
  return TransformerBlock{
      filled_parameter(prefix + ".attn_norm.gain", {width}, 1.0),
      filled_parameter(prefix + ".attn_norm.bias", {width}, 0.0),
      normal_parameter(prefix + ".query", {width, width}, sw, rng),
      normal_parameter(prefix + ".key", {width, width}, sw, rng),
      normal_parameter(prefix + ".value", {width, width}, sw, rng),
      normal_parameter(prefix + ".output", {width, width}, sw, rng),
      filled_parameter(prefix + ".ff_norm.gain", {width}, 1.0),
      filled_parameter(prefix + ".ff_norm.bias", {width}, 0.0),
      normal_parameter(prefix + ".ff_in", {width, hidden}, sw, rng),
      filled_parameter(prefix + ".ff_in.bias", {hidden}, 0.0),
      normal_parameter(prefix + ".ff_out", {hidden, width}, sh, rng),
      filled_parameter(prefix + ".ff_out.bias", {width}, 0.0),
  };
}

void TransformerBlock::collect(std::vector<Parameter*>& out) {
  for (auto* p : {&attn_norm_gain, &attn_norm_bias, &query, &key, &value, &output, &ff_norm_gain,
                  &ff_norm_bias, &ff_in, &ff_in_bias, &ff_out, &ff_out_bias}) {
    out.push_back(p);
  }
}

std::vector<std::uint8_t> key_padding_mask(std::span<const std::size_t> lengths, std::size_t len) {
  std::vector<std::uint8_t> mask(lengths.size() * len * len, 0);
  for (std::size_t n = 0; n < lengths.size(); ++n) {
    for (std::size_t q = 0; q < len; ++q) {
      for (std::size_t k = lengths[n]; k < len; ++k) mask[(n * len + q) * len + k] = 1;
    }
  }
  return mask;
}

std::vector<std::uint8_t> causal_mask(std::size_t count, std::size_t len) {
  std::vector<std::uint8_t> mask(count * len * len, 0);
  for (std::size_t n = 0; n < count; ++n) {
    for (std::size_t q = 0; q < len; ++q) {
      for (std::size_t k = q + 1; k < len; ++k) mask[(n * len + q) * len + k] = 1;
    }
  }
  return mask;
}

Tensor self_attention(Graph& g, TransformerBlock& b, const Tensor& x, std::size_t count,
                      std::size_t len, std::span<const std::uint8_t> mask) {
  const std::size_t width = x.shape().back();
  auto a = ops::layer_norm(x, g.param(b.attn_norm_gain), g.param(b.attn_norm_bias));
  auto q = ops::reshape(ops::matmul(a, g.param(b.query)), {count, len, width});
  auto k = ops::reshape(ops::matmul(a, g.param(b.key)), {count, len, width});
  auto v = ops::reshape(ops::matmul(a, g.param(b.value)), {count, len, width});
  auto scores = ops::scale(ops::bmm(q, k, true), 1.0 / std::sqrt(static_cast<double>(width)));
  if (!mask.empty()) scores = ops::masked_fill(scores, mask, kMasked);
  auto context = ops::reshape(ops::bmm(ops::softmax(scores), v), {count * len, width});
  return ops::add(x, ops::matmul(context, g.param(b.output)));
}

Tensor feed_forward(Graph& g, TransformerBlock& b, const Tensor& x) {
  auto a = ops::layer_norm(x, g.param(b.ff_norm_gain), g.param(b.ff_norm_bias));
  auto hidden = ops::gelu(ops::add_row(ops::matmul(a, g.param(b.ff_in)), g.param(b.ff_in_bias)));
  return ops::add(x, ops::add_row(ops::matmul(hidden, g.param(b.ff_out)), g.param(b.ff_out_bias)));
}

}  // namespace readlab::models
