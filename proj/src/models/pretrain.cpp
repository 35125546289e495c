#include "readlab/models/pretrain.hpp"

#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "readlab/tensor/ops.hpp"
#include "readlab/tensor/optim.hpp"
#include "readlab/world/scene.hpp"

namespace readlab::models {

namespace ops = readlab::tensor;
using world::TokenSeq;

double grammar_slot_branching() {
  // Predicted positions: the A N is R the A N EOS. Adjectives and nouns can
  // each appear as the base word or its synonym.
  const double adj = 2.0 * world::kNumAttributes;
  const double noun = 2.0 * world::kNumNouns;
  const std::vector<double> slots = {1, adj, noun, 1, world::kNumRelations, 1, adj, noun, 1};
  double log_total = 0.0;
  for (double s : slots) log_total += std::log(s);
  return std::exp(log_total / static_cast<double>(slots.size()));
}

namespace {

struct MemoryInputs {
  std::vector<std::int64_t> rows;
  std::vector<double> weights;
  std::size_t len = 0;
};

// Row ids and averaging weights; `dropped` marks positions to leave out.
MemoryInputs memory_inputs(const std::vector<TokenSeq>& captions, std::size_t vocab,
                           const std::vector<std::vector<bool>>* dropped) {
  MemoryInputs m;
  for (const auto& c : captions) m.len = std::max(m.len, c.size());
  m.rows.assign(captions.size() * m.len, 0);
  m.weights.assign(captions.size() * m.len, 0.0);
  for (std::size_t n = 0; n < captions.size(); ++n) {
    std::size_t kept = 0;
    for (std::size_t t = 0; t < captions[n].size(); ++t) {
      if (captions[n][t] == world::Vocabulary::kPad) continue;
      if (dropped && (*dropped)[n][t]) continue;
      m.rows[n * m.len + t] = static_cast<std::int64_t>(t * vocab) + captions[n][t];
      m.weights[n * m.len + t] = 1.0;
      ++kept;
    }
    if (kept == 0) throw std::invalid_argument("caption_memory: caption without tokens");
    for (std::size_t t = 0; t < m.len; ++t) m.weights[n * m.len + t] /= static_cast<double>(kept);
  }
  return m;
}

Tensor memory_from(Graph& g, Parameter& table, const MemoryInputs& m, std::size_t count) {
  const std::size_t width = table.shape()[1];
  auto rows = ops::reshape(ops::embedding(g.param(table), m.rows), {count, m.len, width});
  auto w = g.constant({count, 1, m.len}, m.weights);
  return ops::reshape(ops::bmm(w, rows), {count, width});
}

}  // namespace

Tensor caption_memory(Graph& g, Parameter& table, const std::vector<TokenSeq>& captions, std::size_t vocab) {
  return memory_from(g, table, memory_inputs(captions, vocab, nullptr), captions.size());
}

double perplexity(Decoder& decoder, Parameter& table, const std::vector<TokenSeq>& captions) {
  constexpr std::size_t kChunk = 256;
  std::vector<double> nll;
  std::size_t tokens = 0;
  for (std::size_t start = 0; start < captions.size(); start += kChunk) {
    std::vector<TokenSeq> chunk(captions.begin() + static_cast<std::ptrdiff_t>(start),
                                captions.begin() + static_cast<std::ptrdiff_t>(std::min(captions.size(), start + kChunk)));
    Graph g;
    auto mem = caption_memory(g, table, chunk, decoder.shape.vocab);
    auto ll = decoder.log_likelihood(g, mem, chunk);
    for (double v : ll.values()) nll.push_back(-v);
    for (const auto& c : chunk) {
      for (std::size_t t = 1; t < c.size(); ++t) tokens += c[t] != world::Vocabulary::kPad;
    }
  }
  if (tokens == 0) throw std::invalid_argument("perplexity: no tokens");
  return std::exp(ops::canonical_sum(nll) / static_cast<double>(tokens));
}

PretrainResult pretrain_decoder(const std::vector<TokenSeq>& corpus, const std::vector<TokenSeq>& heldout,
                                std::uint64_t seed, const PretrainOptions& options) {
  if (corpus.size() < options.min_corpus) {
    throw std::invalid_argument("pretrain_decoder: corpus has " + std::to_string(corpus.size()) +
                                " captions, need at least " + std::to_string(options.min_corpus));
  }
  if (heldout.empty()) throw std::invalid_argument("pretrain_decoder: empty held-out set");
  std::mt19937_64 rng(world::derive_seed(seed, 0x6465636fULL));
  const auto shape = default_decoder_shape();
  PretrainResult result;
  result.decoder = Decoder::create(shape, rng);
  result.memory_table = normal_parameter("pretrain.memory", {shape.max_len * shape.vocab, shape.width}, 1.0, rng);
  result.report.slot_branching = grammar_slot_branching();
  result.report.perplexity_bound = 0.8 * result.report.slot_branching;

  std::vector<Parameter*> params;
  result.decoder.collect(params);
  params.push_back(&result.memory_table);
  tensor::AdamW opt(params, std::vector<bool>(params.size(), false), {});

  const std::size_t bs = options.batch_size;
  const std::size_t steps_per_epoch = (corpus.size() + bs - 1) / bs;
  const std::uint64_t total = steps_per_epoch * options.epochs;
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::bernoulli_distribution drop(options.token_dropout);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uint64_t step = 0;

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<double> losses;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t count = std::min(bs, order.size() - start);
      std::vector<TokenSeq> batch;
      std::vector<std::vector<bool>> dropped;
      for (std::size_t i = 0; i < count; ++i) {
        const auto& c = corpus[order[start + i]];
        batch.push_back(c);
        std::vector<bool> d(c.size());
        for (std::size_t t = 0; t < c.size(); ++t) d[t] = drop(rng);
        if (std::all_of(d.begin(), d.end(), [](bool b) { return b; })) d[0] = false;
        dropped.push_back(std::move(d));
      }
      for (auto* p : params) p->zero_grad();
      Graph g;
      auto mem = memory_from(g, result.memory_table, memory_inputs(batch, shape.vocab, &dropped), count);
      std::vector<double> noise(mem.size());
      auto mv = mem.values();
      for (std::size_t n = 0; n < count; ++n) {
        double ss = 0.0;
        for (std::size_t j = 0; j < shape.width; ++j) ss += mv[n * shape.width + j] * mv[n * shape.width + j];
        const double rms = std::sqrt(ss / static_cast<double>(shape.width));
        for (std::size_t j = 0; j < shape.width; ++j) {
          noise[n * shape.width + j] = options.memory_noise * rms * gauss(rng);
        }
      }
      mem = ops::add(mem, g.constant(mem.shape(), std::move(noise)));
      auto loss = ops::neg(ops::mean(result.decoder.log_likelihood(g, mem, batch)));
      g.backward(loss);
      losses.push_back(loss.item());
      tensor::clip_grad_norm(params, options.clip_norm);
      opt.step(tensor::warmup_cosine_lr(step, options.warmup, total, options.lr));
      ++step;
    }
    result.report.train_loss.push_back(ops::canonical_sum(losses) / static_cast<double>(losses.size()));
    result.report.heldout_perplexity.push_back(perplexity(result.decoder, result.memory_table, heldout));
  }
  result.decoder.freeze();
  return result;
}

}  // namespace readlab::models
