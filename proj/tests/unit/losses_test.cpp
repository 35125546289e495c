#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "../oracles/loss_oracle.hpp"
#include "readlab/losses/losses.hpp"
#include "readlab/tensor/grad_check.hpp"
#include "readlab/tensor/ops.hpp"

using namespace readlab;
using losses::LossWeights;
using tensor::Graph;
using tensor::Parameter;
using tensor::Tensor;
using world::TokenSeq;

namespace {

Tensor mat(Graph& g, const oracle::Mat& m) {
  std::vector<double> flat;
  for (const auto& r : m) flat.insert(flat.end(), r.begin(), r.end());
  return g.constant({m.size(), m.empty() ? 0 : m[0].size()}, flat);
}

Tensor scale_of(Graph& g, double tau) { return g.constant({1}, {1.0 / tau}); }

oracle::Mat random_mat(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  oracle::Mat m(rows, std::vector<double>(cols));
  for (auto& r : m) {
    for (auto& x : r) x = n(rng);
  }
  return m;
}

oracle::Mat flatten(const std::vector<oracle::Mat>& negs) {
  oracle::Mat out;
  for (const auto& n : negs) out.insert(out.end(), n.begin(), n.end());
  return out;
}

// Scores every target with fixed per-token probabilities (the same for all
// positions of all targets up to the list length).
class FixedScorer : public losses::SequenceScorer {
 public:
  explicit FixedScorer(std::vector<double> probs) : probs_(std::move(probs)) {}
  Tensor log_likelihood(Graph& g, const Tensor& memory, const std::vector<TokenSeq>& targets) override {
    std::vector<double> out;
    for (const auto& y : targets) {
      double s = 0.0;
      for (std::size_t t = 1; t < y.size(); ++t) s += std::log(probs_[std::min(t - 1, probs_.size() - 1)]);
      out.push_back(s);
    }
    // Tie the result to memory so the graph stays connected.
    return tensor::add(g.constant({targets.size()}, out), tensor::scale(tensor::sum_last(memory), 0.0));
  }

 private:
  std::vector<double> probs_;
};

const oracle::Mat kDiag = {{1, 0}, {0, 1}};

}  // namespace

TEST(Phi, Examples) {
  Graph g;
  auto x = g.constant({2}, {1, 0});
  auto y0 = g.constant({2}, {0, 3});
  EXPECT_NEAR(losses::phi(x, g.constant({2}, {2, 0}), scale_of(g, 1.0)).item(), std::exp(1.0), 1e-12);
  EXPECT_NEAR(losses::phi(x, y0, scale_of(g, 0.3)).item(), 1.0, 1e-12);
  auto half = g.constant({2}, {0.5, std::sqrt(0.75)});
  const double v = losses::phi(x, half, scale_of(g, 0.07)).item();
  // Direct evaluation: exp(7.142857...) = 1265.04.
  EXPECT_NEAR(v, std::exp(0.5 / 0.07), 1e-9);
  EXPECT_NEAR(v, 1265.04, 0.01);
}

TEST(Phi, RejectsNonPositiveTemperature) {
  Graph g;
  auto x = g.constant({2}, {1, 0});
  EXPECT_THROW(losses::phi(x, x, g.constant({1}, {0.0})), std::invalid_argument);
  EXPECT_THROW(losses::phi(x, x, g.constant({1}, {-2.0})), std::invalid_argument);
}

TEST(Contrastive, Examples) {
  Graph g;
  EXPECT_EQ(losses::contrastive_loss(mat(g, {{1, 2}}), mat(g, {{3, -1}}), scale_of(g, 0.07)).item(), 0.0);
  const oracle::Mat same(4, {0.3, -0.2, 0.9});
  EXPECT_NEAR(losses::contrastive_loss(mat(g, same), mat(g, same), scale_of(g, 0.07)).item(), std::log(4.0), 1e-12);
  const double diag = losses::contrastive_loss(mat(g, kDiag), mat(g, kDiag), scale_of(g, 1.0)).item();
  EXPECT_NEAR(diag, std::log(1.0 + std::exp(1.0)) - 1.0, 1e-12);
  EXPECT_NEAR(diag, 0.31326, 1e-5);
}

TEST(Contrastive, MatchesOracleOnRandomBatches) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t b = 2 + trial % 7;
    auto u = random_mat(b, 5, rng), v = random_mat(b, 5, rng);
    const double tau = 0.05 + 0.05 * trial;
    Graph g;
    EXPECT_NEAR(losses::contrastive_loss(mat(g, u), mat(g, v), scale_of(g, tau)).item(),
                static_cast<double>(oracle::contrastive(u, v, {}, tau)), 1e-11);
  }
}

TEST(HardNegative, Examples) {
  const oracle::Mat u = {{1, 0, 0}, {0, 1, 0}};
  const oracle::Mat negs = {{0, 0, 1}, {0, 0, 2}};
  Graph g;
  const double total =
      losses::hard_negative_contrastive_loss(mat(g, u), mat(g, u), mat(g, negs), scale_of(g, 1.0)).item();
  const double i2t = std::log(std::exp(1.0) + 3.0) - 1.0;
  const double t2i = std::log(1.0 + std::exp(1.0)) - 1.0;
  EXPECT_NEAR(i2t, 0.74367, 1e-5);
  EXPECT_NEAR(total, 0.5 * (i2t + t2i), 1e-12);
  EXPECT_NEAR(total, 0.52847, 1e-5);
}

TEST(HardNegative, MatchesOracleOnRandomBatches) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t b = 2 + trial % 5, m = 1 + trial % 3;
    auto u = random_mat(b, 4, rng), v = random_mat(b, 4, rng);
    std::vector<oracle::Mat> negs;
    for (std::size_t i = 0; i < b; ++i) negs.push_back(random_mat(m, 4, rng));
    const double tau = 0.07 + 0.03 * trial;
    Graph g;
    EXPECT_NEAR(losses::hard_negative_contrastive_loss(mat(g, u), mat(g, v), mat(g, flatten(negs)), scale_of(g, tau))
                    .item(),
                static_cast<double>(oracle::contrastive(u, v, negs, tau)), 1e-11);
  }
}

TEST(HardNegative, MonotoneInNegativeSimilarity) {
  // Images along axes 0..2; negative 4 (of sample 2) rotates in the plane of
  // axes 2 and 3, so only its cosine to image 2 changes.
  std::mt19937_64 rng(3);
  const oracle::Mat u = {{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}};
  auto v = random_mat(3, 4, rng), negs = random_mat(6, 4, rng);
  double previous = -1.0;
  for (double c = -0.95; c <= 0.951; c += 0.1) {
    auto n = negs;
    n[4] = {0, 0, c, std::sqrt(1 - c * c)};
    Graph g;
    const double loss =
        losses::hard_negative_contrastive_loss(mat(g, u), mat(g, v), mat(g, n), scale_of(g, 0.5)).item();
    EXPECT_GT(loss, previous) << "cos " << c;
    previous = loss;
  }
}

TEST(HardNegative, SymmetricVariantAddsOwnNegativesToTextRows) {
  const oracle::Mat u = {{1, 0, 0}, {0, 1, 0}};
  const oracle::Mat negs = {{0, 0, 1}, {0, 0, 2}};
  Graph g;
  const double total =
      losses::hard_negative_contrastive_loss(mat(g, u), mat(g, u), mat(g, negs), scale_of(g, 1.0), true).item();
  // Text row i: {e (own image), 1 (other image), 1 (own negative)}.
  const double t2i = std::log(std::exp(1.0) + 2.0) - 1.0;
  const double i2t = std::log(std::exp(1.0) + 3.0) - 1.0;
  EXPECT_NEAR(total, 0.5 * (i2t + t2i), 1e-12);
}

TEST(Reconstruction, Examples) {
  Graph g;
  auto h = g.constant({3, 48}, std::vector<double>(3 * 48, 0.2));
  const TokenSeq five = {1, 3, 5, 4, 6, 2};  // BOS + 5 predicted tokens
  FixedScorer uniform32({1.0 / 32});
  std::vector<std::vector<TokenSeq>> targets(3, std::vector<TokenSeq>(2, five));
  EXPECT_NEAR(losses::token_reconstruction_loss(h, targets, uniform32).item(), 5.0 * std::log(32.0), 1e-12);
  FixedScorer perfect({1.0});
  EXPECT_EQ(losses::token_reconstruction_loss(h, targets, perfect).item(), 0.0);
  FixedScorer halves({0.5, 0.25});
  auto h1 = g.constant({1, 48}, std::vector<double>(48, 0.2));
  const double v = losses::token_reconstruction_loss(h1, {{TokenSeq{1, 7, 2}}}, halves).item();
  EXPECT_NEAR(v, -(std::log(0.5) + std::log(0.25)), 1e-12);
  EXPECT_NEAR(v, 2.0794, 1e-4);
}

TEST(Reconstruction, UniformDecoderHeadEndToEnd) {
  std::mt19937_64 rng(4);
  auto d = models::Decoder::create(models::default_decoder_shape(), rng);
  for (auto& x : d.head.values()) x = 0.0;
  d.freeze();
  losses::DecoderScorer scorer(d);
  Graph g;
  auto h = g.constant({2, 48}, std::vector<double>(96, 0.3));
  const TokenSeq y = {1, 3, 5, 4, 6, 2};
  EXPECT_NEAR(losses::token_reconstruction_loss(h, {{y}, {y}}, scorer).item(), 5.0 * std::log(51.0), 1e-12);
}

TEST(Alignment, Examples) {
  Graph g;
  EXPECT_EQ(losses::sentence_alignment_loss(mat(g, {{1, 2}}), mat(g, {{0, 1}}), scale_of(g, 0.07)).item(), 0.0);
  const oracle::Mat same(4, {1, 1});
  EXPECT_NEAR(losses::sentence_alignment_loss(mat(g, same), mat(g, same), scale_of(g, 0.5)).item(), std::log(4.0),
              1e-12);
  EXPECT_NEAR(losses::sentence_alignment_loss(mat(g, kDiag), mat(g, kDiag), scale_of(g, 1.0)).item(),
              std::log(1.0 + std::exp(1.0)) - 1.0, 1e-12);
}

TEST(Alignment, MatchesOracleOnRandomBatches) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t b = 1 + trial % 8;
    auto v = random_mat(b, 6, rng), vp = random_mat(b, 6, rng);
    const double tau = 0.02 + 0.04 * trial;
    Graph g;
    EXPECT_NEAR(losses::sentence_alignment_loss(mat(g, v), mat(g, vp), scale_of(g, tau)).item(),
                static_cast<double>(oracle::alignment(v, vp, tau)), 1e-10);
  }
}

TEST(ReadLoss, WeightedSum) {
  Graph g;
  losses::LossComponents c{g.scalar(0.5), g.scalar(2.0), g.scalar(1.0)};
  EXPECT_NEAR(losses::read_loss(c, {0.1, 0.5}).item(), 1.2, 1e-15);
  EXPECT_EQ(losses::read_loss(c, {0.0, 0.0}).item(), 0.5);
  EXPECT_THROW(losses::read_loss(c, {-0.1, 0.5}), std::invalid_argument);
  EXPECT_THROW(losses::read_loss(c, {0.1, -0.5}), std::invalid_argument);
  losses::LossComponents partial{g.scalar(0.5), std::nullopt, std::nullopt};
  EXPECT_THROW(losses::read_loss(partial, {0.1, 0.0}), std::invalid_argument);
  EXPECT_EQ(losses::read_loss(partial, {0.0, 0.0}).item(), 0.5);
}

namespace {

// A random B x d problem whose embeddings are leaves so both gradients and
// invariances can be tested.
struct Problem {
  std::size_t b, m, d = 6;
  Parameter u, v, neg, para, h, log_scale;
  std::vector<std::vector<TokenSeq>> targets;

  Problem(std::size_t b_, std::size_t m_, std::uint64_t seed) : b(b_), m(m_) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    auto fill = [&](const char* name, tensor::Shape s) {
      Parameter p(name, s);
      for (auto& x : p.values()) x = n(rng);
      return p;
    };
    u = fill("u", {b, d});
    v = fill("v", {b, d});
    neg = fill("neg", {b * m, d});
    para = fill("para", {b, d});
    h = fill("h", {b, 48});
    log_scale = Parameter("log_scale", {1});
    log_scale.values()[0] = std::log(1.0 / (0.05 + 0.2 * std::uniform_real_distribution<double>(0, 1)(rng)));
    for (std::size_t i = 0; i < b; ++i) {
      targets.push_back({TokenSeq{1, 3, static_cast<world::TokenId>(5 + rng() % 30), 4, 2}});
    }
  }

  std::vector<Parameter*> params() { return {&u, &v, &neg, &para, &h, &log_scale}; }
};

std::vector<double> gather(const Parameter& p, const std::vector<std::size_t>& perm, std::size_t group) {
  const std::size_t row = p.size() / (p.shape()[0]);
  std::vector<double> out;
  for (std::size_t i : perm) {
    for (std::size_t k = 0; k < group; ++k) {
      auto begin = p.values().begin() + static_cast<std::ptrdiff_t>((i * group + k) * row);
      out.insert(out.end(), begin, begin + static_cast<std::ptrdiff_t>(row));
    }
  }
  return out;
}

struct Values {
  double contrastive, hard, recon, align, total;
};

Values evaluate(Problem& p, models::Decoder& dec, const std::vector<std::size_t>& perm, double scale_factor) {
  Graph g;
  auto load = [&](const Parameter& src, std::size_t group, double f) {
    auto vals = gather(src, perm, group);
    for (auto& x : vals) x *= f;
    return g.constant(src.shape(), vals);
  };
  auto u = load(p.u, 1, scale_factor), v = load(p.v, 1, scale_factor);
  auto neg = load(p.neg, p.m, scale_factor), para = load(p.para, 1, scale_factor);
  auto h = load(p.h, 1, scale_factor);
  std::vector<std::vector<TokenSeq>> targets;
  for (std::size_t i : perm) targets.push_back(p.targets[i]);
  auto s = tensor::exp(g.param(p.log_scale));
  losses::DecoderScorer scorer(dec);
  losses::LossComponents c{losses::hard_negative_contrastive_loss(u, v, neg, s),
                           losses::token_reconstruction_loss(h, targets, scorer),
                           losses::sentence_alignment_loss(v, para, s)};
  return {losses::contrastive_loss(u, v, s).item(), c.contrastive.item(), c.reconstruction->item(),
          c.alignment->item(), losses::read_loss(c, {0.1, 0.5}).item()};
}

models::Decoder frozen_decoder(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto d = models::Decoder::create(models::default_decoder_shape(), rng);
  d.freeze();
  return d;
}

}  // namespace

TEST(Invariance, BatchPermutationIsBitExact) {
  auto dec = frozen_decoder(6);
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    Problem p(5, 3, 100 + trial);
    std::vector<std::size_t> id(p.b), perm(p.b);
    std::iota(id.begin(), id.end(), 0);
    perm = id;
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto a = evaluate(p, dec, id, 1.0), b = evaluate(p, dec, perm, 1.0);
    EXPECT_EQ(a.contrastive, b.contrastive);
    EXPECT_EQ(a.hard, b.hard);
    EXPECT_EQ(a.recon, b.recon);
    EXPECT_EQ(a.align, b.align);
    EXPECT_EQ(a.total, b.total);
  }
}

TEST(Invariance, EmbeddingScale) {
  auto dec = frozen_decoder(7);
  for (int trial = 0; trial < 10; ++trial) {
    Problem p(4, 2, 200 + trial);
    std::vector<std::size_t> id(p.b);
    std::iota(id.begin(), id.end(), 0);
    const auto a = evaluate(p, dec, id, 1.0);
    for (double c : {1e-3, 0.37, 5.0, 1e4}) {
      const auto b = evaluate(p, dec, id, c);
      EXPECT_NEAR(a.contrastive, b.contrastive, 1e-10 * (1 + a.contrastive));
      EXPECT_NEAR(a.hard, b.hard, 1e-10 * (1 + a.hard));
      EXPECT_NEAR(a.recon, b.recon, 1e-9 * (1 + a.recon));
      EXPECT_NEAR(a.align, b.align, 1e-10 * (1 + a.align));
    }
  }
}

TEST(Bounds, ComponentsWithinSoftmaxBounds) {
  auto dec = frozen_decoder(8);
  for (int trial = 0; trial < 20; ++trial) {
    Problem p(2 + trial % 6, 1 + trial % 3, 300 + trial);
    std::vector<std::size_t> id(p.b);
    std::iota(id.begin(), id.end(), 0);
    const auto v = evaluate(p, dec, id, 1.0);
    const double inv_tau = std::exp(p.log_scale.values()[0]);
    const double bound = 2.0 * inv_tau + std::log(static_cast<double>(p.b * (1 + p.m)));
    EXPECT_GE(v.contrastive, 0.0);
    EXPECT_GE(v.hard, 0.0);
    EXPECT_GE(v.recon, 0.0);
    EXPECT_GE(v.align, 0.0);
    EXPECT_LE(v.hard, bound);
    EXPECT_LE(v.align, bound);
  }
}

TEST(Reduction, NoNegativesAndZeroWeightsAreBitExact) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t b = 2 + trial % 9;
    auto u = random_mat(b, 8, rng), v = random_mat(b, 8, rng), vp = random_mat(b, 8, rng);
    Graph g;
    auto s = scale_of(g, 0.01 + 0.01 * (trial % 50));
    auto base = losses::contrastive_loss(mat(g, u), mat(g, v), s);
    auto none = losses::hard_negative_contrastive_loss(mat(g, u), mat(g, v), std::nullopt, s);
    auto empty = losses::hard_negative_contrastive_loss(mat(g, u), mat(g, v), g.constant({0, 8}, {}), s);
    EXPECT_EQ(base.item(), none.item());
    EXPECT_EQ(base.item(), empty.item());
    losses::LossComponents c{base, g.scalar(3.0), losses::sentence_alignment_loss(mat(g, v), mat(g, vp), s)};
    EXPECT_EQ(losses::read_loss(c, {0.0, 0.0}).item(), base.item());
  }
}

TEST(Gradient, ReadLossMatchesFiniteDifferences) {
  auto dec = frozen_decoder(10);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Problem p(2, 1, 400 + seed);
    auto loss = [&](Graph& g) {
      auto s = tensor::exp(g.param(p.log_scale));
      losses::DecoderScorer scorer(dec);
      losses::LossComponents c{
          losses::hard_negative_contrastive_loss(g.param(p.u), g.param(p.v), g.param(p.neg), s),
          losses::token_reconstruction_loss(g.param(p.h), p.targets, scorer),
          losses::sentence_alignment_loss(g.param(p.v), g.param(p.para), s)};
      return losses::read_loss(c, {0.1, 0.5});
    };
    auto params = p.params();
    auto report = tensor::grad_check(loss, params);
    EXPECT_TRUE(report.passed) << "seed " << seed << " max rel " << report.max_rel_error;
  }
}

TEST(Gradient, ReadLossGradientIsWeightedSumOfComponents) {
  auto dec = frozen_decoder(11);
  Problem p(3, 2, 500);
  auto params = p.params();
  auto grads = [&](double alpha, double beta, int only) {
    for (auto* q : params) q->zero_grad();
    Graph g;
    auto s = tensor::exp(g.param(p.log_scale));
    losses::DecoderScorer scorer(dec);
    losses::LossComponents c{losses::hard_negative_contrastive_loss(g.param(p.u), g.param(p.v), g.param(p.neg), s),
                             losses::token_reconstruction_loss(g.param(p.h), p.targets, scorer),
                             losses::sentence_alignment_loss(g.param(p.v), g.param(p.para), s)};
    Tensor root = only == 0 ? c.contrastive : only == 1 ? *c.reconstruction : only == 2 ? *c.alignment
                                                                                     : losses::read_loss(c, {alpha, beta});
    g.backward(root);
    std::vector<double> out;
    for (auto* q : params) out.insert(out.end(), q->grad().begin(), q->grad().end());
    return out;
  };
  const auto total = grads(0.1, 0.5, 3);
  const auto gc = grads(0, 0, 0), gr = grads(0, 0, 1), ga = grads(0, 0, 2);
  for (std::size_t i = 0; i < total.size(); ++i) {
    EXPECT_NEAR(total[i], gc[i] + 0.1 * gr[i] + 0.5 * ga[i], 1e-12 * (1 + std::abs(total[i])));
  }
}
