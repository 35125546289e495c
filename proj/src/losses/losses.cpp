#include "readlab/losses/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "readlab/tensor/ops.hpp"

namespace readlab::losses {

namespace ops = readlab::tensor;

namespace {

void check_scale(const Tensor& s) {
  if (s.size() != 1) throw tensor::ShapeError("logit scale must have one element, got " + tensor::to_string(s.shape()));
  const double v = s.values()[0];
  if (!(v > 0.0) || !std::isfinite(v)) {
    throw std::invalid_argument("temperature must be positive and finite (logit scale " + std::to_string(v) + ")");
  }
}

void check_pair(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape().size() != 2 || a.shape() != b.shape() || a.shape()[0] == 0) {
    throw tensor::ShapeError(std::string(what) + ": expected equal [B, d] inputs, got " +
                             tensor::to_string(a.shape()) + " and " + tensor::to_string(b.shape()));
  }
}

Tensor scaled(const Tensor& x, const Tensor& s) { return ops::mul_scalar(x, ops::reshape(s, {})); }

std::vector<std::size_t> diagonal(std::size_t b) {
  std::vector<std::size_t> idx(b);
  for (std::size_t i = 0; i < b; ++i) idx[i] = i;
  return idx;
}

// Mean over rows of -log softmax(logits)[row, target[row]].
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> target) {
  return ops::neg(ops::mean(ops::pick(ops::log_softmax(logits, -1), target)));
}

}  // namespace

Tensor phi(const Tensor& x, const Tensor& y, const Tensor& logit_scale) {
  check_scale(logit_scale);
  return ops::exp(scaled(ops::cosine_similarity(x, y), logit_scale));
}

Tensor cosine_matrix(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[1]) {
    throw tensor::ShapeError("cosine_matrix: " + tensor::to_string(a.shape()) + " vs " + tensor::to_string(b.shape()));
  }
  return ops::bmm(ops::reshape(ops::l2_normalize(a), {1, a.shape()[0], a.shape()[1]}),
                  ops::reshape(ops::l2_normalize(b), {1, b.shape()[0], b.shape()[1]}), true);
}

Tensor contrastive_loss(const Tensor& u, const Tensor& v, const Tensor& logit_scale) {
  return hard_negative_contrastive_loss(u, v, std::nullopt, logit_scale);
}

Tensor hard_negative_contrastive_loss(const Tensor& u, const Tensor& v, const std::optional<Tensor>& negatives,
                                      const Tensor& logit_scale, bool symmetric) {
  check_pair(u, v, "contrastive loss");
  check_scale(logit_scale);
  const std::size_t b = u.shape()[0], d = u.shape()[1];
  const auto diag = diagonal(b);
  const bool has_negatives = negatives && negatives->size() > 0;
  std::size_t m = 0;
  if (has_negatives) {
    const auto& ns = negatives->shape();
    if (ns.size() != 2 || ns[1] != d || ns[0] % b != 0) {
      throw tensor::ShapeError("hard negatives " + tensor::to_string(ns) + " do not fit a batch of " +
                               std::to_string(b) + " x " + std::to_string(d));
    }
    m = ns[0] / b;
  }

  auto pair_logits = scaled(ops::reshape(cosine_matrix(u, v), {b, b}), logit_scale);
  Tensor image_to_text, text_to_image;
  if (!has_negatives) {
    image_to_text = cross_entropy(pair_logits, diag);
  } else {
    const Tensor texts[] = {v, *negatives};
    auto all = scaled(ops::reshape(cosine_matrix(u, ops::concat(texts)), {b, b + b * m}), logit_scale);
    image_to_text = cross_entropy(all, diag);
  }
  if (!has_negatives || !symmetric) {
    text_to_image = cross_entropy(ops::transpose(pair_logits), diag);
  } else {
    // Row i: logits of caption i against every image, then against its own
    // negatives paired with image i.
    auto neg_logits = scaled(ops::reshape(cosine_matrix(u, *negatives), {b * b * m, 1}), logit_scale);
    std::vector<std::size_t> own;
    own.reserve(b * m);
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t k = 0; k < m; ++k) own.push_back(i * (b * m) + i * m + k);
    }
    auto own_logits = ops::reshape(ops::gather_rows(neg_logits, own), {b, m});
    // Column concatenation as a row concatenation of transposes.
    const Tensor cols[] = {pair_logits, ops::transpose(own_logits)};
    auto joined = ops::transpose(ops::concat(cols));
    text_to_image = cross_entropy(joined, diag);
  }
  return ops::scale(ops::add(image_to_text, text_to_image), 0.5);
}

Tensor token_reconstruction_loss(const Tensor& h, const std::vector<std::vector<world::TokenSeq>>& targets,
                                 SequenceScorer& scorer) {
  if (h.shape().size() != 2 || h.shape()[0] != targets.size() || targets.empty()) {
    throw tensor::ShapeError("reconstruction: conditioners " + tensor::to_string(h.shape()) + " for " +
                             std::to_string(targets.size()) + " samples");
  }
  std::vector<std::size_t> rows;
  std::vector<world::TokenSeq> flat;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i].empty()) throw std::invalid_argument("reconstruction: sample without targets");
    for (const auto& y : targets[i]) {
      rows.push_back(i);
      flat.push_back(y);
    }
  }
  auto memory = ops::gather_rows(h, rows);
  return ops::neg(ops::mean(scorer.log_likelihood(h.graph(), memory, flat)));
}

Tensor sentence_alignment_loss(const Tensor& v, const Tensor& v_para, const Tensor& logit_scale) {
  check_pair(v, v_para, "alignment loss");
  check_scale(logit_scale);
  const std::size_t b = v.shape()[0];
  auto logits = scaled(ops::reshape(cosine_matrix(v, v_para), {b, b}), logit_scale);
  return cross_entropy(logits, diagonal(b));
}

Tensor read_loss(const LossComponents& c, const LossWeights& w) {
  if (w.alpha < 0.0 || w.beta < 0.0) {
    throw std::invalid_argument("loss weights must be non-negative (alpha " + std::to_string(w.alpha) +
                                ", beta " + std::to_string(w.beta) + ")");
  }
  Tensor total = c.contrastive;
  if (w.alpha > 0.0) {
    if (!c.reconstruction) throw std::invalid_argument("read_loss: alpha > 0 without a reconstruction term");
    total = ops::add(total, ops::scale(*c.reconstruction, w.alpha));
  }
  if (w.beta > 0.0) {
    if (!c.alignment) throw std::invalid_argument("read_loss: beta > 0 without an alignment term");
    total = ops::add(total, ops::scale(*c.alignment, w.beta));
  }
  return total;
}

}  // namespace readlab::losses
