#pragma once

#include <optional>
#include <vector>

#include "readlab/models/decoder.hpp"
#include "readlab/tensor/tensor.hpp"
#include "readlab/world/vocabulary.hpp"

namespace readlab::losses {

using tensor::Graph;
using tensor::Tensor;

// Every loss takes the inverse temperature ("logit scale", 1/tau) as a
// one-element tensor so that gradients reach the temperature. A non-positive
// or non-finite scale is rejected.

/// exp(cos(x, y) * scale) for two vectors.
Tensor phi(const Tensor& x, const Tensor& y, const Tensor& logit_scale);

/// Row-wise cosines: a [N, d], b [M, d] -> [N, M].
Tensor cosine_matrix(const Tensor& a, const Tensor& b);

/// Symmetric InfoNCE over a batch of matched pairs u[i] <-> v[i].
Tensor contrastive_loss(const Tensor& u, const Tensor& v, const Tensor& logit_scale);

/// Image-to-text rows gain every hard negative of the batch in their
/// denominator; `negatives` is [B * M, d] ordered sample-major (all M
/// negatives of sample 0 first). The text-to-image direction is unchanged
/// unless `symmetric`, in which case caption i also competes with its own
/// negatives for image i. With M = 0 (an empty `negatives`) this equals
/// contrastive_loss.
Tensor hard_negative_contrastive_loss(const Tensor& u, const Tensor& v, const std::optional<Tensor>& negatives,
                                      const Tensor& logit_scale, bool symmetric = false);

/// Log-likelihood of target sequences given one memory row per sequence.
class SequenceScorer {
 public:
  virtual ~SequenceScorer() = default;
  /// memory [N, width] -> [N].
  virtual Tensor log_likelihood(Graph& g, const Tensor& memory,
                                const std::vector<world::TokenSeq>& targets) = 0;
};

class DecoderScorer : public SequenceScorer {
 public:
  explicit DecoderScorer(models::Decoder& decoder) : decoder_(decoder) {}
  Tensor log_likelihood(Graph& g, const Tensor& memory,
                        const std::vector<world::TokenSeq>& targets) override {
    return decoder_.log_likelihood(g, memory, targets);
  }

 private:
  models::Decoder& decoder_;
};

/// -(1 / (B K)) sum_i sum_k log p(targets[i][k] | h[i]). Token log-probs are
/// summed per sequence, not length normalized.
Tensor token_reconstruction_loss(const Tensor& h, const std::vector<std::vector<world::TokenSeq>>& targets,
                                 SequenceScorer& scorer);

/// One-directional InfoNCE from v[i] over the paraphrases {v'[j]}.
Tensor sentence_alignment_loss(const Tensor& v, const Tensor& v_para, const Tensor& logit_scale);

struct LossWeights {
  double alpha = 0.1;  // reconstruction
  double beta = 0.5;   // alignment
};

struct LossComponents {
  Tensor contrastive;
  std::optional<Tensor> reconstruction;
  std::optional<Tensor> alignment;
};

/// contrastive + alpha * reconstruction + beta * alignment. A term with zero
/// weight is not added at all, so alpha = beta = 0 returns the contrastive
/// tensor itself. Negative weights, or a positive weight with a missing
/// component, are rejected.
Tensor read_loss(const LossComponents& c, const LossWeights& w);

}  // namespace readlab::losses
