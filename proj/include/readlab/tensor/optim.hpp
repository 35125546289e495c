#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "readlab/tensor/tensor.hpp"

namespace readlab::tensor {

/// Adam with decoupled weight decay. Updates are dense: every coordinate of
/// every registered parameter moves each step, touched or not.
class AdamW {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
  };

  /// `decay[i]` selects whether weight decay applies to `params[i]`.
  AdamW(std::vector<Parameter*> params, std::vector<bool> decay, Options options);

  void step(double lr);
  std::uint64_t steps() const { return t_; }

  // Moment buffers, exposed for checkpointing.
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  void set_steps(std::uint64_t t) { t_ = t; }
  const std::vector<Parameter*>& params() const { return params_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<bool> decay_;
  Options options_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
};

/// Linear warmup from 0 to `peak` over `warmup` steps, then cosine decay to 0
/// at `total`. Steps past `total` stay at 0.
double warmup_cosine_lr(std::uint64_t step, std::uint64_t warmup, std::uint64_t total, double peak);

/// Global L2 norm of all gradients, accumulated in parameter order.
double grad_norm(std::span<Parameter* const> params);

/// Scales gradients so their global norm is at most `max_norm`; returns the
/// norm before scaling.
double clip_grad_norm(std::span<Parameter* const> params, double max_norm);

}  // namespace readlab::tensor
