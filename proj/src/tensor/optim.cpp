#include "readlab/tensor/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace readlab::tensor {

AdamW::AdamW(std::vector<Parameter*> params, std::vector<bool> decay, Options options)
    : params_(std::move(params)), decay_(std::move(decay)), options_(options) {
  if (decay_.size() != params_.size()) throw std::invalid_argument("AdamW: one decay flag per parameter");
  for (auto* p : params_) {
    m_.emplace_back(p->size(), 0.0);
    v_.emplace_back(p->size(), 0.0);
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto w = params_[i]->values();
    auto g = params_[i]->grad();
    auto& m = m_[i];
    auto& v = v_[i];
    const double wd = decay_[i] ? options_.weight_decay : 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      w[j] -= lr * (mhat / (std::sqrt(vhat) + options_.eps) + wd * w[j]);
    }
  }
}

double warmup_cosine_lr(std::uint64_t step, std::uint64_t warmup, std::uint64_t total, double peak) {
  if (step >= total) return 0.0;
  if (step < warmup) return peak * static_cast<double>(step) / static_cast<double>(warmup);
  const double span = static_cast<double>(total - warmup);
  const double progress = static_cast<double>(step - warmup) / span;
  return 0.5 * peak * (1.0 + std::cos(std::numbers::pi * progress));
}

double grad_norm(std::span<Parameter* const> params) {
  double total = 0.0;
  for (const auto* p : params) {
    for (double g : p->grad()) total += g * g;
  }
  return std::sqrt(total);
}

double clip_grad_norm(std::span<Parameter* const> params, double max_norm) {
  const double norm = grad_norm(params);
  if (norm > max_norm && norm > 0.0) {
    const double factor = max_norm / norm;
    for (auto* p : params) {
      for (double& g : p->grad()) g *= factor;
    }
  }
  return norm;
}

}  // namespace readlab::tensor
