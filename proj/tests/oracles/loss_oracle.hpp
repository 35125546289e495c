#pragma once

// Plain long-double reimplementation of the batch losses, written directly
// from the formulas with explicit loops and no shared code with the library.

#include <cmath>
#include <vector>

namespace oracle {

using Mat = std::vector<std::vector<double>>;

inline long double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  long double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<long double>(a[i]) * b[i];
    na += static_cast<long double>(a[i]) * a[i];
    nb += static_cast<long double>(b[i]) * b[i];
  }
  return dot / std::sqrt(na * nb);
}

inline long double phi(const std::vector<double>& a, const std::vector<double>& b, long double tau) {
  return std::exp(cosine(a, b) / tau);
}

/// Symmetric InfoNCE with optional hard negatives (negs[i] = negatives of
/// sample i) in the image-to-text denominators.
inline long double contrastive(const Mat& u, const Mat& v, const std::vector<Mat>& negs, long double tau) {
  const std::size_t b = u.size();
  long double i2t = 0, t2i = 0;
  for (std::size_t i = 0; i < b; ++i) {
    long double den = 0;
    for (std::size_t j = 0; j < b; ++j) den += phi(u[i], v[j], tau);
    for (const auto& n : negs) {
      for (const auto& t : n) den += phi(u[i], t, tau);
    }
    i2t += -std::log(phi(u[i], v[i], tau) / den);
  }
  for (std::size_t i = 0; i < b; ++i) {
    long double den = 0;
    for (std::size_t j = 0; j < b; ++j) den += phi(u[j], v[i], tau);
    t2i += -std::log(phi(u[i], v[i], tau) / den);
  }
  return 0.5L * (i2t / b + t2i / b);
}

inline long double alignment(const Mat& v, const Mat& vp, long double tau) {
  const std::size_t b = v.size();
  long double total = 0;
  for (std::size_t i = 0; i < b; ++i) {
    long double den = 0;
    for (std::size_t j = 0; j < b; ++j) den += phi(v[i], vp[j], tau);
    total += -std::log(phi(v[i], vp[i], tau) / den);
  }
  return total / b;
}

}  // namespace oracle
