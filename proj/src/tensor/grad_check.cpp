#include "readlab/tensor/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace readlab::tensor {
namespace {

// A perturbation that leaves an op's domain counts as a non-finite value.
double evaluate(const LossFn& f) {
  try {
    Graph g;
    auto loss = f(g);
    return loss.item();
  } catch (const DomainError&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

std::vector<std::size_t> coordinates(std::size_t n, const GradCheckOptions& options,
                                     std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (options.max_coords_per_param == 0 || n <= options.max_coords_per_param) return idx;
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(options.max_coords_per_param);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

GradCheckReport grad_check(const LossFn& f, std::span<Parameter* const> params,
                           const GradCheckOptions& options) {
  for (auto* p : params) p->zero_grad();
  {
    Graph g;
    auto loss = f(g);
    g.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  for (auto* p : params) analytic.emplace_back(p->grad().begin(), p->grad().end());
  for (auto* p : params) p->zero_grad();

  GradCheckReport report;
  std::mt19937_64 rng(options.seed);
  bool all_finite = true;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto* p = params[pi];
    if (!p->requires_grad()) continue;
    CoordinateCheck worst{p->name()};
    worst.rel_error = -1.0;
    for (auto i : coordinates(p->size(), options, rng)) {
      auto values = p->values();
      const double saved = values[i];
      values[i] = saved + options.epsilon;
      const double up = evaluate(f);
      values[i] = saved - options.epsilon;
      const double down = evaluate(f);
      values[i] = saved;

      CoordinateCheck c{p->name(), i, analytic[pi][i], 0.0, 0.0, true};
      ++report.checked;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        c.finite = false;
        all_finite = false;
        report.non_finite.push_back(c);
        continue;
      }
      c.numeric = (up - down) / (2.0 * options.epsilon);
      const double denom =
          std::max({std::abs(c.analytic), std::abs(c.numeric), options.floor});
      c.rel_error = std::abs(c.analytic - c.numeric) / denom;
      if (c.rel_error > worst.rel_error) worst = c;
      report.max_rel_error = std::max(report.max_rel_error, c.rel_error);
    }
    if (worst.rel_error >= 0.0) report.worst.push_back(worst);
  }
  report.passed = all_finite && report.checked > 0 && report.max_rel_error < options.tolerance;
  return report;
}

GradCheckReport grad_check(const std::function<Tensor(Tensor)>& f, const Shape& shape,
                           std::span<const double> point, const GradCheckOptions& options) {
  Parameter x("x", shape);
  if (point.size() != x.size()) {
    throw ShapeError("grad_check: point has " + std::to_string(point.size()) + " values for shape " +
                     to_string(shape));
  }
  std::copy(point.begin(), point.end(), x.values().begin());
  Parameter* params[] = {&x};
  return grad_check([&](Graph& g) { return f(g.param(x)); }, params, options);
}

}  // namespace readlab::tensor
