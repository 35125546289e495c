#include "readlab/tensor/ops.hpp"

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <numeric>
#include <string>

namespace readlab::tensor {
namespace {

using Id = std::uint32_t;

Graph& same_graph(const Tensor& a, const Tensor& b, const char* op) {
  if (&a.graph() != &b.graph()) {
    throw std::logic_error(std::string(op) + ": operands belong to different graphs");
  }
  return a.graph();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

std::vector<double> copy_values(const Tensor& t) {
  auto v = t.values();
  return {v.begin(), v.end()};
}

// Register-tiled kernels. Every C entry starts from its current value and
// accumulates fma(a, b, acc) over the inner index in ascending order,
// whatever tile it falls in, so permuting rows of A permutes rows of C bit
// for bit.
//
// A element (r, q) of the tile lives at a[r * a_row + q * a_inner]; B element
// (q, j) at b[q * ldb + j].
typedef double Lane __attribute__((vector_size(64), aligned(8)));
constexpr std::size_t kLane = sizeof(Lane) / sizeof(double);

inline Lane fma_lane(double a, Lane b, Lane c) {
#if defined(__AVX512F__)
  return (Lane)_mm512_fmadd_pd(_mm512_set1_pd(a), (__m512d)b, (__m512d)c);
#else
  for (std::size_t l = 0; l < kLane; ++l) c[l] = std::fma(a, b[l], c[l]);
  return c;
#endif
}

// NL is 1 or 2 lanes of columns. The lanes are spelled out rather than
// looped over so the accumulators stay in registers.
template <std::size_t MR, std::size_t NL>
inline void tile(const double* a, std::size_t a_row, std::size_t a_inner, const double* b,
                 std::size_t ldb, double* c, std::size_t ldc, std::size_t inner) {
  static_assert(NL == 1 || NL == 2);
  Lane acc[MR][NL];
  for (std::size_t r = 0; r < MR; ++r) {
    acc[r][0] = *reinterpret_cast<const Lane*>(c + r * ldc);
    if constexpr (NL == 2) acc[r][NL - 1] = *reinterpret_cast<const Lane*>(c + r * ldc + kLane);
  }
  for (std::size_t q = 0; q < inner; ++q) {
    const Lane b0 = *reinterpret_cast<const Lane*>(b + q * ldb);
    Lane b1{};
    if constexpr (NL == 2) b1 = *reinterpret_cast<const Lane*>(b + q * ldb + kLane);
    for (std::size_t r = 0; r < MR; ++r) {
      const double av = a[r * a_row + q * a_inner];
      acc[r][0] = fma_lane(av, b0, acc[r][0]);
      if constexpr (NL == 2) acc[r][NL - 1] = fma_lane(av, b1, acc[r][NL - 1]);
    }
  }
  for (std::size_t r = 0; r < MR; ++r) {
    *reinterpret_cast<Lane*>(c + r * ldc) = acc[r][0];
    if constexpr (NL == 2) *reinterpret_cast<Lane*>(c + r * ldc + kLane) = acc[r][NL - 1];
  }
}

// Narrow column remainder, one row at a time.
inline void tile_edge(const double* a, std::size_t a_inner, const double* b, std::size_t ldb,
                      double* c, std::size_t cols, std::size_t inner) {
  double acc[kLane];
  for (std::size_t j = 0; j < cols; ++j) acc[j] = c[j];
  for (std::size_t q = 0; q < inner; ++q) {
    const double av = a[q * a_inner];
    const double* bq = b + q * ldb;
    for (std::size_t j = 0; j < cols; ++j) acc[j] = std::fma(av, bq[j], acc[j]);
  }
  for (std::size_t j = 0; j < cols; ++j) c[j] = acc[j];
}

template <std::size_t MR>
inline void row_block(const double* a, std::size_t a_row, std::size_t a_inner, const double* b, double* c,
                      std::size_t inner, std::size_t n) {
  std::size_t j = 0;
  for (; j + 2 * kLane <= n; j += 2 * kLane) tile<MR, 2>(a, a_row, a_inner, b + j, n, c + j, n, inner);
  if (j + kLane <= n) {
    tile<MR, 1>(a, a_row, a_inner, b + j, n, c + j, n, inner);
    j += kLane;
  }
  if (j < n) {
    for (std::size_t r = 0; r < MR; ++r) tile_edge(a + r * a_row, a_inner, b + j, n, c + r * n + j, n - j, inner);
  }
}

// C[rows, n] += A'[rows, inner] * B[inner, n] with A' addressed as above.
void gemm_strided(const double* a, std::size_t a_row, std::size_t a_inner, const double* b,
                  double* c, std::size_t rows, std::size_t inner, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= rows; i += 8) row_block<8>(a + i * a_row, a_row, a_inner, b, c + i * n, inner, n);
  for (; i + 4 <= rows; i += 4) row_block<4>(a + i * a_row, a_row, a_inner, b, c + i * n, inner, n);
  for (; i < rows; ++i) row_block<1>(a + i * a_row, a_row, a_inner, b, c + i * n, inner, n);
}

// C[M,N] += A[M,K] * B[K,N]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  gemm_strided(a, k, 1, b, c, m, k, n);
}

// C[K,N] += A[M,K]^T * B[M,N]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  gemm_strided(a, 1, k, b, c, k, m, n);
}

std::vector<double> transposed(const double* a, std::size_t rows, std::size_t cols) {
  std::vector<double> t(rows * cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) t[j * rows + i] = a[i * cols + j];
  }
  return t;
}

// C[M,N] += A[M,K] * B[N,K]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  thread_local std::vector<double> bt;
  bt.resize(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) bt[j * n + i] = b[i * k + j];
  }
  gemm_nn(a, bt.data(), c, m, k, n);
}

template <class Fwd, class Bwd>
Tensor unary(const Tensor& a, const char* op, Fwd fwd, Bwd bwd) {
  auto& g = a.graph();
  auto in = a.values();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  const Id ia = a.id();
  return g.record(op, a.shape(), std::move(out), {ia}, [ia, bwd](Graph& gr, Id self) {
    auto x = gr.value_of(ia);
    auto y = gr.value_of(self);
    auto dy = gr.out_grad(self);
    auto dx = gr.grad_of(ia);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * bwd(x[i], y[i]);
  });
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

double canonical_sum(std::span<const double> values) {
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  double s = 0.0;
  for (double v : sorted) s += v;
  return s;
}

Tensor add(const Tensor& a, const Tensor& b) {
  auto& g = same_graph(a, b, "add");
  require_same_shape(a, b, "add");
  auto out = copy_values(a);
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const Id ia = a.id(), ib = b.id();
  return g.record("add", a.shape(), std::move(out), {ia, ib}, [ia, ib](Graph& gr, Id self) {
    auto dy = gr.out_grad(self);
    for (Id in : {ia, ib}) {
      if (!gr.needs_grad(in)) continue;
      auto dx = gr.grad_of(in);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  auto& g = same_graph(a, b, "sub");
  require_same_shape(a, b, "sub");
  auto out = copy_values(a);
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const Id ia = a.id(), ib = b.id();
  return g.record("sub", a.shape(), std::move(out), {ia, ib}, [ia, ib](Graph& gr, Id self) {
    auto dy = gr.out_grad(self);
    if (gr.needs_grad(ia)) {
      auto dx = gr.grad_of(ia);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
    }
    if (gr.needs_grad(ib)) {
      auto dx = gr.grad_of(ib);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] -= dy[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  auto& g = same_graph(a, b, "mul");
  require_same_shape(a, b, "mul");
  auto out = copy_values(a);
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const Id ia = a.id(), ib = b.id();
  return g.record("mul", a.shape(), std::move(out), {ia, ib}, [ia, ib](Graph& gr, Id self) {
    auto dy = gr.out_grad(self);
    if (gr.needs_grad(ia)) {
      auto x = gr.value_of(ib);
      auto dx = gr.grad_of(ia);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * x[i];
    }
    if (gr.needs_grad(ib)) {
      auto x = gr.value_of(ia);
      auto dx = gr.grad_of(ib);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * x[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, "scale", [factor](double x) { return x * factor; },
      [factor](double, double) { return factor; });
}

Tensor neg(const Tensor& a) {
  return unary(
      a, "neg", [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor mul_scalar(const Tensor& a, const Tensor& s) {
  auto& g = same_graph(a, s, "mul_scalar");
  if (s.size() != 1) {
    throw ShapeError("mul_scalar: scale must hold one value, got shape " + to_string(s.shape()));
  }
  const double sv = s.values()[0];
  auto out = copy_values(a);
  for (auto& v : out) v *= sv;
  const Id ia = a.id(), is = s.id();
  return g.record("mul_scalar", a.shape(), std::move(out), {ia, is},
                  [ia, is](Graph& gr, Id self) {
                    auto dy = gr.out_grad(self);
                    if (gr.needs_grad(ia)) {
                      const double sv = gr.value_of(is)[0];
                      auto dx = gr.grad_of(ia);
                      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * sv;
                    }
                    if (gr.needs_grad(is)) {
                      auto x = gr.value_of(ia);
                      double acc = 0.0;
                      for (std::size_t i = 0; i < dy.size(); ++i) acc += dy[i] * x[i];
                      gr.grad_of(is)[0] += acc;
                    }
                  });
}

Tensor add_row(const Tensor& a, const Tensor& bias) {
  auto& g = same_graph(a, bias, "add_row");
  if (a.shape().empty() || bias.shape().size() != 1 || bias.shape()[0] != a.shape().back()) {
    throw ShapeError("add_row: bias " + to_string(bias.shape()) + " does not match rows of " +
                     to_string(a.shape()));
  }
  const std::size_t n = bias.shape()[0];
  auto out = copy_values(a);
  auto bv = bias.values();
  for (std::size_t base = 0; base < out.size(); base += n) {
    for (std::size_t j = 0; j < n; ++j) out[base + j] += bv[j];
  }
  const Id ia = a.id(), ib = bias.id();
  return g.record("add_row", a.shape(), std::move(out), {ia, ib},
                  [ia, ib, n](Graph& gr, Id self) {
                    auto dy = gr.out_grad(self);
                    if (gr.needs_grad(ia)) {
                      auto dx = gr.grad_of(ia);
                      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
                    }
                    if (gr.needs_grad(ib)) {
                      auto db = gr.grad_of(ib);
                      for (std::size_t base = 0; base < dy.size(); base += n) {
                        for (std::size_t j = 0; j < n; ++j) db[j] += dy[base + j];
                      }
                    }
                  });
}

Tensor exp(const Tensor& a) {
  return unary(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  for (double v : a.values()) {
    if (!(v > 0.0)) {
      throw DomainError("log: non-positive input " + std::to_string(v));
    }
  }
  return unary(
      a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor gelu(const Tensor& a) {
  auto& g = a.graph();
  auto in = a.values();
  // tanh(u) = 1 - 2 / (exp(2u) + 1): one exp instead of libm tanh, kept for
  // the backward pass.
  auto t = std::make_shared<std::vector<double>>(in.size());
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    const double x = in[i];
    const double ti = 1.0 - 2.0 / (std::exp(2.0 * kGeluC * (x + kGeluA * x * x * x)) + 1.0);
    (*t)[i] = ti;
    out[i] = 0.5 * x * (1.0 + ti);
  }
  const Id ia = a.id();
  return g.record("gelu", a.shape(), std::move(out), {ia}, [ia, t](Graph& gr, Id self) {
    auto x = gr.value_of(ia);
    auto dy = gr.out_grad(self);
    auto dx = gr.grad_of(ia);
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const double ti = (*t)[i], xi = x[i];
      dx[i] += dy[i] * (0.5 * (1.0 + ti) + 0.5 * xi * (1.0 - ti * ti) * kGeluC * (1.0 + 3.0 * kGeluA * xi * xi));
    }
  });
}

Tensor sum(const Tensor& a) {
  auto& g = a.graph();
  const Id ia = a.id();
  return g.record("sum", {}, {canonical_sum(a.values())}, {ia}, [ia](Graph& gr, Id self) {
    const double dy = gr.out_grad(self)[0];
    auto dx = gr.grad_of(ia);
    for (auto& v : dx) v += dy;
  });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ShapeError("mean: empty tensor");
  auto& g = a.graph();
  const Id ia = a.id();
  const double n = static_cast<double>(a.size());
  return g.record("mean", {}, {canonical_sum(a.values()) / n}, {ia},
                  [ia, n](Graph& gr, Id self) {
                    const double dy = gr.out_grad(self)[0] / n;
                    auto dx = gr.grad_of(ia);
                    for (auto& v : dx) v += dy;
                  });
}

Tensor sum_last(const Tensor& a) {
  if (a.shape().empty()) throw ShapeError("sum_last: scalar input");
  auto& g = a.graph();
  const std::size_t n = a.shape().back();
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  const std::size_t rows = numel(out_shape);
  auto x = a.values();
  std::vector<double> out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += x[r * n + j];
    out[r] = s;
  }
  const Id ia = a.id();
  return g.record("sum_last", std::move(out_shape), std::move(out), {ia},
                  [ia, n](Graph& gr, Id self) {
                    auto dy = gr.out_grad(self);
                    auto dx = gr.grad_of(ia);
                    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i / n];
                  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  auto& g = same_graph(a, b, "matmul");
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as.empty() || bs.size() != 2 || as.back() != bs[0]) {
    throw ShapeError("matmul: cannot multiply " + to_string(as) + " by " + to_string(bs));
  }
  const std::size_t k = bs[0], n = bs[1];
  const std::size_t m = a.size() / k;
  Shape out_shape(as.begin(), as.end() - 1);
  out_shape.push_back(n);
  std::vector<double> out(m * n, 0.0);
  gemm_nn(a.values().data(), b.values().data(), out.data(), m, k, n);
  const Id ia = a.id(), ib = b.id();
  return g.record("matmul", std::move(out_shape), std::move(out), {ia, ib},
                  [ia, ib, m, k, n](Graph& gr, Id self) {
                    auto dy = gr.out_grad(self);
                    if (gr.needs_grad(ia)) {
                      gemm_nt(dy.data(), gr.value_of(ib).data(), gr.grad_of(ia).data(), m, n, k);
                    }
                    if (gr.needs_grad(ib)) {
                      gemm_tn(gr.value_of(ia).data(), dy.data(), gr.grad_of(ib).data(), m, k, n);
                    }
                  });
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
  auto& g = same_graph(a, b, "bmm");
  const auto& as = a.shape();
  const auto& bs = b.shape();
  const bool ok = as.size() == 3 && bs.size() == 3 && as[0] == bs[0] &&
                  (transpose_b ? as[2] == bs[2] : as[2] == bs[1]);
  if (!ok) {
    throw ShapeError(std::string("bmm: cannot multiply ") + to_string(as) + " by " +
                     to_string(bs) + (transpose_b ? " (transposed)" : ""));
  }
  const std::size_t batch = as[0], m = as[1], k = as[2];
  const std::size_t n = transpose_b ? bs[1] : bs[2];
  std::vector<double> out(batch * m * n, 0.0);
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t s = 0; s < batch; ++s) {
    const double* ap = av.data() + s * m * k;
    const double* bp = bv.data() + s * k * n;
    double* cp = out.data() + s * m * n;
    if (transpose_b) {
      gemm_nt(ap, bp, cp, m, k, n);
    } else {
      gemm_nn(ap, bp, cp, m, k, n);
    }
  }
  const Id ia = a.id(), ib = b.id();
  return g.record(
      "bmm", {batch, m, n}, std::move(out), {ia, ib},
      [ia, ib, batch, m, k, n, transpose_b](Graph& gr, Id self) {
        auto dy = gr.out_grad(self);
        auto av = gr.value_of(ia);
        auto bv = gr.value_of(ib);
        const bool da_needed = gr.needs_grad(ia), db_needed = gr.needs_grad(ib);
        double* da = da_needed ? gr.grad_of(ia).data() : nullptr;
        double* db = db_needed ? gr.grad_of(ib).data() : nullptr;
        for (std::size_t s = 0; s < batch; ++s) {
          const double* dys = dy.data() + s * m * n;
          const double* as_ = av.data() + s * m * k;
          const double* bs_ = bv.data() + s * k * n;
          if (!transpose_b) {
            // C = A B: dA = dC B^T, dB = A^T dC
            if (da) gemm_nt(dys, bs_, da + s * m * k, m, n, k);
            if (db) gemm_tn(as_, dys, db + s * k * n, m, k, n);
          } else {
            // C = A B^T with B [n,k]: dA = dC B, dB = dC^T A
            if (da) gemm_nn(dys, bs_, da + s * m * k, m, n, k);
            if (db) gemm_tn(dys, as_, db + s * k * n, m, n, k);
          }
        }
      });
}

Tensor transpose(const Tensor& a) {
  if (a.shape().size() != 2) throw ShapeError("transpose: expected 2-D, got " + to_string(a.shape()));
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  const Id ia = a.id();
  return a.graph().record("transpose", {c, r}, transposed(a.values().data(), r, c), {ia},
                          [ia, r, c](Graph& gr, Id self) {
                            auto dy = gr.out_grad(self);
                            auto dx = gr.grad_of(ia);
                            for (std::size_t i = 0; i < r; ++i) {
                              for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += dy[j * r + i];
                            }
                          });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape: " + to_string(a.shape()) + " to " + to_string(shape));
  }
  const Id ia = a.id();
  return a.graph().record("reshape", std::move(shape), copy_values(a), {ia},
                          [ia](Graph& gr, Id self) {
                            auto dy = gr.out_grad(self);
                            auto dx = gr.grad_of(ia);
                            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
                          });
}

Tensor concat(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  auto& g = parts[0].graph();
  const auto& first = parts[0].shape();
  if (first.empty()) throw ShapeError("concat: scalar input");
  Shape tail(first.begin() + 1, first.end());
  std::size_t rows = 0;
  std::vector<Id> ids;
  std::vector<double> out;
  for (const auto& p : parts) {
    if (&p.graph() != &g) throw std::logic_error("concat: operands belong to different graphs");
    const auto& s = p.shape();
    if (s.empty() || Shape(s.begin() + 1, s.end()) != tail) {
      throw ShapeError("concat: " + to_string(s) + " incompatible with " + to_string(first));
    }
    rows += s[0];
    ids.push_back(p.id());
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  Shape out_shape{rows};
  out_shape.insert(out_shape.end(), tail.begin(), tail.end());
  auto inputs = ids;
  return g.record("concat", std::move(out_shape), std::move(out), std::move(inputs),
                  [ids](Graph& gr, Id self) {
                    auto dy = gr.out_grad(self);
                    std::size_t offset = 0;
                    for (Id in : ids) {
                      const std::size_t len = gr.value_of(in).size();
                      if (gr.needs_grad(in)) {
                        auto dx = gr.grad_of(in);
                        for (std::size_t i = 0; i < len; ++i) dx[i] += dy[offset + i];
                      }
                      offset += len;
                    }
                  });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  const auto& s = a.shape();
  if (s.empty() || begin > end || end > s[0]) {
    throw ShapeError("slice_rows: [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") out of range for " + to_string(s));
  }
  const std::size_t row = s[0] ? a.size() / s[0] : 0;
  Shape out_shape = s;
  out_shape[0] = end - begin;
  auto v = a.values();
  std::vector<double> out(v.begin() + begin * row, v.begin() + end * row);
  const Id ia = a.id();
  return a.graph().record("slice_rows", std::move(out_shape), std::move(out), {ia},
                          [ia, begin, row](Graph& gr, Id self) {
                            auto dy = gr.out_grad(self);
                            auto dx = gr.grad_of(ia);
                            for (std::size_t i = 0; i < dy.size(); ++i) dx[begin * row + i] += dy[i];
                          });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
  const auto& s = a.shape();
  if (s.empty()) throw ShapeError("gather_rows: scalar input");
  const std::size_t row = s[0] ? a.size() / s[0] : 0;
  std::vector<std::size_t> index(rows.begin(), rows.end());
  std::vector<double> out;
  out.reserve(index.size() * row);
  auto v = a.values();
  for (auto r : index) {
    if (r >= s[0]) {
      throw ShapeError("gather_rows: row " + std::to_string(r) + " out of range for " + to_string(s));
    }
    out.insert(out.end(), v.begin() + r * row, v.begin() + (r + 1) * row);
  }
  Shape out_shape = s;
  out_shape[0] = index.size();
  const Id ia = a.id();
  return a.graph().record("gather_rows", std::move(out_shape), std::move(out), {ia},
                          [ia, index, row](Graph& gr, Id self) {
                            auto dy = gr.out_grad(self);
                            auto dx = gr.grad_of(ia);
                            for (std::size_t i = 0; i < index.size(); ++i) {
                              for (std::size_t j = 0; j < row; ++j) dx[index[i] * row + j] += dy[i * row + j];
                            }
                          });
}

Tensor embedding(const Tensor& table, std::span<const std::int64_t> ids) {
  const auto& s = table.shape();
  if (s.size() != 2) throw ShapeError("embedding: table must be 2-D, got " + to_string(s));
  const std::size_t vocab = s[0], d = s[1];
  std::vector<std::int64_t> index(ids.begin(), ids.end());
  std::vector<double> out;
  out.reserve(index.size() * d);
  auto v = table.values();
  for (auto id : index) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw ShapeError("embedding: id " + std::to_string(id) + " outside table of " +
                       std::to_string(vocab) + " rows");
    }
    out.insert(out.end(), v.begin() + id * d, v.begin() + (id + 1) * d);
  }
  const Id it = table.id();
  return table.graph().record("embedding", {index.size(), d}, std::move(out), {it},
                              [it, index, d](Graph& gr, Id self) {
                                auto dy = gr.out_grad(self);
                                auto dx = gr.grad_of(it);
                                for (std::size_t i = 0; i < index.size(); ++i) {
                                  const auto base = static_cast<std::size_t>(index[i]) * d;
                                  for (std::size_t j = 0; j < d; ++j) dx[base + j] += dy[i * d + j];
                                }
                              });
}

Tensor pick(const Tensor& a, std::span<const std::size_t> index) {
  const auto& s = a.shape();
  if (s.size() != 2 || s[0] != index.size()) {
    throw ShapeError("pick: expected [n, c] with n = " + std::to_string(index.size()) + ", got " +
                     to_string(s));
  }
  const std::size_t c = s[1];
  std::vector<std::size_t> idx(index.begin(), index.end());
  std::vector<double> out(idx.size());
  auto v = a.values();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= c) throw ShapeError("pick: column " + std::to_string(idx[i]) + " >= " + std::to_string(c));
    out[i] = v[i * c + idx[i]];
  }
  const Id ia = a.id();
  return a.graph().record("pick", {idx.size()}, std::move(out), {ia},
                          [ia, idx, c](Graph& gr, Id self) {
                            auto dy = gr.out_grad(self);
                            auto dx = gr.grad_of(ia);
                            for (std::size_t i = 0; i < idx.size(); ++i) dx[i * c + idx[i]] += dy[i];
                          });
}

Tensor masked_fill(const Tensor& a, std::span<const std::uint8_t> mask, double value) {
  if (mask.size() != a.size()) {
    throw ShapeError("masked_fill: mask of " + std::to_string(mask.size()) + " entries for " +
                     to_string(a.shape()));
  }
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  auto out = copy_values(a);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (m[i]) out[i] = value;
  }
  const Id ia = a.id();
  return a.graph().record("masked_fill", a.shape(), std::move(out), {ia},
                          [ia, m](Graph& gr, Id self) {
                            auto dy = gr.out_grad(self);
                            auto dx = gr.grad_of(ia);
                            for (std::size_t i = 0; i < dx.size(); ++i) {
                              if (!m[i]) dx[i] += dy[i];
                            }
                          });
}

Tensor log_softmax(const Tensor& a, int axis) {
  const auto& s = a.shape();
  const int rank = static_cast<int>(s.size());
  const int ax = axis < 0 ? rank + axis : axis;
  if (ax < 0 || ax >= rank) {
    throw ShapeError("log_softmax: axis " + std::to_string(axis) + " invalid for " + to_string(s));
  }
  const std::size_t len = s[static_cast<std::size_t>(ax)];
  if (len == 0) throw ShapeError("log_softmax: empty axis in " + to_string(s));
  std::size_t inner = 1;
  for (int i = ax + 1; i < rank; ++i) inner *= s[static_cast<std::size_t>(i)];
  const std::size_t outer = a.size() / (len * inner);
  auto x = a.values();
  std::vector<double> out(x.size());
  std::vector<double> lane(len);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = x[base];
      for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, x[base + j * inner]);
      for (std::size_t j = 0; j < len; ++j) lane[j] = std::exp(x[base + j * inner] - mx);
      const double lse = mx + std::log(canonical_sum(lane));
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] = x[base + j * inner] - lse;
    }
  }
  const Id ia = a.id();
  return a.graph().record("log_softmax", s, std::move(out), {ia},
                          [ia, outer, len, inner](Graph& gr, Id self) {
                            auto y = gr.value_of(self);
                            auto dy = gr.out_grad(self);
                            auto dx = gr.grad_of(ia);
                            for (std::size_t o = 0; o < outer; ++o) {
                              for (std::size_t in = 0; in < inner; ++in) {
                                const std::size_t base = o * len * inner + in;
                                double total = 0.0;
                                for (std::size_t j = 0; j < len; ++j) total += dy[base + j * inner];
                                for (std::size_t j = 0; j < len; ++j) {
                                  const std::size_t k = base + j * inner;
                                  dx[k] += dy[k] - std::exp(y[k]) * total;
                                }
                              }
                            }
                          });
}

Tensor softmax(const Tensor& a) {
  const auto& s = a.shape();
  if (s.empty() || s.back() == 0) throw ShapeError("softmax: empty last axis in " + to_string(s));
  const std::size_t len = s.back();
  const std::size_t rows = a.size() / len;
  auto x = a.values();
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * len;
    double* yr = out.data() + r * len;
    double mx = xr[0];
    for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, xr[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < len; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      total += yr[j];
    }
    const double inv = 1.0 / total;
    for (std::size_t j = 0; j < len; ++j) yr[j] *= inv;
  }
  const Id ia = a.id();
  return a.graph().record("softmax", s, std::move(out), {ia}, [ia, rows, len](Graph& gr, Id self) {
    auto y = gr.value_of(self);
    auto dy = gr.out_grad(self);
    auto dx = gr.grad_of(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t base = r * len;
      double dot = 0.0;
      for (std::size_t j = 0; j < len; ++j) dot += dy[base + j] * y[base + j];
      for (std::size_t j = 0; j < len; ++j) dx[base + j] += y[base + j] * (dy[base + j] - dot);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const auto& s = x.shape();
  if (s.empty() || gain.shape() != Shape{s.back()} || bias.shape() != Shape{s.back()}) {
    throw ShapeError("layer_norm: gain " + to_string(gain.shape()) + " / bias " +
                     to_string(bias.shape()) + " do not match " + to_string(s));
  }
  const std::size_t n = s.back();
  const std::size_t rows = x.size() / n;
  auto xv = x.values();
  auto gv = gain.values();
  auto bv = bias.values();
  std::vector<double> xhat(x.size()), inv_std(rows), out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += xr[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (xr[j] - mu) * is;
      xhat[r * n + j] = h;
      out[r * n + j] = h * gv[j] + bv[j];
    }
  }
  const Id ix = x.id(), ig = gain.id(), ib = bias.id();
  return x.graph().record(
      "layer_norm", s, std::move(out), {ix, ig, ib},
      [ix, ig, ib, n, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& gr, Id self) {
        auto dy = gr.out_grad(self);
        if (gr.needs_grad(ig)) {
          auto dg = gr.grad_of(ig);
          for (std::size_t base = 0; base < dy.size(); base += n) {
            for (std::size_t j = 0; j < n; ++j) dg[j] += dy[base + j] * xhat[base + j];
          }
        }
        if (gr.needs_grad(ib)) {
          auto db = gr.grad_of(ib);
          for (std::size_t base = 0; base < dy.size(); base += n) {
            for (std::size_t j = 0; j < n; ++j) db[j] += dy[base + j];
          }
        }
        if (gr.needs_grad(ix)) {
          auto gv = gr.value_of(ig);
          auto dx = gr.grad_of(ix);
          const double inv_n = 1.0 / static_cast<double>(n);
          for (std::size_t r = 0; r < rows; ++r) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double dh = dy[r * n + j] * gv[j];
              m1 += dh;
              m2 += dh * xhat[r * n + j];
            }
            m1 *= inv_n;
            m2 *= inv_n;
            for (std::size_t j = 0; j < n; ++j) {
              const double dh = dy[r * n + j] * gv[j];
              dx[r * n + j] += inv_std[r] * (dh - m1 - xhat[r * n + j] * m2);
            }
          }
        }
      });
}

Tensor l2_normalize(const Tensor& a) {
  const auto& s = a.shape();
  if (s.empty()) throw ShapeError("l2_normalize: scalar input");
  const std::size_t n = s.back();
  const std::size_t rows = n ? a.size() / n : 0;
  auto x = a.values();
  std::vector<double> out(x.size()), norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t j = 0; j < n; ++j) ss += x[r * n + j] * x[r * n + j];
    const double nr = std::sqrt(ss);
    if (!(nr > 0.0) || !std::isfinite(nr)) {
      throw DomainError("l2_normalize: row " + std::to_string(r) + " has norm " + std::to_string(nr) +
                        " (degenerate embedding)");
    }
    norms[r] = nr;
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = x[r * n + j] / nr;
  }
  const Id ia = a.id();
  return a.graph().record("l2_normalize", s, std::move(out), {ia},
                          [ia, n, rows, norms = std::move(norms)](Graph& gr, Id self) {
                            auto y = gr.value_of(self);
                            auto dy = gr.out_grad(self);
                            auto dx = gr.grad_of(ia);
                            for (std::size_t r = 0; r < rows; ++r) {
                              double dot = 0.0;
                              for (std::size_t j = 0; j < n; ++j) dot += y[r * n + j] * dy[r * n + j];
                              for (std::size_t j = 0; j < n; ++j) {
                                dx[r * n + j] += (dy[r * n + j] - y[r * n + j] * dot) / norms[r];
                              }
                            }
                          });
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 1 || a.shape() != b.shape()) {
    throw ShapeError("cosine_similarity: expected equal-length vectors, got " +
                     to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  auto an = l2_normalize(a);
  auto bn = l2_normalize(b);
  auto prod = mul(an, bn);
  auto& g = prod.graph();
  const Id ip = prod.id();
  double s = 0.0;
  for (double v : prod.values()) s += v;
  return g.record("cosine", {}, {std::clamp(s, -1.0, 1.0)}, {ip}, [ip](Graph& gr, Id self) {
    const double dy = gr.out_grad(self)[0];
    for (auto& v : gr.grad_of(ip)) v += dy;
  });
}

}  // namespace readlab::tensor
