#include "vidreason/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "vidreason/errors.hpp"

namespace vidreason {

namespace {

void require_rank2(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw DimensionError(std::string(what) + " expects a matrix, got " + shape_string(t.shape()));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul inner extents differ: " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor c = Tensor::matrix(m, n);
  const double* ap = a.values().data();
  const double* bp = b.values().data();
  double* cp = c.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = cp + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ap[i * k + p];
      if (av == 0.0) continue;
      const double* brow = bp + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt inner extents differ: " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()) + "^T");
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  Tensor c = Tensor::matrix(m, n);
  const double* ap = a.values().data();
  const double* bp = b.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ap[i * k + p] * bp[j * k + p];
      c(i, j) = s;
    }
  }
  return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_tn");
  require_rank2(b, "matmul_tn");
  if (a.rows() != b.rows()) {
    throw DimensionError("matmul_tn inner extents differ: " + shape_string(a.shape()) + "^T x " +
                         shape_string(b.shape()));
  }
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  Tensor c = Tensor::matrix(m, n);
  const double* ap = a.values().data();
  const double* bp = b.values().data();
  double* cp = c.values().data();
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = bp + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = ap[p * m + i];
      if (av == 0.0) continue;
      double* crow = cp + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  Tensor t = Tensor::matrix(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

Tensor softmax_rows(const Tensor& m) {
  require_rank2(m, "softmax_rows");
  Tensor y = m;
  for (std::size_t i = 0; i < y.rows(); ++i) {
    auto row = y.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (auto& x : row) {
      x = std::exp(x - mx);
      sum += x;
    }
    for (auto& x : row) x /= sum;
  }
  return y;
}

Tensor softmax_rows_backward(const Tensor& y, const Tensor& dy) {
  Tensor dx = Tensor::zeros_like(y);
  for (std::size_t i = 0; i < y.rows(); ++i) {
    auto yr = y.row(i);
    auto dyr = dy.row(i);
    double dot = 0.0;
    for (std::size_t j = 0; j < yr.size(); ++j) dot += yr[j] * dyr[j];
    auto dxr = dx.row(i);
    for (std::size_t j = 0; j < yr.size(); ++j) dxr[j] = yr[j] * (dyr[j] - dot);
  }
  return dx;
}

Tensor attention_logits(const Tensor& q, const Tensor& k, bool scaled) {
  Tensor s = matmul_nt(q, k);
  if (scaled) s *= 1.0 / std::sqrt(static_cast<double>(q.cols()));
  return s;
}

AttentionResult scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor* mask,
                                     bool scaled) {
  if (q.cols() != k.cols() || k.rows() != v.rows()) {
    throw DimensionError("attention shapes incompatible: Q " + shape_string(q.shape()) + ", K " +
                         shape_string(k.shape()) + ", V " + shape_string(v.shape()));
  }
  Tensor logits = attention_logits(q, k, scaled);
  if (mask != nullptr) {
    if (mask->shape() != logits.shape()) {
      throw DimensionError("attention mask " + shape_string(mask->shape()) + " does not match logits " +
                           shape_string(logits.shape()));
    }
    for (std::size_t i = 0; i < logits.rows(); ++i) {
      bool any = false;
      for (std::size_t j = 0; j < logits.cols(); ++j) {
        if ((*mask)(i, j) == 0.0) {
          logits(i, j) += kMaskedLogit;
        } else {
          any = true;
        }
      }
      if (!any) throw MaskedRowError("attention mask row " + std::to_string(i) + " excludes every key");
    }
  }
  AttentionResult r;
  r.weights = softmax_rows(logits);
  r.out = matmul(r.weights, v);
  return r;
}

AttentionGrads scaled_dot_attention_backward(const Tensor& q, const Tensor& k, const Tensor& v,
                                             const Tensor& weights, const Tensor& dout, bool scaled) {
  AttentionGrads g;
  g.dv = matmul_tn(weights, dout);
  Tensor dw = matmul_nt(dout, v);
  Tensor ds = softmax_rows_backward(weights, dw);
  if (scaled) ds *= 1.0 / std::sqrt(static_cast<double>(q.cols()));
  g.dq = matmul(ds, k);
  g.dk = matmul_tn(ds, q);
  return g;
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

std::size_t Rng::below(std::size_t n) {
  if (n == 0) return 0;
  return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
}

double Rng::normal() {
  if (spare_) {
    const double s = *spare_;
    spare_.reset();
    return s;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
  return r * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Tensor random_uniform(Shape shape, Rng& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  for (auto& x : t.values()) x = rng.uniform(lo, hi);
  return t;
}

Tensor random_normal(Shape shape, Rng& rng, double stddev) {
  Tensor t(std::move(shape));
  for (auto& x : t.values()) x = stddev * rng.normal();
  return t;
}

}  // namespace vidreason
