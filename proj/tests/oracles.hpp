#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "vidreason/layers.hpp"
#include "vidreason/metrics.hpp"
#include "vidreason/tensor.hpp"

// Plain-loop reference implementations shared by the unit tests and the
// acceptance binary.
namespace vrtest {

inline double gelu_oracle(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

inline vidreason::Tensor linear_oracle(const vidreason::Tensor& x, const vidreason::Linear& l) {
  vidreason::Tensor y = vidreason::Tensor::matrix(x.rows(), l.weight.cols());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < y.cols(); ++j) {
      double s = l.bias.empty() ? 0.0 : l.bias(0, j);
      for (std::size_t k = 0; k < x.cols(); ++k) s += x(i, k) * l.weight(k, j);
      y(i, j) = s;
    }
  return y;
}

inline vidreason::Tensor ffn_oracle(const vidreason::Tensor& x, const vidreason::FeedForward& f) {
  vidreason::Tensor h = linear_oracle(x, f.fc1);
  for (double& v : h.values()) v = gelu_oracle(v);
  return linear_oracle(h, f.fc2);
}

// softmax(x f^T * scale) f, row by row.
inline vidreason::Tensor cross_attention_oracle(const vidreason::Tensor& x, const vidreason::Tensor& f, bool scaled) {
  const std::size_t m = x.rows(), n = f.rows(), c = x.cols();
  const double scale = scaled ? 1.0 / std::sqrt(static_cast<double>(c)) : 1.0;
  vidreason::Tensor out = vidreason::Tensor::matrix(m, c);
  for (std::size_t i = 0; i < m; ++i) {
    std::vector<double> logit(n);
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < c; ++k) s += x(i, k) * f(j, k);
      logit[j] = s * scale;
    }
    double z = 0.0;
    for (double l : logit) z += std::exp(l);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < c; ++k) out(i, k) += std::exp(logit[j]) / z * f(j, k);
  }
  return out;
}

// Exhaustive minimum over every one-to-one assignment of min(P, G) pairs.
inline double brute_force_min(const vidreason::Tensor& c) {
  const std::size_t p = c.rows(), g = c.cols();
  const bool flip = p > g;
  const std::size_t small = flip ? g : p, large = flip ? p : g;
  std::vector<std::size_t> idx(large);
  std::iota(idx.begin(), idx.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < small; ++i) s += flip ? c(idx[i], i) : c(i, idx[i]);
    best = std::min(best, s);
  } while (std::next_permutation(idx.begin(), idx.end()));
  return best;
}

// Independent small-case AP: for each threshold, walk predictions in
// confidence order, match against any still-free gt of the same clip at the
// best IoU, then integrate the interpolated precision one recall step at a time.
struct ApOracle {
  double ap = 0, ar = 0;
};
inline ApOracle brute_force_ap(const std::vector<vidreason::DetectionSet>& sets) {
  struct P {
    std::size_t s, i;
    double c;
  };
  std::vector<P> all;
  std::size_t ngt = 0;
  for (std::size_t s = 0; s < sets.size(); ++s) {
    ngt += sets[s].gts.size();
    for (std::size_t i = 0; i < sets[s].preds.size(); ++i) all.push_back({s, i, sets[s].preds[i].confidence});
  }
  std::stable_sort(all.begin(), all.end(), [](const P& a, const P& b) { return a.c > b.c; });
  ApOracle o;
  for (int k = 0; k < 10; ++k) {
    const double thr = (50.0 + 5.0 * k) / 100.0;
    std::vector<std::vector<bool>> used;
    for (const auto& s : sets) used.emplace_back(s.gts.size(), false);
    std::vector<double> prec, rec;
    double tp = 0;
    for (std::size_t r = 0; r < all.size(); ++r) {
      const auto& set = sets[all[r].s];
      int best = -1;
      double best_iou = 0;
      for (std::size_t g = 0; g < set.gts.size(); ++g) {
        if (used[all[r].s][g]) continue;
        std::size_t in = 0, un = 0;
        for (std::size_t q = 0; q < set.gts[g].masks.size(); ++q) {
          in += set.preds[all[r].i].masks[q] && set.gts[g].masks[q];
          un += set.preds[all[r].i].masks[q] || set.gts[g].masks[q];
        }
        const double iou = un == 0 ? 0.0 : static_cast<double>(in) / static_cast<double>(un);
        if (iou >= thr && (best < 0 || iou > best_iou)) {
          best = static_cast<int>(g);
          best_iou = iou;
        }
      }
      if (best >= 0) {
        used[all[r].s][static_cast<std::size_t>(best)] = true;
        tp += 1;
      }
      prec.push_back(tp / static_cast<double>(r + 1));
      rec.push_back(ngt == 0 ? 0.0 : tp / static_cast<double>(ngt));
    }
    double area = 0;
    if (ngt > 0) {
      double prev = 0;
      for (std::size_t r = 0; r < rec.size(); ++r) {
        if (rec[r] == prev) continue;
        double pmax = 0;
        for (std::size_t j = r; j < prec.size(); ++j) pmax = std::max(pmax, prec[j]);
        area += (rec[r] - prev) * pmax;
        prev = rec[r];
      }
    }
    o.ap += area / 10.0;
    o.ar += (ngt == 0 ? 0.0 : tp / static_cast<double>(ngt)) / 10.0;
  }
  return o;
}

}  // namespace vrtest
