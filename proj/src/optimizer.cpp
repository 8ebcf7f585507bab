#include "vidreason/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <numbers>

#include "vidreason/errors.hpp"

namespace vidreason {

void OptimizerConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("optimizer eps must be positive");
}

double scheduled_lr(const OptimizerConfig& cfg, std::size_t iter, std::size_t max_iters) {
  if (iter == 0) throw ConfigError("iteration numbers start at 1");
  if (cfg.warmup_iters > 0 && iter <= cfg.warmup_iters) {
    return cfg.lr * static_cast<double>(iter) / static_cast<double>(cfg.warmup_iters);
  }
  if (max_iters <= cfg.warmup_iters) return cfg.lr;
  const double span = static_cast<double>(max_iters - cfg.warmup_iters);
  const double done = std::min(1.0, static_cast<double>(iter - cfg.warmup_iters) / span);
  return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * done));
}

void adamw_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads, AdamState& state,
                const OptimizerConfig& cfg, double lr) {
  if (params.size() != grads.size()) throw DimensionError("parameter and gradient lists differ in length");
  if (state.m.empty()) {
    for (const Tensor* p : params) {
      state.m.push_back(Tensor::zeros_like(*p));
      state.v.push_back(Tensor::zeros_like(*p));
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("optimizer state does not match the parameter list");
  ++state.steps;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.steps));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.steps));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    const Tensor& g = *grads[k];
    if (p.shape() != g.shape() || p.shape() != state.m[k].shape()) {
      throw DimensionError("shape mismatch at parameter " + std::to_string(k) + ": " + shape_string(p.shape()) +
                           " vs " + shape_string(g.shape()));
    }
    Tensor& m = state.m[k];
    Tensor& v = state.v[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] *= 1.0 - lr * cfg.weight_decay;
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.eps);
    }
  }
}

}  // namespace vidreason
