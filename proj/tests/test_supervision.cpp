#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "oracles.hpp"
#include "support.hpp"
#include "vidreason/errors.hpp"
#include "vidreason/hungarian.hpp"
#include "vidreason/losses.hpp"
#include "vidreason/optimizer.hpp"

using namespace vidreason;
using namespace vrtest;

namespace {

using Mask = std::vector<std::uint8_t>;

std::vector<double> as_prob(const Mask& m) { return {m.begin(), m.end()}; }

double sigmoid_ref(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

TEST_CASE("dice loss examples") {
  const Mask gt = {1, 1, 0, 0, 1, 0};
  CHECK(dice_loss(as_prob(gt), gt) <= 1.0 / (2 * 3 + 1));
  CHECK(dice_loss(as_prob(Mask{1, 1, 0, 0}), Mask{0, 0, 1, 1}) == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(dice_loss(as_prob(Mask{1, 1, 0, 0}), Mask{0, 1, 1, 0}) == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(dice_loss(as_prob(Mask{0, 0}), Mask{0, 0}) == 0.0);
  CHECK_THROWS_AS(dice_loss(as_prob(Mask{0, 0}), Mask{0}), DimensionError);
}

TEST_CASE("dice loss range and symmetry") {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    Mask a(9), b(9);
    for (auto& v : a) v = rng.uniform() < 0.5;
    for (auto& v : b) v = rng.uniform() < 0.5;
    const double ab = dice_loss(as_prob(a), b);
    CHECK(ab >= 0.0);
    CHECK(ab < 1.0);
    CHECK(ab == dice_loss(as_prob(b), a));
    std::vector<double> soft(9);
    for (auto& v : soft) v = rng.uniform();
    const double s = dice_loss(soft, b);
    CHECK(s >= 0.0);
    CHECK(s < 1.0);
  }
}

TEST_CASE("bce loss examples") {
  const Mask gt = {1, 0, 1, 1};
  CHECK(bce_loss(std::vector<double>(4, 0.0), gt) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(bce_loss(std::vector<double>{30, -30, 30, 30}, gt) < 1e-9);
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> z(4);
    for (auto& v : z) v = rng.uniform(-4, 4);
    double want = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
      const double p = sigmoid_ref(z[i]);
      want -= gt[i] ? std::log(p) : std::log(1 - p);
    }
    CHECK(bce_loss(z, gt) == doctest::Approx(want / 4).epsilon(1e-12));
  }
}

TEST_CASE("bce loss stays finite for extreme logits") {
  const Mask gt = {1, 0, 1, 0};
  const double v = bce_loss(std::vector<double>{-1e4, 1e4, 1e4, -1e4}, gt);
  CHECK(std::isfinite(v));
  CHECK(v == doctest::Approx(1e4 / 2).epsilon(1e-12));
  CHECK(std::isfinite(bce_loss_with_grad(std::vector<double>{-1e4, 1e4, 1e4, -1e4}, gt).d_logits[0]));
}

TEST_CASE("logit-space losses agree with the probability forms") {
  Rng rng(3);
  std::vector<double> z(6);
  for (auto& v : z) v = rng.uniform(-3, 3);
  const Mask gt = {0, 1, 1, 0, 1, 0};
  std::vector<double> p(6);
  for (std::size_t i = 0; i < 6; ++i) p[i] = sigmoid_ref(z[i]);
  CHECK(dice_loss_on_logits(z, gt).value == doctest::Approx(dice_loss(p, gt)).epsilon(1e-12));
  CHECK(bce_loss_with_grad(z, gt).value == doctest::Approx(bce_loss(z, gt)).epsilon(1e-12));
  CHECK(mask_cost(z, gt, 2.0, 0.5) == doctest::Approx(2.0 * bce_loss(z, gt) + 0.5 * dice_loss(p, gt)).epsilon(1e-12));
}

TEST_CASE("hungarian examples") {
  Tensor diag = Tensor::matrix(4, 4, 5.0);
  for (std::size_t i = 0; i < 4; ++i) diag(i, i) = 0.0;
  const Assignment a = hungarian_match(diag);
  CHECK(a.cost == 0.0);
  for (std::size_t i = 0; i < 4; ++i) CHECK(a.pred_to_gt[i] == i);

  const Assignment b = hungarian_match(Tensor::from_rows({{1, 2}, {2, 1}}));
  CHECK(b.cost == 2.0);
  CHECK(b.pred_to_gt[0] == 0u);
  CHECK(b.pred_to_gt[1] == 1u);

  Rng rng(4);
  const Tensor c = rand_matrix(6, 6, rng);
  CHECK(hungarian_match(c).cost == doctest::Approx(brute_force_min(c)).epsilon(1e-12));
}

TEST_CASE("hungarian equals brute force for every size up to 7") {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t p = 1 + rng.below(7), g = 1 + rng.below(7);
    const Tensor c = rand_matrix(p, g, rng, 10.0);
    const Assignment a = hungarian_match(c);
    CAPTURE(p);
    CAPTURE(g);
    CHECK(a.matched() == std::min(p, g));
    CHECK(a.cost == doctest::Approx(brute_force_min(c)).epsilon(1e-12));
    // the reported cost is the sum over the reported pairs, each gt used once
    double s = 0.0;
    std::vector<bool> used(g, false);
    for (std::size_t i = 0; i < p; ++i) {
      if (!a.pred_to_gt[i]) continue;
      CHECK_FALSE(used[*a.pred_to_gt[i]]);
      used[*a.pred_to_gt[i]] = true;
      s += c(i, *a.pred_to_gt[i]);
    }
    CHECK(s == doctest::Approx(a.cost).epsilon(1e-12));
  }
}

TEST_CASE("total loss examples") {
  LossWeights w;
  LossComponents c{0.2, 0.1, 0.1, 0.4, 0.4};
  CHECK(total_loss(c, w) == doctest::Approx(1.0).epsilon(1e-12));
  w.mask = 0.0;
  CHECK(total_loss(c, w) == doctest::Approx(0.2).epsilon(1e-12));
  w = LossWeights{};
  w.txt = 0.0;
  CHECK(total_loss({5.0, 0.0, 0.0, 0.0, 0.0}, w) == 0.0);
  w = LossWeights{};
  w.ce_video = 0.0;
  CHECK(total_loss(c, w) == doctest::Approx(0.8).epsilon(1e-12));
  w.txt = -1.0;
  CHECK_THROWS_AS(w.validate(), ConfigError);
}

TEST_CASE("total loss is monotone in every component") {
  Rng rng(6);
  const LossWeights w;
  for (int trial = 0; trial < 100; ++trial) {
    LossComponents c{rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()};
    const double base = total_loss(c, w);
    double* fields[] = {&c.txt, &c.ce_f, &c.ce_v, &c.dice_f, &c.dice_v};
    for (double* f : fields) {
      const double saved = *f;
      *f += rng.uniform();
      CHECK(total_loss(c, w) >= base);
      *f = saved;
    }
  }
}

TEST_CASE("adamw leaves parameters alone with zero gradient and decay") {
  OptimizerConfig cfg;
  cfg.weight_decay = 0.0;
  Tensor p = Tensor::from_rows({{1.5, -2.0}});
  const Tensor g = Tensor::matrix(1, 2);
  AdamState st;
  for (int i = 0; i < 3; ++i) adamw_step({&p}, {&g}, st, cfg, 1e-2);
  CHECK(p == Tensor::from_rows({{1.5, -2.0}}));
  CHECK(st.steps == 3);
}

TEST_CASE("adamw first step closed form") {
  OptimizerConfig cfg;
  cfg.weight_decay = 0.0;
  const double lr = 0.01;
  Tensor p = Tensor::from_rows({{1.0, -1.0, 0.5}});
  const Tensor g = Tensor::from_rows({{0.3, -2.0, 1e-3}});
  AdamState st;
  adamw_step({&p}, {&g}, st, cfg, lr);
  const double start[] = {1.0, -1.0, 0.5};
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(p[i] == doctest::Approx(start[i] - lr * g[i] / (std::abs(g[i]) + 1e-8)).epsilon(1e-12));
  }
}

TEST_CASE("adamw on x squared follows a scalar oracle") {
  for (double wd : {0.0, 0.02}) {
    OptimizerConfig cfg;
    cfg.weight_decay = wd;
    const double lr = 0.1;
    Tensor x = Tensor::from_rows({{1.0}});
    Tensor g = Tensor::matrix(1, 1);
    AdamState st;
    double ox = 1.0, m = 0.0, v = 0.0;
    for (int t = 1; t <= 5; ++t) {
      g[0] = 2.0 * x[0];
      adamw_step({&x}, {&g}, st, cfg, lr);
      const double og = 2.0 * ox;
      ox -= lr * wd * ox;
      m = 0.9 * m + 0.1 * og;
      v = 0.999 * v + 0.001 * og * og;
      const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
      ox -= lr * mh / (std::sqrt(vh) + 1e-8);
      CHECK(x[0] == doctest::Approx(ox).epsilon(1e-12));
    }
    CHECK(x[0] < 1.0);
  }
}

TEST_CASE("learning rate schedule") {
  OptimizerConfig cfg;
  cfg.lr = 1e-3;
  cfg.warmup_iters = 10;
  CHECK(scheduled_lr(cfg, 1, 200) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(scheduled_lr(cfg, 10, 200) == doctest::Approx(1e-3).epsilon(1e-12));
  CHECK(scheduled_lr(cfg, 105, 200) == doctest::Approx(5e-4).epsilon(1e-12));
  CHECK(std::abs(scheduled_lr(cfg, 200, 200)) < 1e-18);
  double prev = scheduled_lr(cfg, 10, 200);
  for (std::size_t it = 11; it <= 200; ++it) {
    const double lr = scheduled_lr(cfg, it, 200);
    CHECK(lr <= prev);
    prev = lr;
  }
  CHECK_THROWS_AS(scheduled_lr(cfg, 0, 200), ConfigError);
  cfg.lr = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
