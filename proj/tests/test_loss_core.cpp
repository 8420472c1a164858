#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "boxboot/loss_core.hpp"
#include "boxboot/reference.hpp"
#include "boxboot/rng.hpp"
#include "doctest.h"

using namespace boxboot;

namespace {

double fd(const std::function<double(double)>& f, double x, double h = 1e-6) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

double rel_err(double a, double b) {
  return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), 1e-8});
}

}  // namespace

TEST_CASE("sigmoid values and saturation") {
  CHECK(sigmoid(0.0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(sigmoid(std::log(3.0)) == doctest::Approx(0.75).epsilon(1e-14));
  const double tail = sigmoid(-40.0);
  CHECK(tail > 0.0);
  CHECK(tail < 1e-17);
  CHECK(std::isfinite(std::log(tail)));
  CHECK(std::isfinite(sigmoid(700.0)));
  CHECK(std::isfinite(sigmoid(-700.0)));
}

TEST_CASE("bce values") {
  CHECK(bce(0.5, 1) == doctest::Approx(0.69314718055994531).epsilon(1e-12));
  CHECK(bce(1.0 - 1e-12, 1) == doctest::Approx(0.0).epsilon(1e-9));
  // frozen from the high-precision oracle: -ln(0.1)
  CHECK(bce(0.9, 0) == doctest::Approx(2.3025850929940457).epsilon(1e-12));
  // clamping keeps the loss finite at the boundaries
  CHECK(std::isfinite(bce(0.0, 1)));
  CHECK(std::isfinite(bce(1.0, 0)));
}

TEST_CASE("l2_uncertainty examples") {
  const LossValueGrad a = l2_uncertainty({0.0, 0.0}, 0.0);
  CHECK(a.value == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(a.d_mu == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(a.d_log_var == doctest::Approx(0.5).epsilon(1e-15));

  CHECK(l2_uncertainty({0.0, 0.0}, 1.0).value ==
        doctest::Approx(0.5).epsilon(1e-15));
  // frozen from the high-precision oracle: 0.0625 + ln(2)/2
  CHECK(l2_uncertainty({0.5, std::log(2.0)}, 1.0).value ==
        doctest::Approx(0.40907359027997265).epsilon(1e-12));
}

TEST_CASE("l2_uncertainty equals negative log gaussian minus constant") {
  RngStream rng(11);
  for (int k = 0; k < 200; ++k) {
    const double mu = -6 + 12 * rng.next_uniform();
    const double s = -4 + 6 * rng.next_uniform();
    const double y = rng.next_bernoulli(0.5) ? 1.0 : 0.0;
    const double var = std::exp(s);
    const double log_n = -0.5 * std::log(2.0 * M_PI * var) -
                         0.5 * (y - mu) * (y - mu) / var;
    const double expected = -log_n - 0.5 * std::log(2.0 * M_PI);
    CHECK(l2_uncertainty({mu, s}, y).value ==
          doctest::Approx(expected).epsilon(1e-10));
  }
}

TEST_CASE("l2_uncertainty attenuation: interior minimum at sigma^2 = r^2") {
  for (const double r : {1.5, 2.0, 3.5}) {
    const double mu = 0.0, y = r;
    double best_s = -4.0, best_v = 1e300;
    for (double s = -4.0; s <= 4.0; s += 1e-4) {
      const double v = l2_uncertainty({mu, s}, y).value;
      if (v < best_v) {
        best_v = v;
        best_s = s;
      }
    }
    CHECK(best_s == doctest::Approx(std::log(r * r)).epsilon(1e-3));
    // the argmin is interior
    CHECK(best_s > -3.9);
    CHECK(best_s < 3.9);
    CHECK(std::fabs(l2_uncertainty({mu, best_s}, y).d_log_var) < 1e-3);
  }
}

TEST_CASE("expected_sigmoid examples and cross-check") {
  CHECK(expected_sigmoid({0.0, 3.0}) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(expected_sigmoid({3.0, -30.0}) ==
        doctest::Approx(sigmoid(3.0)).epsilon(1e-6));
  // frozen from the high-precision oracle: sigmoid(sqrt(2))
  CHECK(expected_sigmoid({2.0, std::log(8.0 / M_PI)}) ==
        doctest::Approx(0.80442968250695691).epsilon(1e-12));

  // Monte-Carlo cross-check of the probit-style approximation.
  RngStream rng(42);
  const double mu = 2.0, var = 8.0 / M_PI;
  double acc = 0.0;
  const int n = 1000000;
  for (int i = 0; i < n; ++i) {
    acc += sigmoid(mu + std::sqrt(var) * rng.next_normal());
  }
  CHECK(std::fabs(acc / n - expected_sigmoid({mu, std::log(var)})) < 0.01);
}

TEST_CASE("expected_sigmoid monotonicity") {
  for (double s = -4; s <= 2; s += 0.5) {
    double prev = 0.0;
    for (double mu = -6; mu <= 6; mu += 0.25) {
      const double v = expected_sigmoid({mu, s});
      if (mu > -6) CHECK(v > prev);
      prev = v;
    }
  }
  for (const double mu : {-3.0, -1.0, 0.5, 2.0}) {
    double prev_gap = 1.0;
    for (double s = -4; s <= 4; s += 0.25) {
      const double gap = std::fabs(expected_sigmoid({mu, s}) - 0.5);
      CHECK(gap <= prev_gap + 1e-15);
      prev_gap = gap;
    }
  }
}

TEST_CASE("bce_uncertainty examples") {
  CHECK(bce_uncertainty({0.0, 0.0}, 1).value ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  // frozen from the high-precision oracle: bce(sigmoid(5), 1) at s = -30
  CHECK(bce_uncertainty({5.0, -30.0}, 1).value ==
        doctest::Approx(0.0067153484891186835).epsilon(1e-10));

  const LossValueGrad g = bce_uncertainty({1.0, 1.0}, 0);
  CHECK(g.value == doctest::Approx(1.1001639229945715).epsilon(1e-12));
  CHECK(g.d_mu == doctest::Approx(0.46400858147782252).epsilon(1e-12));
  CHECK(g.d_log_var == doctest::Approx(-0.11978759481601443).epsilon(1e-12));

  const double fd_mu =
      fd([](double m) { return bce_uncertainty({m, 1.0}, 0).value; }, 1.0);
  const double fd_s =
      fd([](double s) { return bce_uncertainty({1.0, s}, 0).value; }, 1.0);
  CHECK(rel_err(g.d_mu, fd_mu) < 1e-6);
  CHECK(rel_err(g.d_log_var, fd_s) < 1e-6);
}

TEST_CASE("bootstrap_weight examples and monotonicity") {
  const BootstrapParams p{2.5, 0.2};
  CHECK(bootstrap_weight(std::log(2.5), p) ==
        doctest::Approx(0.5).epsilon(1e-12));
  // frozen from the high-precision oracle: sigmoid(1)
  CHECK(bootstrap_weight(std::log(2.3), p) ==
        doctest::Approx(0.73105857863000488).epsilon(1e-12));
  CHECK(bootstrap_weight(std::log(12.5), p) < 1e-20);

  double prev = 1.0;
  for (double s = -4; s <= 4; s += 0.05) {
    const double w = bootstrap_weight(s, p);
    CHECK(w < prev);
    prev = w;
  }
}

TEST_CASE("bootstrap_loss examples and gating") {
  const BootstrapParams p{2.5, 0.2};
  // sigma^2 = tau: the symmetric mix
  for (const double mu : {-2.0, 0.0, 1.5}) {
    const double expected =
        0.5 * (bce(sigmoid(mu), 1) + bce(sigmoid(mu), 0));
    CHECK(bootstrap_loss({mu, std::log(2.5)}, 1, p).value ==
          doctest::Approx(expected).epsilon(1e-12));
  }
  // sigma^2 << tau: reduces to plain BCE up to 1 - W = sigmoid(-tau/slope)
  const LossValueGrad low = bootstrap_loss({0.0, -8.0}, 1, p);
  CHECK(low.value == doctest::Approx(std::log(2.0)).epsilon(1e-9));
  CHECK(low.d_mu == doctest::Approx(-0.5).epsilon(1e-5));

  RngStream rng(7);
  for (int k = 0; k < 100; ++k) {
    const double mu = -6 + 12 * rng.next_uniform();
    const double s = -4 + 6 * rng.next_uniform();
    const int y = rng.next_bernoulli(0.5) ? 1 : 0;
    CHECK(bootstrap_loss({mu, s}, y, p).d_log_var == 0.0);
  }
}

TEST_CASE("gradient exactness over random points") {
  RngStream rng(1234);
  const BootstrapParams p{2.5, 0.2};
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const double mu = -6 + 12 * rng.next_uniform();
    const double s = -4 + 6 * rng.next_uniform();
    const int y = rng.next_bernoulli(0.5) ? 1 : 0;

    const LossValueGrad l2 = l2_uncertainty({mu, s}, y);
    worst = std::max(worst, rel_err(l2.d_mu, fd([&](double m) {
      return l2_uncertainty({m, s}, y).value;
    }, mu)));
    worst = std::max(worst, rel_err(l2.d_log_var, fd([&](double v) {
      return l2_uncertainty({mu, v}, y).value;
    }, s)));

    const LossValueGrad bu = bce_uncertainty({mu, s}, y);
    worst = std::max(worst, rel_err(bu.d_mu, fd([&](double m) {
      return bce_uncertainty({m, s}, y).value;
    }, mu)));
    worst = std::max(worst, rel_err(bu.d_log_var, fd([&](double v) {
      return bce_uncertainty({mu, v}, y).value;
    }, s)));

    const LossValueGrad bl = bootstrap_loss({mu, s}, y, p);
    worst = std::max(worst, rel_err(bl.d_mu, fd([&](double m) {
      return bootstrap_loss({m, s}, y, p).value;
    }, mu)));

    const LossValueGrad pb = bce_on_mean({mu, s}, y);
    worst = std::max(worst, rel_err(pb.d_mu, fd([&](double m) {
      return bce_on_mean({m, s}, y).value;
    }, mu)));
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("composite pixel gating via term-wise finite differences") {
  RngStream rng(5);
  const BootstrapParams p{2.5, 0.2};
  for (int k = 0; k < 200; ++k) {
    const double mu = -6 + 12 * rng.next_uniform();
    const double s = -4 + 6 * rng.next_uniform();
    const int y = rng.next_bernoulli(0.5) ? 1 : 0;
    const GaussianLogit base{mu, s};

    // mu detached in the uncertainty term, sigma^2 detached in the bootstrap
    // term: the split-evaluation finite differences must match the gated
    // gradients, which in turn must equal the per-term ones.
    const PixelLoss px = composite_binary_pixel(
        base, base, static_cast<std::uint8_t>(y), LabelKind::BoxDerived, true,
        p, RegionMode::UncBoxOnly);
    const double fd_mu = fd([&](double m) {
      return composite_binary_pixel({m, s}, base, static_cast<std::uint8_t>(y),
                                    LabelKind::BoxDerived, true, p,
                                    RegionMode::UncBoxOnly)
          .value;
    }, mu);
    const double fd_s = fd([&](double v) {
      return composite_binary_pixel({mu, v}, base, static_cast<std::uint8_t>(y),
                                    LabelKind::BoxDerived, true, p,
                                    RegionMode::UncBoxOnly)
          .value;
    }, s);
    CHECK(rel_err(px.d_mu, fd_mu) < 1e-5);
    CHECK(rel_err(px.d_log_var, fd_s) < 1e-5);
    // and the live-mu gradient equals the bootstrap term's alone
    CHECK(px.d_mu ==
          doctest::Approx(bootstrap_loss(base, y, p).d_mu).epsilon(1e-12));
    CHECK(px.d_log_var ==
          doctest::Approx(bce_uncertainty(base, y).d_log_var).epsilon(1e-12));
  }
}

TEST_CASE("composite single box-derived pixel equals sum of the two ops") {
  const BootstrapParams p{2.5, 0.2};
  GaussianLogitMap logits;
  logits.mu = TensorBuf(1, 1, 1);
  logits.log_var = TensorBuf(1, 1, 1);
  TargetMask tm(1, 1);
  tm.y[0] = 1;
  tm.kind[0] = static_cast<std::uint8_t>(LabelKind::BoxDerived);
  tm.in_box[0] = 1;
  const LossBreakdown bd =
      composite_binary_loss(logits, tm, p, RegionMode::UncBoxOnly);
  const double expected = bce_uncertainty({0.0, 0.0}, 1).value +
                          bootstrap_loss({0.0, 0.0}, 1, p).value;
  CHECK(bd.value == doctest::Approx(expected).epsilon(1e-14));
  // frozen from the high-precision oracle: 2 ln 2
  CHECK(bd.value == doctest::Approx(1.3862943611198906).epsilon(1e-12));
}

TEST_CASE("composite all pixel-perfect equals mean plain bce, zero s-grads") {
  RngStream rng(9);
  const BootstrapParams p{2.5, 0.2};
  GaussianLogitMap logits;
  logits.mu = TensorBuf(1, 4, 4);
  logits.log_var = TensorBuf(1, 4, 4);
  TargetMask tm(4, 4);
  double expected = 0.0;
  for (int i = 0; i < 16; ++i) {
    logits.mu.data[i] = -3 + 6 * rng.next_uniform();
    logits.log_var.data[i] = -4 + 6 * rng.next_uniform();
    tm.y[i] = rng.next_bernoulli(0.5) ? 1 : 0;
    tm.kind[i] = static_cast<std::uint8_t>(LabelKind::PixelPerfect);
    expected += bce(sigmoid(logits.mu.data[i]), tm.y[i]);
  }
  const LossBreakdown bd =
      composite_binary_loss(logits, tm, p, RegionMode::UncAll);
  CHECK(bd.value == doctest::Approx(expected / 16).epsilon(1e-13));
  for (const double g : bd.d_log_var.data) CHECK(g == 0.0);
}

TEST_CASE("composite mixed 4x4 equals brute-force per-pixel dispatch") {
  RngStream rng(77);
  const BootstrapParams p{2.5, 0.2};
  for (const RegionMode mode : {RegionMode::UncAll, RegionMode::UncBoxOnly}) {
    GaussianLogitMap logits;
    logits.mu = TensorBuf(1, 4, 4);
    logits.log_var = TensorBuf(1, 4, 4);
    TargetMask tm(4, 4);
    for (int i = 0; i < 16; ++i) {
      logits.mu.data[i] = -5 + 10 * rng.next_uniform();
      logits.log_var.data[i] = -4 + 6 * rng.next_uniform();
      tm.y[i] = rng.next_bernoulli(0.5) ? 1 : 0;
      tm.kind[i] = rng.next_bernoulli(0.5)
                       ? static_cast<std::uint8_t>(LabelKind::BoxDerived)
                       : static_cast<std::uint8_t>(LabelKind::PixelPerfect);
      tm.in_box[i] = rng.next_bernoulli(0.5) ? 1 : 0;
    }
    const LossBreakdown fast = composite_binary_loss(logits, tm, p, mode);
    const LossBreakdown ref =
        reference::composite_binary_loss(logits, tm, p, mode);
    CHECK(fast.value == ref.value);
    for (int i = 0; i < 16; ++i) {
      CHECK(fast.d_mu.data[i] == ref.d_mu.data[i]);
      CHECK(fast.d_log_var.data[i] == ref.d_log_var.data[i]);
      CHECK(fast.weight[i] == ref.weight[i]);
      CHECK(fast.flip[i] == ref.flip[i]);
    }
  }
}

TEST_CASE("composite l2 matches reference and handles region modes") {
  RngStream rng(78);
  for (const RegionMode mode : {RegionMode::UncAll, RegionMode::UncBoxOnly}) {
    GaussianLogitMap logits;
    logits.mu = TensorBuf(1, 4, 4);
    logits.log_var = TensorBuf(1, 4, 4);
    TargetMask tm(4, 4);
    for (int i = 0; i < 16; ++i) {
      logits.mu.data[i] = -2 + 4 * rng.next_uniform();
      logits.log_var.data[i] = -4 + 6 * rng.next_uniform();
      tm.y[i] = rng.next_bernoulli(0.5) ? 1 : 0;
      tm.kind[i] = rng.next_bernoulli(0.7)
                       ? static_cast<std::uint8_t>(LabelKind::BoxDerived)
                       : static_cast<std::uint8_t>(LabelKind::PixelPerfect);
      tm.in_box[i] = rng.next_bernoulli(0.5) ? 1 : 0;
    }
    const LossBreakdown fast = composite_l2_loss(logits, tm, mode);
    const LossBreakdown ref = reference::composite_l2_loss(logits, tm, mode);
    CHECK(fast.value == ref.value);
    for (int i = 0; i < 16; ++i) {
      CHECK(fast.d_mu.data[i] == ref.d_mu.data[i]);
      CHECK(fast.d_log_var.data[i] == ref.d_log_var.data[i]);
    }
  }
}

TEST_CASE("composite on all-background pixel-perfect mask tends to zero") {
  GaussianLogitMap logits;
  logits.mu = TensorBuf(1, 4, 4, -20.0);
  logits.log_var = TensorBuf(1, 4, 4, 0.5);
  TargetMask tm(4, 4);  // y = 0, PixelPerfect
  const LossBreakdown bd = composite_binary_loss(
      logits, tm, BootstrapParams{}, RegionMode::UncBoxOnly);
  CHECK(bd.value < 1e-8);
  CHECK(bd.value >= 0.0);
}

TEST_CASE("composite errors on shape mismatch and empty maps") {
  GaussianLogitMap logits;
  logits.mu = TensorBuf(1, 4, 4);
  logits.log_var = TensorBuf(1, 4, 4);
  TargetMask tm(3, 4);
  CHECK_THROWS_AS(composite_binary_loss(logits, tm, BootstrapParams{},
                                        RegionMode::UncAll),
                  std::invalid_argument);
  TargetMask empty(0, 0);
  GaussianLogitMap empty_logits;
  empty_logits.mu = TensorBuf(1, 0, 0);
  empty_logits.log_var = TensorBuf(1, 0, 0);
  CHECK_THROWS_AS(composite_binary_loss(empty_logits, empty,
                                        BootstrapParams{}, RegionMode::UncAll),
                  std::invalid_argument);
}
