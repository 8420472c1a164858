#include "boxboot/gradsuites.hpp"

#include <cmath>
#include <functional>

#include "boxboot/loss_core.hpp"
#include "boxboot/loss_multiclass.hpp"
#include "boxboot/net.hpp"
#include "boxboot/rng.hpp"

namespace boxboot {

namespace {

double rel_err(double exact, double numeric) {
  const double denom =
      std::max(std::max(std::fabs(exact), std::fabs(numeric)), 1e-8);
  return std::fabs(exact - numeric) / denom;
}

double central_diff(const std::function<double(double)>& f, double x,
                    double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

constexpr double kH = 1e-6;
constexpr int kPoints = 1000;

}  // namespace

SuiteResult suite_bce_plain(std::uint64_t seed) {
  RngStream rng(seed, 1);
  double worst = 0.0;
  for (int k = 0; k < kPoints; ++k) {
    const double mu = -6.0 + 12.0 * rng.next_uniform();
    const double s = -4.0 + 6.0 * rng.next_uniform();
    const int y = rng.next_bernoulli(0.5) ? 1 : 0;
    const LossValueGrad g = bce_on_mean({mu, s}, y);
    const double fd = central_diff(
        [&](double m) { return bce_on_mean({m, s}, y).value; }, mu, kH);
    worst = std::max(worst, rel_err(g.d_mu, fd));
  }
  return {"BcePlain", worst, 1e-4};
}

SuiteResult suite_l2_unc(std::uint64_t seed) {
  RngStream rng(seed, 2);
  double worst = 0.0;
  for (int k = 0; k < kPoints; ++k) {
    const double mu = -6.0 + 12.0 * rng.next_uniform();
    const double s = -4.0 + 6.0 * rng.next_uniform();
    const int y = rng.next_bernoulli(0.5) ? 1 : 0;
    const LossValueGrad g = l2_uncertainty({mu, s}, y);
    const double fd_mu = central_diff(
        [&](double m) { return l2_uncertainty({m, s}, y).value; }, mu, kH);
    const double fd_s = central_diff(
        [&](double v) { return l2_uncertainty({mu, v}, y).value; }, s, kH);
    worst = std::max(worst, rel_err(g.d_mu, fd_mu));
    worst = std::max(worst, rel_err(g.d_log_var, fd_s));
  }
  return {"L2Unc", worst, 1e-4};
}

SuiteResult suite_bce_unc_bootstrap(std::uint64_t seed) {
  RngStream rng(seed, 3);
  const BootstrapParams boot{2.5, 0.2};
  double worst = 0.0;
  for (int k = 0; k < kPoints; ++k) {
    const double mu = -6.0 + 12.0 * rng.next_uniform();
    const double s = -4.0 + 6.0 * rng.next_uniform();
    const int y = rng.next_bernoulli(0.5) ? 1 : 0;

    const LossValueGrad unc = bce_uncertainty({mu, s}, y);
    worst = std::max(
        worst,
        rel_err(unc.d_mu,
                central_diff(
                    [&](double m) { return bce_uncertainty({m, s}, y).value; },
                    mu, kH)));
    worst = std::max(
        worst,
        rel_err(unc.d_log_var,
                central_diff(
                    [&](double v) { return bce_uncertainty({mu, v}, y).value; },
                    s, kH)));

    // Bootstrap: d_mu against FD in mu (W untouched); d_log_var must be 0.
    const LossValueGrad bl = bootstrap_loss({mu, s}, y, boot);
    worst = std::max(
        worst,
        rel_err(bl.d_mu,
                central_diff(
                    [&](double m) {
                      return bootstrap_loss({m, s}, y, boot).value;
                    },
                    mu, kH)));
    if (bl.d_log_var != 0.0) worst = std::max(worst, 1.0);

    // Gated composite pixel via split evaluation: frozen copies pinned at
    // the base point, gradients flow through the live arguments only.
    const GaussianLogit base{mu, s};
    const auto kind = rng.next_bernoulli(0.5) ? LabelKind::BoxDerived
                                              : LabelKind::PixelPerfect;
    const bool in_box = rng.next_bernoulli(0.5);
    const auto mode =
        rng.next_bernoulli(0.5) ? RegionMode::UncAll : RegionMode::UncBoxOnly;
    const PixelLoss px = composite_binary_pixel(
        base, base, static_cast<std::uint8_t>(y), kind, in_box, boot, mode);
    worst = std::max(
        worst,
        rel_err(px.d_mu, central_diff(
                             [&](double m) {
                               return composite_binary_pixel(
                                          {m, s}, base,
                                          static_cast<std::uint8_t>(y), kind,
                                          in_box, boot, mode)
                                   .value;
                             },
                             mu, kH)));
    worst = std::max(
        worst,
        rel_err(px.d_log_var, central_diff(
                                  [&](double v) {
                                    return composite_binary_pixel(
                                               {mu, v}, base,
                                               static_cast<std::uint8_t>(y),
                                               kind, in_box, boot, mode)
                                        .value;
                                  },
                                  s, kH)));
  }
  return {"BceUncBootstrap", worst, 1e-4};
}

SuiteResult suite_multiclass(std::uint64_t seed) {
  RngStream rng(seed, 4);
  const McConfig mc{20, seed};
  double worst = 0.0;
  for (int k = 0; k < 200; ++k) {
    const int c_count = 2 + (k % 2);
    GaussianLogitVec g;
    g.mu.resize(c_count);
    g.log_var.resize(c_count);
    for (int c = 0; c < c_count; ++c) {
      g.mu[c] = -4.0 + 8.0 * rng.next_uniform();
      g.log_var[c] = -4.0 + 6.0 * rng.next_uniform();
    }
    const int y = rng.next_below(c_count);

    // Same substream key for every evaluation: eps held fixed.
    const auto eval = [&](const GaussianLogitVec& point) {
      RngStream sub(seed, static_cast<std::uint64_t>(k), 7);
      return mc_expected_ce(point, y, mc, sub);
    };
    const VecLossGrad at_base = eval(g);
    const double h = 1e-5;
    for (int c = 0; c < c_count; ++c) {
      GaussianLogitVec p = g;
      p.mu[c] = g.mu[c] + h;
      const double up = eval(p).value;
      p.mu[c] = g.mu[c] - h;
      const double dn = eval(p).value;
      worst = std::max(worst, rel_err(at_base.d_mu[c], (up - dn) / (2 * h)));

      p = g;
      p.log_var[c] = g.log_var[c] + h;
      const double up_s = eval(p).value;
      p.log_var[c] = g.log_var[c] - h;
      const double dn_s = eval(p).value;
      worst = std::max(worst,
                       rel_err(at_base.d_log_var[c], (up_s - dn_s) / (2 * h)));
    }

    // Plain CE partials ride along at the same tolerance.
    const VecLossGrad ce = softmax_ce(g.mu, y);
    for (int c = 0; c < c_count; ++c) {
      GaussianLogitVec p = g;
      p.mu[c] = g.mu[c] + kH;
      const double up = softmax_ce(p.mu, y).value;
      p.mu[c] = g.mu[c] - kH;
      const double dn = softmax_ce(p.mu, y).value;
      worst = std::max(worst, rel_err(ce.d_mu[c], (up - dn) / (2 * kH)));
    }
  }
  return {"MultiClass", worst, 1e-3};
}

namespace {

// Picks a seed offset whose pre-activations sit away from the ReLU kinks so
// finite differences stay on one linear piece.
bool margin_ok(const ForwardCache& cache) {
  const double margin = 1e-5;
  for (const TensorBuf* t : {&cache.pre1, &cache.pre2}) {
    for (const double v : t->data) {
      if (std::fabs(v) < margin) return false;
    }
  }
  return true;
}

TensorBuf random_image(int h, int w, RngStream& rng) {
  TensorBuf img(3, h, w);
  for (double& v : img.data) v = rng.next_uniform();
  return img;
}

}  // namespace

SuiteResult suite_diffnet(std::uint64_t seed) {
  double worst = 0.0;
  const int hw = 8;
  bool ran_binary = false, ran_multiclass = false;

  // Binary composite end to end.
  for (int trial = 0; trial < 64; ++trial) {
    RngStream rng(seed, 5, trial);
    const NetworkParams params = NetworkParams::init(3, 1, seed + 100 + trial);
    const TensorBuf image = random_image(hw, hw, rng);
    ForwardCache cache;
    const GaussianLogitMap base = forward(params, image, &cache);
    if (!margin_ok(cache)) continue;

    TargetMask target(hw, hw);
    for (std::size_t i = 0; i < target.size(); ++i) {
      target.y[i] = rng.next_bernoulli(0.5) ? 1 : 0;
      target.kind[i] = rng.next_bernoulli(0.7)
                           ? static_cast<std::uint8_t>(LabelKind::BoxDerived)
                           : static_cast<std::uint8_t>(LabelKind::PixelPerfect);
      target.in_box[i] = rng.next_bernoulli(0.5) ? 1 : 0;
    }
    const BootstrapParams boot{1.2, 0.2};  // tau near initial sigma^2 range
    const LossBreakdown bd =
        composite_binary_loss(base, target, boot, RegionMode::UncAll);
    const ParamGrads analytic = backward(params, cache, bd.d_mu, bd.d_log_var);
    const auto f = [&](const NetworkParams& p) {
      return composite_binary_loss_split(forward(p, image), base, target, boot,
                                         RegionMode::UncAll)
          .value;
    };
    worst = std::max(worst,
                     finite_diff_check(f, params, analytic, 250, kH, seed + 9));
    ran_binary = true;
    break;
  }

  // Multi-class composite end to end (C = 3).
  for (int trial = 0; trial < 64; ++trial) {
    RngStream rng(seed, 6, trial);
    const NetworkParams params = NetworkParams::init(3, 3, seed + 200 + trial);
    const TensorBuf image = random_image(hw, hw, rng);
    ForwardCache cache;
    const GaussianLogitMap base = forward(params, image, &cache);
    if (!margin_ok(cache)) continue;

    TargetMask target(hw, hw);
    for (std::size_t i = 0; i < target.size(); ++i) {
      target.y[i] = static_cast<std::uint8_t>(rng.next_below(3));
      target.kind[i] = rng.next_bernoulli(0.7)
                           ? static_cast<std::uint8_t>(LabelKind::BoxDerived)
                           : static_cast<std::uint8_t>(LabelKind::PixelPerfect);
      target.in_box[i] = rng.next_bernoulli(0.6) ? 1 : 0;
    }
    const McConfig mc{20, seed + 3};
    const LossBreakdown bd =
        composite_multiclass_loss(base, target, 1.2, mc, 11);
    const ParamGrads analytic = backward(params, cache, bd.d_mu, bd.d_log_var);
    const auto f = [&](const NetworkParams& p) {
      return composite_multiclass_loss_split(forward(p, image), base, target,
                                             1.2, mc, 11)
          .value;
    };
    worst = std::max(
        worst, finite_diff_check(f, params, analytic, 150, kH, seed + 10));
    ran_multiclass = true;
    break;
  }

  if (!ran_binary || !ran_multiclass) worst = 1.0;  // no kink-free trial found
  return {"diffnet", worst, 1e-4};
}

std::vector<SuiteResult> run_all_suites(std::uint64_t seed) {
  return {suite_bce_plain(seed), suite_l2_unc(seed),
          suite_bce_unc_bootstrap(seed), suite_multiclass(seed),
          suite_diffnet(seed)};
}

}  // namespace boxboot
