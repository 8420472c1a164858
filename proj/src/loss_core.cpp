#include "boxboot/loss_core.hpp"

#include <cmath>
#include <stdexcept>

namespace boxboot {

namespace {

double clamp_prob(double p) {
  if (p < kProbEps) return kProbEps;
  if (p > 1.0 - kProbEps) return 1.0 - kProbEps;
  return p;
}

void check_map_shapes(const GaussianLogitMap& logits,
                      const TargetMask& targets) {
  require_same_shape(logits.mu, logits.log_var, "GaussianLogitMap");
  if (logits.mu.channels != 1) {
    throw std::invalid_argument("binary composite: expected 1 channel");
  }
  if (logits.mu.height != targets.height ||
      logits.mu.width != targets.width) {
    throw std::invalid_argument("composite loss: logits/targets shape mismatch");
  }
  if (targets.size() == 0) {
    throw std::invalid_argument("composite loss: empty image");
  }
}

}  // namespace

double sigmoid(double x) {
  // Branch-free stable form: exp(min(x,0)) / (1 + exp(-|x|)).
  const double e = std::exp(std::fmin(x, 0.0));
  return e / (1.0 + std::exp(-std::fabs(x)));
}

double bce(double p_hat, int y) {
  const double p = clamp_prob(p_hat);
  return y == 1 ? -std::log(p) : -std::log(1.0 - p);
}

LossValueGrad l2_uncertainty(GaussianLogit g, double y) {
  const double s = clamp_log_var(g.log_var);
  const double inv_var = std::exp(-s);
  const double r = y - g.mu;
  LossValueGrad out;
  out.value = 0.5 * r * r * inv_var + 0.5 * s;
  out.d_mu = -r * inv_var;
  out.d_log_var = (s == g.log_var) ? (-0.5 * r * r * inv_var + 0.5) : 0.0;
  return out;
}

double expected_sigmoid(GaussianLogit g) {
  const double var = std::exp(clamp_log_var(g.log_var));
  return sigmoid(g.mu / std::sqrt(1.0 + 0.39269908169872415481 * var));
}

LossValueGrad bce_uncertainty(GaussianLogit g, int y) {
  const double s = clamp_log_var(g.log_var);
  const double var = std::exp(s);
  const double k = 1.0 / std::sqrt(1.0 + 0.39269908169872415481 * var);
  const double p = sigmoid(g.mu * k);
  LossValueGrad out;
  out.value = bce(p, y);
  const double residual = p - y;
  out.d_mu = residual * k;
  // d/ds of sigmoid(mu * (1 + pi var / 8)^-1/2); pi/16 = 0.19634954...
  const double dz_ds = -g.mu * 0.19634954084936207740 * var * k * k * k;
  out.d_log_var = (s == g.log_var) ? residual * dz_ds : 0.0;
  return out;
}

double bootstrap_weight(double log_var, const BootstrapParams& p) {
  const double var = std::exp(clamp_log_var(log_var));
  return sigmoid((p.tau - var) / p.slope);
}

LossValueGrad bootstrap_loss(GaussianLogit g, int y, const BootstrapParams& p) {
  const double w = bootstrap_weight(g.log_var, p);
  const double prob = sigmoid(g.mu);
  LossValueGrad out;
  out.value = w * bce(prob, y) + (1.0 - w) * bce(prob, 1 - y);
  // W is a constant here: the bootstrap term never trains the variance.
  out.d_mu = w * (prob - y) + (1.0 - w) * (prob - (1 - y));
  out.d_log_var = 0.0;
  return out;
}

LossValueGrad bce_on_mean(GaussianLogit g, int y) {
  const double prob = sigmoid(g.mu);
  return LossValueGrad{bce(prob, y), prob - y, 0.0};
}

LossValueGrad l2_on_mean(GaussianLogit g, double y) {
  const double r = y - g.mu;
  return LossValueGrad{r * r, -2.0 * r, 0.0};
}

PixelLoss composite_binary_pixel(GaussianLogit live, GaussianLogit frozen,
                                 std::uint8_t y, LabelKind kind, bool in_box,
                                 const BootstrapParams& p, RegionMode mode) {
  PixelLoss out;
  out.weight = bootstrap_weight(frozen.log_var, p);
  out.flip = out.weight < 0.5;

  const bool uncertainty_active =
      kind == LabelKind::BoxDerived &&
      (mode == RegionMode::UncAll || in_box);
  if (!uncertainty_active) {
    const LossValueGrad plain = bce_on_mean(live, y);
    out.value = plain.value;
    out.d_mu = plain.d_mu;
    out.d_log_var = 0.0;
    return out;
  }

  // Uncertainty term: mean detached, trains log_var only.
  const LossValueGrad unc =
      bce_uncertainty({frozen.mu, live.log_var}, y);
  // Bootstrap term: weight's variance detached, trains mu only.
  const LossValueGrad boot =
      bootstrap_loss({live.mu, frozen.log_var}, y, p);
  out.value = unc.value + boot.value;
  out.d_mu = boot.d_mu;
  out.d_log_var = unc.d_log_var;
  return out;
}

PixelLoss composite_l2_pixel(GaussianLogit g, std::uint8_t y, LabelKind kind,
                             bool in_box, RegionMode mode) {
  PixelLoss out;
  out.weight = 1.0;
  out.flip = false;

  const bool uncertainty_active =
      kind == LabelKind::BoxDerived &&
      (mode == RegionMode::UncAll || in_box);
  const LossValueGrad term = uncertainty_active
                                 ? l2_uncertainty(g, y)
                                 : l2_on_mean(g, y);
  out.value = term.value;
  out.d_mu = term.d_mu;
  out.d_log_var = term.d_log_var;
  return out;
}

namespace {

template <typename PixelFn>
LossBreakdown reduce_pixels(const TargetMask& targets, PixelFn&& fn) {
  const int h = targets.height;
  const int w = targets.width;
  const int n = h * w;

  LossBreakdown bd;
  bd.d_mu = TensorBuf(1, h, w);
  bd.d_log_var = TensorBuf(1, h, w);
  bd.weight.assign(n, 1.0);
  bd.flip.assign(n, 0);

  std::vector<double> values(n, 0.0);

#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    const PixelLoss px = fn(i);
    values[i] = px.value;
    bd.d_mu.data[i] = px.d_mu;
    bd.d_log_var.data[i] = px.d_log_var;
    bd.weight[i] = px.weight;
    bd.flip[i] = px.flip ? 1 : 0;
  }

  // Serial reduction in pixel order: bit-identical for any thread count.
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += values[i];
  const double inv_n = 1.0 / n;
  bd.value = sum * inv_n;
  for (int i = 0; i < n; ++i) {
    bd.d_mu.data[i] *= inv_n;
    bd.d_log_var.data[i] *= inv_n;
  }
  return bd;
}

}  // namespace

LossBreakdown composite_binary_loss_split(const GaussianLogitMap& live,
                                          const GaussianLogitMap& frozen,
                                          const TargetMask& targets,
                                          const BootstrapParams& p,
                                          RegionMode mode) {
  check_map_shapes(live, targets);
  require_same_shape(live.mu, frozen.mu, "composite split");
  return reduce_pixels(targets, [&](int i) {
    return composite_binary_pixel(
        {live.mu.data[i], live.log_var.data[i]},
        {frozen.mu.data[i], frozen.log_var.data[i]}, targets.y[i],
        static_cast<LabelKind>(targets.kind[i]), targets.in_box[i] != 0, p,
        mode);
  });
}

LossBreakdown composite_binary_loss(const GaussianLogitMap& logits,
                                    const TargetMask& targets,
                                    const BootstrapParams& p,
                                    RegionMode mode) {
  return composite_binary_loss_split(logits, logits, targets, p, mode);
}

LossBreakdown composite_l2_loss(const GaussianLogitMap& logits,
                                const TargetMask& targets, RegionMode mode) {
  check_map_shapes(logits, targets);
  return reduce_pixels(targets, [&](int i) {
    return composite_l2_pixel({logits.mu.data[i], logits.log_var.data[i]},
                              targets.y[i],
                              static_cast<LabelKind>(targets.kind[i]),
                              targets.in_box[i] != 0, mode);
  });
}

LossBreakdown composite_plain_bce_loss(const GaussianLogitMap& logits,
                                       const TargetMask& targets) {
  check_map_shapes(logits, targets);
  return reduce_pixels(targets, [&](int i) {
    const LossValueGrad plain =
        bce_on_mean({logits.mu.data[i], logits.log_var.data[i]},
                    targets.y[i]);
    PixelLoss px;
    px.value = plain.value;
    px.d_mu = plain.d_mu;
    px.d_log_var = 0.0;
    px.weight = 1.0;
    px.flip = false;
    return px;
  });
}

}  // namespace boxboot
