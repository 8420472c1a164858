#pragma once

#include <cstdint>
#include <vector>

#include "boxboot/tensor.hpp"

namespace boxboot {

// Clamp range for the log-variance head; exp stays finite inside it.
inline constexpr double kLogVarMin = -30.0;
inline constexpr double kLogVarMax = 30.0;
// Probabilities are clamped to [kProbEps, 1 - kProbEps] before any log.
inline constexpr double kProbEps = 1e-12;

// Per-pixel Gaussian logit: mean mu and log-variance s = log(sigma^2).
struct GaussianLogit {
  double mu = 0.0;
  double log_var = 0.0;
};

enum class LabelKind : std::uint8_t { PixelPerfect = 0, BoxDerived = 1 };

enum class RegionMode { UncAll, UncBoxOnly };

// W = sigmoid((tau - sigma^2) / slope).  The 0.2 slope is fixed upstream;
// it is a parameter here with the same default.
struct BootstrapParams {
  double tau = 2.5;
  double slope = 0.2;
};

// Loss value with analytic partials wrt mu and log_var.
struct LossValueGrad {
  double value = 0.0;
  double d_mu = 0.0;
  double d_log_var = 0.0;
};

// Dense per-pixel logit maps; mu and log_var are (C, H, W).
struct GaussianLogitMap {
  TensorBuf mu;
  TensorBuf log_var;
};

// Per-pixel targets.  kind/in_box are per pixel so one map can mix
// supervision types.
struct TargetMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> y;       // class id, 0 = background
  std::vector<std::uint8_t> kind;    // LabelKind
  std::vector<std::uint8_t> in_box;  // 1 if inside some bounding box

  TargetMask() = default;
  TargetMask(int h, int w)
      : height(h),
        width(w),
        y(static_cast<std::size_t>(h) * w, 0),
        kind(static_cast<std::size_t>(h) * w, 0),
        in_box(static_cast<std::size_t>(h) * w, 0) {}

  std::size_t size() const { return y.size(); }
};

// Composite-loss output: mean scalar, per-pixel diagnostics, and the gated
// gradient maps of that mean scalar.
struct LossBreakdown {
  double value = 0.0;
  TensorBuf d_mu;                      // (C, H, W)
  TensorBuf d_log_var;                 // (C, H, W)
  std::vector<double> weight;          // per-pixel bootstrap weight W
  std::vector<std::uint8_t> flip;      // W < 0.5
  TensorBuf flip_by_class;             // (C, H, W) 0/1; multi-class runs only
};

double sigmoid(double x);
double bce(double p_hat, int y);

inline double clamp_log_var(double s) {
  return s < kLogVarMin ? kLogVarMin : (s > kLogVarMax ? kLogVarMax : s);
}

// -log N(y; mu, sigma^2) with the 1/2 log(2 pi) constant dropped:
// (y - mu)^2 / (2 sigma^2) + s / 2.
LossValueGrad l2_uncertainty(GaussianLogit g, double y);

// sigmoid(mu / sqrt(1 + pi sigma^2 / 8)), the closed-form approximation of
// the sigmoid integrated over the logit distribution.
double expected_sigmoid(GaussianLogit g);

// BCE of expected_sigmoid, with exact chain-rule partials.
LossValueGrad bce_uncertainty(GaussianLogit g, int y);

double bootstrap_weight(double log_var, const BootstrapParams& p);

// W * BCE(sigmoid(mu), y) + (1 - W) * BCE(sigmoid(mu), 1 - y) with W treated
// as a constant: d_log_var is identically zero.
LossValueGrad bootstrap_loss(GaussianLogit g, int y, const BootstrapParams& p);

// Plain BCE on the mean logit; carries no gradient to log_var.
LossValueGrad bce_on_mean(GaussianLogit g, int y);

// Plain squared error (y - mu)^2 on the mean; no gradient to log_var.
LossValueGrad l2_on_mean(GaussianLogit g, double y);

// One pixel of the gated composite.  `frozen` supplies the detached logit
// copies (the bootstrap weight's sigma^2 and the uncertainty term's mu);
// normal evaluation passes frozen == live, finite-difference checks hold
// frozen at the base point.
struct PixelLoss {
  double value = 0.0;
  double d_mu = 0.0;
  double d_log_var = 0.0;
  double weight = 1.0;
  bool flip = false;
};

PixelLoss composite_binary_pixel(GaussianLogit live, GaussianLogit frozen,
                                 std::uint8_t y, LabelKind kind, bool in_box,
                                 const BootstrapParams& p, RegionMode mode);

// One pixel of the regression composite (no gating, no bootstrap):
// pixel-perfect pixels get plain L2 on mu, box-derived pixels inside the
// active region get the variance-attenuated L2.
PixelLoss composite_l2_pixel(GaussianLogit g, std::uint8_t y, LabelKind kind,
                             bool in_box, RegionMode mode);

// Mean-over-pixels composites (OpenMP-parallel; deterministic reduction).
LossBreakdown composite_binary_loss(const GaussianLogitMap& logits,
                                    const TargetMask& targets,
                                    const BootstrapParams& p, RegionMode mode);

// Plain supervised BCE on the mean for every pixel regardless of kind; the
// baseline that treats box targets as masks.
LossBreakdown composite_plain_bce_loss(const GaussianLogitMap& logits,
                                       const TargetMask& targets);
LossBreakdown composite_l2_loss(const GaussianLogitMap& logits,
                                const TargetMask& targets, RegionMode mode);

// Split evaluation for gradient checks: gradients flow only through `live`,
// the detached uses read `frozen`.
LossBreakdown composite_binary_loss_split(const GaussianLogitMap& live,
                                          const GaussianLogitMap& frozen,
                                          const TargetMask& targets,
                                          const BootstrapParams& p,
                                          RegionMode mode);

}  // namespace boxboot
