#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "boxboot/loss_core.hpp"
#include "boxboot/rng.hpp"

namespace boxboot {

// Per-pixel multi-class head: mean vector and per-class log-variances
// (diagonal covariance).
struct GaussianLogitVec {
  std::vector<double> mu;
  std::vector<double> log_var;
};

struct McConfig {
  int t_samples = 20;
  std::uint64_t seed = 0;
};

// Loss value with per-class partials.
struct VecLossGrad {
  double value = 0.0;
  std::vector<double> d_mu;
  std::vector<double> d_log_var;
};

// T logit vectors l_t = mu + sigma (.) eps_t, eps ~ N(0, I), sigma_c =
// exp(s_c / 2).  Flattened t-major: sample t occupies [t*C, (t+1)*C).
std::vector<double> sample_logits(const GaussianLogitVec& g,
                                  const McConfig& mc, RngStream& rng);

// Monte-Carlo estimate of -log E[softmax(l)_y] via the max-shifted
// log-mean-exp of per-sample log-softmax values; gradients by
// reparameterization with the drawn eps held fixed.
VecLossGrad mc_expected_ce(const GaussianLogitVec& g, int y,
                           const McConfig& mc, RngStream& rng);

// argmax_c mu_c if max_c sigma^2_c > tau (strict), else y.
// Ties broken by lowest class index.
int flip_target(const GaussianLogitVec& g, int y, double tau);

// Plain cross-entropy -log softmax(mu)_y with partials wrt mu.
VecLossGrad softmax_ce(std::span<const double> mu, int y);

// Gated multi-class composite.  Pixel-perfect pixels: plain CE on the mean.
// Box-derived pixels inside boxes: mc_expected_ce trains log_var only
// (mean detached), CE(mu, y*) with y* = flip_target trains mu only.
// Box-derived pixels outside boxes: plain CE.  Monte-Carlo substreams are
// keyed (mc.seed, pixel index, step) so batch composition and thread count
// do not change the sampled eps.
LossBreakdown composite_multiclass_loss(const GaussianLogitMap& logits,
                                        const TargetMask& targets, double tau,
                                        const McConfig& mc,
                                        std::uint64_t step);

// Split evaluation for gradient checks: gradients flow only through `live`;
// the detached mean, the flip decision, and eps keys read `frozen`.
LossBreakdown composite_multiclass_loss_split(const GaussianLogitMap& live,
                                              const GaussianLogitMap& frozen,
                                              const TargetMask& targets,
                                              double tau, const McConfig& mc,
                                              std::uint64_t step);

// Plain per-pixel cross-entropy on the mean maps (the multi-class analogue
// of bce_on_mean); no gradient to log_var.
LossBreakdown composite_plain_ce_loss(const GaussianLogitMap& logits,
                                      const TargetMask& targets);

}  // namespace boxboot
