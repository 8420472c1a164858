#include "boxboot/loss_multiclass.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace boxboot {

namespace {

constexpr int kMaxClasses = 8;

struct McScratch {
  std::vector<double> eps;      // T * C
  std::vector<double> logits;   // C, one sample at a time
  std::vector<double> probs;    // T * C softmax values
  std::vector<double> log_py;   // T per-sample log softmax at y
};

// Core estimator on spans; d_mu/d_log_var may be null when not needed.
double mc_expected_ce_into(std::span<const double> mu,
                           std::span<const double> log_var, int y, int t_count,
                           RngStream& rng, McScratch& scratch, double* d_mu,
                           double* d_log_var) {
  const int c_count = static_cast<int>(mu.size());
  scratch.eps.resize(static_cast<std::size_t>(t_count) * c_count);
  scratch.probs.resize(static_cast<std::size_t>(t_count) * c_count);
  scratch.log_py.resize(t_count);
  for (double& e : scratch.eps) e = rng.next_normal();

  double sigma[kMaxClasses];
  bool clamped[kMaxClasses];
  for (int c = 0; c < c_count; ++c) {
    const double s = clamp_log_var(log_var[c]);
    clamped[c] = s != log_var[c];
    sigma[c] = std::exp(0.5 * s);
  }

  for (int t = 0; t < t_count; ++t) {
    const double* eps_t = scratch.eps.data() + static_cast<std::size_t>(t) * c_count;
    double* probs_t = scratch.probs.data() + static_cast<std::size_t>(t) * c_count;
    double l[kMaxClasses];
    double max_l = -1e300;
    for (int c = 0; c < c_count; ++c) {
      l[c] = mu[c] + sigma[c] * eps_t[c];
      max_l = std::max(max_l, l[c]);
    }
    double denom = 0.0;
    for (int c = 0; c < c_count; ++c) {
      probs_t[c] = std::exp(l[c] - max_l);
      denom += probs_t[c];
    }
    const double inv_denom = 1.0 / denom;
    for (int c = 0; c < c_count; ++c) probs_t[c] *= inv_denom;
    scratch.log_py[t] = l[y] - max_l - std::log(denom);
  }

  // log-mean-exp over samples with max shift.
  double max_a = -1e300;
  for (int t = 0; t < t_count; ++t) max_a = std::max(max_a, scratch.log_py[t]);
  double sum_exp = 0.0;
  for (int t = 0; t < t_count; ++t) {
    sum_exp += std::exp(scratch.log_py[t] - max_a);
  }
  const double lse = max_a + std::log(sum_exp);
  const double value = std::log(static_cast<double>(t_count)) - lse;

  if (d_mu != nullptr) {
    for (int c = 0; c < c_count; ++c) {
      d_mu[c] = 0.0;
      d_log_var[c] = 0.0;
    }
    for (int t = 0; t < t_count; ++t) {
      const double w_t = std::exp(scratch.log_py[t] - lse);
      const double* eps_t =
          scratch.eps.data() + static_cast<std::size_t>(t) * c_count;
      const double* probs_t =
          scratch.probs.data() + static_cast<std::size_t>(t) * c_count;
      for (int c = 0; c < c_count; ++c) {
        const double g = w_t * (probs_t[c] - (c == y ? 1.0 : 0.0));
        d_mu[c] += g;
        d_log_var[c] += g * eps_t[c] * 0.5 * sigma[c];
      }
    }
    for (int c = 0; c < c_count; ++c) {
      if (clamped[c]) d_log_var[c] = 0.0;
    }
  }
  return value;
}

// Plain CE core without allocations; d_mu may alias nothing (never null).
double softmax_ce_into(const double* mu, int c_count, int y, double* d_mu) {
  double max_l = -1e300;
  for (int c = 0; c < c_count; ++c) max_l = std::max(max_l, mu[c]);
  double denom = 0.0;
  for (int c = 0; c < c_count; ++c) {
    d_mu[c] = std::exp(mu[c] - max_l);
    denom += d_mu[c];
  }
  const double value = max_l + std::log(denom) - mu[y];
  const double inv_denom = 1.0 / denom;
  for (int c = 0; c < c_count; ++c) d_mu[c] *= inv_denom;
  d_mu[y] -= 1.0;
  return value;
}

// flip_target core on raw spans.
int flip_target_into(const double* mu, const double* log_var, int c_count,
                     int y, double tau) {
  double max_var = 0.0;
  for (int c = 0; c < c_count; ++c) {
    max_var = std::max(max_var, std::exp(clamp_log_var(log_var[c])));
  }
  if (!(max_var > tau)) return y;  // strict inequality
  int best = 0;
  for (int c = 1; c < c_count; ++c) {
    if (mu[c] > mu[best]) best = c;
  }
  return best;
}

void check_vec(const GaussianLogitVec& g, int y) {
  const int c_count = static_cast<int>(g.mu.size());
  if (c_count < 2 || g.log_var.size() != g.mu.size()) {
    throw std::invalid_argument("GaussianLogitVec: need C >= 2 matching vectors");
  }
  if (c_count > kMaxClasses) {
    throw std::invalid_argument("GaussianLogitVec: too many classes");
  }
  if (y < 0 || y >= c_count) {
    throw std::invalid_argument("class target out of range");
  }
}

}  // namespace

std::vector<double> sample_logits(const GaussianLogitVec& g, const McConfig& mc,
                                  RngStream& rng) {
  check_vec(g, 0);
  if (mc.t_samples < 1) {
    throw std::invalid_argument("McConfig: t_samples must be >= 1");
  }
  const int c_count = static_cast<int>(g.mu.size());
  std::vector<double> out(static_cast<std::size_t>(mc.t_samples) * c_count);
  for (int t = 0; t < mc.t_samples; ++t) {
    for (int c = 0; c < c_count; ++c) {
      const double sigma = std::exp(0.5 * clamp_log_var(g.log_var[c]));
      out[static_cast<std::size_t>(t) * c_count + c] =
          g.mu[c] + sigma * rng.next_normal();
    }
  }
  return out;
}

VecLossGrad mc_expected_ce(const GaussianLogitVec& g, int y, const McConfig& mc,
                           RngStream& rng) {
  check_vec(g, y);
  if (mc.t_samples < 1) {
    throw std::invalid_argument("McConfig: t_samples must be >= 1");
  }
  const int c_count = static_cast<int>(g.mu.size());
  McScratch scratch;
  VecLossGrad out;
  out.d_mu.assign(c_count, 0.0);
  out.d_log_var.assign(c_count, 0.0);
  out.value = mc_expected_ce_into(g.mu, g.log_var, y, mc.t_samples, rng,
                                  scratch, out.d_mu.data(),
                                  out.d_log_var.data());
  return out;
}

int flip_target(const GaussianLogitVec& g, int y, double tau) {
  check_vec(g, y);
  return flip_target_into(g.mu.data(), g.log_var.data(),
                          static_cast<int>(g.mu.size()), y, tau);
}

VecLossGrad softmax_ce(std::span<const double> mu, int y) {
  const int c_count = static_cast<int>(mu.size());
  if (y < 0 || y >= c_count) {
    throw std::invalid_argument("class target out of range");
  }
  VecLossGrad out;
  out.d_mu.assign(c_count, 0.0);
  out.d_log_var.assign(c_count, 0.0);
  out.value = softmax_ce_into(mu.data(), c_count, y, out.d_mu.data());
  return out;
}

namespace {

void check_multiclass_shapes(const GaussianLogitMap& logits,
                             const TargetMask& targets) {
  require_same_shape(logits.mu, logits.log_var, "GaussianLogitMap");
  const int c_count = logits.mu.channels;
  if (c_count < 2) {
    throw std::invalid_argument("multiclass composite: expected C >= 2");
  }
  if (c_count > kMaxClasses) {
    throw std::invalid_argument("multiclass composite: too many classes");
  }
  if (logits.mu.height != targets.height ||
      logits.mu.width != targets.width) {
    throw std::invalid_argument(
        "multiclass composite: logits/targets shape mismatch");
  }
  if (targets.size() == 0) {
    throw std::invalid_argument("multiclass composite: empty image");
  }
  for (const std::uint8_t y : targets.y) {
    if (y >= c_count) {
      throw std::invalid_argument("multiclass composite: target class >= C");
    }
  }
}

}  // namespace

LossBreakdown composite_multiclass_loss_split(const GaussianLogitMap& live,
                                              const GaussianLogitMap& frozen,
                                              const TargetMask& targets,
                                              double tau, const McConfig& mc,
                                              std::uint64_t step) {
  check_multiclass_shapes(live, targets);
  require_same_shape(live.mu, frozen.mu, "multiclass composite split");
  if (mc.t_samples < 1) {
    throw std::invalid_argument("McConfig: t_samples must be >= 1");
  }

  const int c_count = live.mu.channels;
  const int h = targets.height;
  const int w = targets.width;
  const int n = h * w;

  LossBreakdown bd;
  bd.d_mu = TensorBuf(c_count, h, w);
  bd.d_log_var = TensorBuf(c_count, h, w);
  bd.weight.assign(n, 1.0);
  bd.flip.assign(n, 0);
  bd.flip_by_class = TensorBuf(c_count, h, w);

  std::vector<double> values(n, 0.0);

#pragma omp parallel
  {
    McScratch scratch;
#pragma omp for schedule(static)
    for (int i = 0; i < n; ++i) {
      double mu_live[kMaxClasses], s_live[kMaxClasses];
      double mu_frozen[kMaxClasses], s_frozen[kMaxClasses];
      for (int c = 0; c < c_count; ++c) {
        const std::size_t idx = static_cast<std::size_t>(c) * n + i;
        mu_live[c] = live.mu.data[idx];
        s_live[c] = live.log_var.data[idx];
        mu_frozen[c] = frozen.mu.data[idx];
        s_frozen[c] = frozen.log_var.data[idx];
      }
      const int y = targets.y[i];
      const auto kind = static_cast<LabelKind>(targets.kind[i]);
      const bool active =
          kind == LabelKind::BoxDerived && targets.in_box[i] != 0;

      double d_mu_px[kMaxClasses] = {};
      double d_s_px[kMaxClasses] = {};
      double value = 0.0;

      if (!active) {
        value = softmax_ce_into(mu_live, c_count, y, d_mu_px);
      } else {
        // Uncertainty term: mean detached, trains log_var only.
        RngStream rng(mc.seed, static_cast<std::uint64_t>(i), step);
        double unc_d_mu[kMaxClasses];
        value += mc_expected_ce_into(
            {mu_frozen, static_cast<std::size_t>(c_count)},
            {s_live, static_cast<std::size_t>(c_count)}, y, mc.t_samples, rng,
            scratch, unc_d_mu, d_s_px);

        // Bootstrap term: CE toward the (constant) possibly flipped target,
        // trains mu only.
        const int y_star =
            flip_target_into(mu_frozen, s_frozen, c_count, y, tau);
        value += softmax_ce_into(mu_live, c_count, y_star, d_mu_px);

        if (y_star != y) {
          bd.flip[i] = 1;
          bd.weight[i] = 0.0;
          bd.flip_by_class.data[static_cast<std::size_t>(y) * n + i] = 1.0;
        }
      }

      values[i] = value;
      for (int c = 0; c < c_count; ++c) {
        const std::size_t idx = static_cast<std::size_t>(c) * n + i;
        bd.d_mu.data[idx] = d_mu_px[c];
        bd.d_log_var.data[idx] = d_s_px[c];
      }
    }
  }

  // Serial reduction in pixel order: bit-identical for any thread count.
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += values[i];
  const double inv_n = 1.0 / n;
  bd.value = sum * inv_n;
  for (double& v : bd.d_mu.data) v *= inv_n;
  for (double& v : bd.d_log_var.data) v *= inv_n;
  return bd;
}

LossBreakdown composite_multiclass_loss(const GaussianLogitMap& logits,
                                        const TargetMask& targets, double tau,
                                        const McConfig& mc,
                                        std::uint64_t step) {
  return composite_multiclass_loss_split(logits, logits, targets, tau, mc,
                                         step);
}

LossBreakdown composite_plain_ce_loss(const GaussianLogitMap& logits,
                                      const TargetMask& targets) {
  check_multiclass_shapes(logits, targets);
  const int c_count = logits.mu.channels;
  const int h = targets.height;
  const int w = targets.width;
  const int n = h * w;

  LossBreakdown bd;
  bd.d_mu = TensorBuf(c_count, h, w);
  bd.d_log_var = TensorBuf(c_count, h, w);
  bd.weight.assign(n, 1.0);
  bd.flip.assign(n, 0);

  std::vector<double> values(n, 0.0);

#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    double mu_px[kMaxClasses];
    double d_mu_px[kMaxClasses];
    for (int c = 0; c < c_count; ++c) {
      mu_px[c] = logits.mu.data[static_cast<std::size_t>(c) * n + i];
    }
    values[i] = softmax_ce_into(mu_px, c_count, targets.y[i], d_mu_px);
    for (int c = 0; c < c_count; ++c) {
      bd.d_mu.data[static_cast<std::size_t>(c) * n + i] = d_mu_px[c];
    }
  }

  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += values[i];
  const double inv_n = 1.0 / n;
  bd.value = sum * inv_n;
  for (double& v : bd.d_mu.data) v *= inv_n;
  return bd;
}

}  // namespace boxboot
