#include "boxboot/reference.hpp"

#include <stdexcept>

#include "boxboot/kernels_detail.hpp"
#include "boxboot/rng.hpp"

namespace boxboot::reference {

void conv3x3_forward(const TensorBuf& in, const TensorBuf& w,
                     const TensorBuf& b, TensorBuf& out) {
  const int in_ch = in.channels, h = in.height, wd = in.width;
  const int out_ch = w.channels;
  if (w.height != in_ch || w.width != 9 || b.channels != out_ch) {
    throw std::invalid_argument("reference conv3x3_forward: bad shapes");
  }
  out = TensorBuf(out_ch, h, wd);
  for (int oc = 0; oc < out_ch; ++oc) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < wd; ++x) {
        double acc = b.data[oc];
        for (int ic = 0; ic < in_ch; ++ic) {
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = y + ky - 1;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = x + kx - 1;
              if (ix < 0 || ix >= wd) continue;
              acc += w.at(oc, ic, ky * 3 + kx) * in.at(ic, iy, ix);
            }
          }
        }
        out.at(oc, y, x) = acc;
      }
    }
  }
}

void conv3x3_backward_input(const TensorBuf& d_out, const TensorBuf& w,
                            int in_channels, TensorBuf& d_in) {
  const int out_ch = d_out.channels, h = d_out.height, wd = d_out.width;
  if (w.channels != out_ch || w.height != in_channels || w.width != 9) {
    throw std::invalid_argument("reference conv3x3_backward_input: bad shapes");
  }
  d_in = TensorBuf(in_channels, h, wd);
  for (int ic = 0; ic < in_channels; ++ic) {
    for (int iy = 0; iy < h; ++iy) {
      for (int ix = 0; ix < wd; ++ix) {
        double acc = 0.0;
        for (int oc = 0; oc < out_ch; ++oc) {
          for (int ky = 0; ky < 3; ++ky) {
            const int oy = iy + 1 - ky;
            if (oy < 0 || oy >= h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ox = ix + 1 - kx;
              if (ox < 0 || ox >= wd) continue;
              acc += w.at(oc, ic, ky * 3 + kx) * d_out.at(oc, oy, ox);
            }
          }
        }
        d_in.at(ic, iy, ix) = acc;
      }
    }
  }
}

void conv3x3_backward_params(const TensorBuf& d_out, const TensorBuf& in,
                             TensorBuf& d_w, TensorBuf& d_b) {
  const int out_ch = d_out.channels, h = d_out.height, wd = d_out.width;
  const int in_ch = in.channels;
  if (in.height != h || in.width != wd) {
    throw std::invalid_argument(
        "reference conv3x3_backward_params: bad shapes");
  }
  d_w = TensorBuf(out_ch, in_ch, 9);
  d_b = TensorBuf(out_ch, 1, 1);
  for (int oc = 0; oc < out_ch; ++oc) {
    for (int ic = 0; ic < in_ch; ++ic) {
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          double acc = 0.0;
          for (int y = 0; y < h; ++y) {
            const int iy = y + ky - 1;
            if (iy < 0 || iy >= h) continue;
            const double* g = d_out.row(oc, y);
            const double* r = in.row(ic, iy);
            if (kx == 0) {
              acc += detail::dot_shift8(g + 1, r, wd - 1);
            } else if (kx == 1) {
              acc += detail::dot_shift8(g, r, wd);
            } else {
              acc += detail::dot_shift8(g, r + 1, wd - 1);
            }
          }
          d_w.at(oc, ic, ky * 3 + kx) = acc;
        }
      }
    }
    double acc = 0.0;
    for (int y = 0; y < h; ++y) {
      acc += detail::sum_shift8(d_out.row(oc, y), wd);
    }
    d_b.data[oc] = acc;
  }
}

namespace {

template <typename PixelFn>
LossBreakdown reduce_serial(const TargetMask& targets, int channels,
                            PixelFn&& fn) {
  const int n = targets.height * targets.width;
  LossBreakdown bd;
  bd.d_mu = TensorBuf(channels, targets.height, targets.width);
  bd.d_log_var = TensorBuf(channels, targets.height, targets.width);
  bd.weight.assign(n, 1.0);
  bd.flip.assign(n, 0);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += fn(i, bd);
  const double inv_n = 1.0 / n;
  bd.value = sum * inv_n;
  for (double& v : bd.d_mu.data) v *= inv_n;
  for (double& v : bd.d_log_var.data) v *= inv_n;
  return bd;
}

}  // namespace

LossBreakdown composite_binary_loss(const GaussianLogitMap& logits,
                                    const TargetMask& targets,
                                    const BootstrapParams& p,
                                    RegionMode mode) {
  return reduce_serial(targets, 1, [&](int i, LossBreakdown& bd) {
    const GaussianLogit g{logits.mu.data[i], logits.log_var.data[i]};
    const PixelLoss px = composite_binary_pixel(
        g, g, targets.y[i], static_cast<LabelKind>(targets.kind[i]),
        targets.in_box[i] != 0, p, mode);
    bd.d_mu.data[i] = px.d_mu;
    bd.d_log_var.data[i] = px.d_log_var;
    bd.weight[i] = px.weight;
    bd.flip[i] = px.flip ? 1 : 0;
    return px.value;
  });
}

LossBreakdown composite_l2_loss(const GaussianLogitMap& logits,
                                const TargetMask& targets, RegionMode mode) {
  return reduce_serial(targets, 1, [&](int i, LossBreakdown& bd) {
    const PixelLoss px = composite_l2_pixel(
        {logits.mu.data[i], logits.log_var.data[i]}, targets.y[i],
        static_cast<LabelKind>(targets.kind[i]), targets.in_box[i] != 0, mode);
    bd.d_mu.data[i] = px.d_mu;
    bd.d_log_var.data[i] = px.d_log_var;
    bd.weight[i] = px.weight;
    bd.flip[i] = px.flip ? 1 : 0;
    return px.value;
  });
}

LossBreakdown composite_multiclass_loss(const GaussianLogitMap& logits,
                                        const TargetMask& targets, double tau,
                                        const McConfig& mc,
                                        std::uint64_t step) {
  const int c_count = logits.mu.channels;
  const int n = targets.height * targets.width;
  LossBreakdown bd = reduce_serial(
      targets, c_count, [&](int i, LossBreakdown& out) {
        GaussianLogitVec g;
        g.mu.resize(c_count);
        g.log_var.resize(c_count);
        for (int c = 0; c < c_count; ++c) {
          g.mu[c] = logits.mu.data[static_cast<std::size_t>(c) * n + i];
          g.log_var[c] =
              logits.log_var.data[static_cast<std::size_t>(c) * n + i];
        }
        const int y = targets.y[i];
        const auto kind = static_cast<LabelKind>(targets.kind[i]);
        const bool active =
            kind == LabelKind::BoxDerived && targets.in_box[i] != 0;
        double value;
        if (!active) {
          const VecLossGrad plain = softmax_ce(g.mu, y);
          value = plain.value;
          for (int c = 0; c < c_count; ++c) {
            out.d_mu.data[static_cast<std::size_t>(c) * n + i] = plain.d_mu[c];
          }
        } else {
          RngStream rng(mc.seed, static_cast<std::uint64_t>(i), step);
          const VecLossGrad unc = mc_expected_ce(g, y, mc, rng);
          const int y_star = flip_target(g, y, tau);
          const VecLossGrad boot = softmax_ce(g.mu, y_star);
          value = unc.value + boot.value;
          for (int c = 0; c < c_count; ++c) {
            out.d_mu.data[static_cast<std::size_t>(c) * n + i] = boot.d_mu[c];
            out.d_log_var.data[static_cast<std::size_t>(c) * n + i] =
                unc.d_log_var[c];
          }
          if (y_star != y) {
            out.flip[i] = 1;
            out.weight[i] = 0.0;
          }
        }
        return value;
      });
  // flip-by-class masks, assembled after the fact from flip + targets
  bd.flip_by_class = TensorBuf(c_count, targets.height, targets.width);
  for (int i = 0; i < n; ++i) {
    if (bd.flip[i] != 0) {
      bd.flip_by_class
          .data[static_cast<std::size_t>(targets.y[i]) * n + i] = 1.0;
    }
  }
  return bd;
}

}  // namespace boxboot::reference
