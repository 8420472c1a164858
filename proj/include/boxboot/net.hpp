#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "boxboot/loss_core.hpp"
#include "boxboot/tensor.hpp"

namespace boxboot {

// 3-layer fully-convolutional head: conv3x3(in->16) + ReLU,
// conv3x3(16->16) + ReLU, conv3x3(16->2C).  The first C output channels are
// the means, the last C the log-variances.  All convs zero-padded, stride 1.
inline constexpr int kHiddenChannels = 16;

// Conv weights are stored (out_ch, in_ch, 9) with the 3x3 taps row-major;
// biases are (out_ch, 1, 1).
struct NetworkParams {
  int in_channels = 3;
  int classes = 1;
  TensorBuf w1, b1, w2, b2, w3, b3;

  // Xavier-uniform weights, zero biases, log-variance head biases at -2,
  // all drawn from a seeded stream in a fixed order.
  static NetworkParams init(int in_channels, int classes, std::uint64_t seed);

  std::vector<std::pair<std::string, TensorBuf*>> tensors();
  std::vector<std::pair<std::string, const TensorBuf*>> tensors() const;
};

// Gradients share the parameter layout.
struct ParamGrads {
  TensorBuf w1, b1, w2, b2, w3, b3;
  static ParamGrads zeros_like(const NetworkParams& p);
  std::vector<TensorBuf*> tensors();
  std::vector<const TensorBuf*> tensors() const;
  void accumulate(const ParamGrads& other);
  void scale(double factor);
};

struct ForwardCache {
  TensorBuf input, pre1, act1, pre2, act2;
};

// Returns the (C, H, W) mu / log_var maps; fills `cache` when given so
// backward can run.
GaussianLogitMap forward(const NetworkParams& p, const TensorBuf& image,
                         ForwardCache* cache = nullptr);

// Exact reverse-mode gradients of the scalar whose output-gradients are
// d_mu / d_log_var.
ParamGrads backward(const NetworkParams& p, const ForwardCache& cache,
                    const TensorBuf& d_mu, const TensorBuf& d_log_var);

struct AdamState {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t t = 0;
  std::vector<TensorBuf> m, v;

  static AdamState init(const NetworkParams& p, double lr);
};

// Standard bias-corrected Adam update.  Throws on non-finite gradients,
// naming the offending parameter.
void adam_step(NetworkParams& p, const ParamGrads& g, AdamState& st);

// Compares the analytic gradient against central finite differences of `f`
// at `n_probes` randomly chosen parameter coordinates; returns the max
// relative error with denominator max(|analytic|, |numeric|, 1e-8).
double finite_diff_check(const std::function<double(const NetworkParams&)>& f,
                         const NetworkParams& params,
                         const ParamGrads& analytic, int n_probes, double h,
                         std::uint64_t seed);

// Flat binary checkpoint: magic "BOXBOOT1", then per tensor a 32-bit LE name
// length, the name bytes, three 32-bit LE shape ints, and the values as
// 64-bit LE IEEE doubles.
void save_checkpoint(const std::string& path, const NetworkParams& p);
NetworkParams load_checkpoint(const std::string& path);

// OpenMP kernels (per-output-element accumulation in a fixed (in_ch, ky, kx)
// tap order; bit-identical for any thread count).  Exposed for the serial
// reference comparison and the benchmark.
void conv3x3_forward(const TensorBuf& in, const TensorBuf& w,
                     const TensorBuf& b, TensorBuf& out);
void conv3x3_backward_input(const TensorBuf& d_out, const TensorBuf& w,
                            int in_channels, TensorBuf& d_in);
void conv3x3_backward_params(const TensorBuf& d_out, const TensorBuf& in,
                             TensorBuf& d_w, TensorBuf& d_b);

}  // namespace boxboot
