#pragma once

#include "boxboot/loss_core.hpp"
#include "boxboot/loss_multiclass.hpp"
#include "boxboot/net.hpp"
#include "boxboot/tensor.hpp"

// Single-threaded reference implementations of the OpenMP kernels.  They
// follow the same accumulation-order contract (ascending tap order per
// output element, stride-8 reduction trees), so the tests can require
// bit-identical results; the benchmark compares their throughput.
namespace boxboot::reference {

void conv3x3_forward(const TensorBuf& in, const TensorBuf& w,
                     const TensorBuf& b, TensorBuf& out);
void conv3x3_backward_input(const TensorBuf& d_out, const TensorBuf& w,
                            int in_channels, TensorBuf& d_in);
void conv3x3_backward_params(const TensorBuf& d_out, const TensorBuf& in,
                             TensorBuf& d_w, TensorBuf& d_b);

// Per-pixel dispatch through the public single-pixel ops, reduced serially.
LossBreakdown composite_binary_loss(const GaussianLogitMap& logits,
                                    const TargetMask& targets,
                                    const BootstrapParams& p, RegionMode mode);
LossBreakdown composite_l2_loss(const GaussianLogitMap& logits,
                                const TargetMask& targets, RegionMode mode);
LossBreakdown composite_multiclass_loss(const GaussianLogitMap& logits,
                                        const TargetMask& targets, double tau,
                                        const McConfig& mc, std::uint64_t step);

}  // namespace boxboot::reference
