#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "boxboot/loss_core.hpp"
#include "boxboot/net.hpp"
#include "boxboot/rng.hpp"
#include "boxboot/synthdata.hpp"

namespace boxboot {

enum class LossVariant { BcePlain, L2Unc, BceUncBootstrap, MultiClass };

struct TrainConfig {
  LossVariant loss_variant = LossVariant::BceUncBootstrap;
  RegionMode region_mode = RegionMode::UncBoxOnly;
  double tau = 2.5;
  double slope = 0.2;
  double lr = 5e-4;
  int batch_size = 8;
  double pp_sampling_chance = 0.25;
  int t_samples = 20;
  int steps = 5000;
  int eval_every = 500;
  std::uint64_t seed = 1;
};

struct MetricsRecord {
  int step = 0;
  double loss = 0.0;
  std::vector<double> iou;          // one entry per object class
  double miou = 0.0;
  double sigma2_in_mask = 0.0;      // mean sigma^2 over true-mask pixels
  double sigma2_in_band = 0.0;      // mean sigma^2 over box-minus-mask pixels
  double flip_frac = 0.0;           // fraction of pixels with sigma^2 > tau
};

struct BatchSlot {
  int image = 0;
  LabelKind kind = LabelKind::PixelPerfect;
};

// Number of logit channels the model needs for a variant on this dataset.
int model_classes(LossVariant variant, int dataset_classes);

// Draws batch_size slots: kind ~ Bernoulli(pp_sampling_chance), then a
// uniform train image of that kind.  Empty required pool is a hard error.
std::vector<BatchSlot> compose_batch(const Dataset& ds, const TrainConfig& cfg,
                                     RngStream& rng);

// |pred n true| / |pred u true| for one class; 1.0 when both sets are empty.
double iou(const std::vector<std::uint8_t>& pred,
           const std::vector<std::uint8_t>& truth, int cls);

// Binary: foreground iff mu > 0.  Multi-class: argmax of mu including the
// background channel, ties to the lowest index.
std::vector<std::uint8_t> predict_mask(const GaussianLogitMap& logits);

struct EvalResult {
  std::vector<double> iou;
  double miou = 0.0;
  double sigma2_in_mask = 0.0;
  double sigma2_in_band = 0.0;
  double flip_frac = 0.0;
};

// Dataset-level IoU over the val partition against true masks.
EvalResult evaluate(const Dataset& ds, const NetworkParams& params,
                    double tau);

struct TrainResult {
  NetworkParams params;
  std::vector<MetricsRecord> history;
  bool aborted = false;
  int abort_step = 0;
  std::string abort_reason;
};

TrainResult train(const Dataset& ds, const TrainConfig& cfg);

void write_metrics_csv(const std::string& path,
                       const std::vector<MetricsRecord>& history,
                       int n_classes);

// Per-val-image prediction / W / flip masks as P5 PGMs scaled to 0-255.
void export_val_masks(const std::string& dir, const Dataset& ds,
                      const NetworkParams& params, double tau, double slope);

const char* variant_name(LossVariant v);

}  // namespace boxboot
