#include "boxboot/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "boxboot/errors.hpp"
#include "boxboot/loss_multiclass.hpp"
#include "boxboot/netpbm.hpp"

namespace boxboot {

const char* variant_name(LossVariant v) {
  switch (v) {
    case LossVariant::BcePlain: return "BcePlain";
    case LossVariant::L2Unc: return "L2Unc";
    case LossVariant::BceUncBootstrap: return "BceUncBootstrap";
    case LossVariant::MultiClass: return "MultiClass";
  }
  return "?";
}

int model_classes(LossVariant variant, int dataset_classes) {
  switch (variant) {
    case LossVariant::L2Unc:
    case LossVariant::BceUncBootstrap:
      if (dataset_classes != 1) {
        throw std::invalid_argument(
            "binary loss variants require a 1-class dataset");
      }
      return 1;
    case LossVariant::BcePlain:
      return dataset_classes == 1 ? 1 : dataset_classes + 1;
    case LossVariant::MultiClass:
      return dataset_classes + 1;
  }
  throw std::invalid_argument("unknown loss variant");
}

std::vector<BatchSlot> compose_batch(const Dataset& ds, const TrainConfig& cfg,
                                     RngStream& rng) {
  std::vector<int> pp_pool, bb_pool;
  for (std::size_t i = 0; i < ds.scenes.size(); ++i) {
    if (ds.split.part[i] != SplitPart::Train) continue;
    if (ds.split.kind[i] == LabelKind::PixelPerfect) {
      pp_pool.push_back(static_cast<int>(i));
    } else {
      bb_pool.push_back(static_cast<int>(i));
    }
  }
  if (cfg.pp_sampling_chance > 0.0 && pp_pool.empty()) {
    throw std::invalid_argument("compose_batch: no pixel-perfect train images");
  }
  if (cfg.pp_sampling_chance < 1.0 && bb_pool.empty()) {
    throw std::invalid_argument("compose_batch: no box-derived train images");
  }

  std::vector<BatchSlot> slots;
  slots.reserve(cfg.batch_size);
  for (int b = 0; b < cfg.batch_size; ++b) {
    const bool pick_pp = rng.next_bernoulli(cfg.pp_sampling_chance);
    const std::vector<int>& pool = pick_pp ? pp_pool : bb_pool;
    const int image = pool[rng.next_below(static_cast<int>(pool.size()))];
    slots.push_back(BatchSlot{
        image, pick_pp ? LabelKind::PixelPerfect : LabelKind::BoxDerived});
  }
  return slots;
}

double iou(const std::vector<std::uint8_t>& pred,
           const std::vector<std::uint8_t>& truth, int cls) {
  if (pred.size() != truth.size()) {
    throw std::invalid_argument("iou: mask size mismatch");
  }
  std::int64_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] == cls;
    const bool t = truth[i] == cls;
    inter += p && t;
    uni += p || t;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<std::uint8_t> predict_mask(const GaussianLogitMap& logits) {
  const int c_count = logits.mu.channels;
  const int n = logits.mu.height * logits.mu.width;
  std::vector<std::uint8_t> mask(n, 0);
  if (c_count == 1) {
    for (int i = 0; i < n; ++i) {
      mask[i] = logits.mu.data[i] > 0.0 ? 1 : 0;
    }
    return mask;
  }
  for (int i = 0; i < n; ++i) {
    int best = 0;
    double best_v = logits.mu.data[i];
    for (int c = 1; c < c_count; ++c) {
      const double v = logits.mu.data[static_cast<std::size_t>(c) * n + i];
      if (v > best_v) {
        best_v = v;
        best = c;
      }
    }
    mask[i] = static_cast<std::uint8_t>(best);
  }
  return mask;
}

namespace {

std::vector<std::uint8_t> box_union_mask(const SyntheticScene& scene) {
  std::vector<std::uint8_t> in_box(
      static_cast<std::size_t>(scene.width) * scene.height, 0);
  for (const Box& b : scene.boxes) {
    for (int y = b.y0; y <= b.y1; ++y) {
      for (int x = b.x0; x <= b.x1; ++x) {
        in_box[y * scene.width + x] = 1;
      }
    }
  }
  return in_box;
}

// Per-image evaluation partials, merged in val order for determinism.
struct EvalPartial {
  std::vector<std::int64_t> inter, uni;
  double sig_mask_sum = 0.0, sig_band_sum = 0.0;
  std::int64_t mask_count = 0, band_count = 0, flip_count = 0, pixels = 0;
};

}  // namespace

EvalResult evaluate(const Dataset& ds, const NetworkParams& params,
                    double tau) {
  std::vector<int> val_images;
  for (std::size_t i = 0; i < ds.scenes.size(); ++i) {
    if (ds.split.part[i] == SplitPart::Val) {
      val_images.push_back(static_cast<int>(i));
    }
  }
  if (val_images.empty()) {
    throw std::invalid_argument("evaluate: empty val partition");
  }

  const int n_val = static_cast<int>(val_images.size());
  const int n_cls = ds.classes;
  std::vector<EvalPartial> partials(n_val);

  std::string failure;
#pragma omp parallel for schedule(dynamic)
  for (int r = 0; r < n_val; ++r) {
    try {
      const SyntheticScene& scene = ds.scenes[val_images[r]];
      EvalPartial& part = partials[r];
      part.inter.assign(n_cls, 0);
      part.uni.assign(n_cls, 0);

      const GaussianLogitMap logits = forward(params, scene.image);
      const std::vector<std::uint8_t> pred = predict_mask(logits);
      const std::vector<std::uint8_t> in_box = box_union_mask(scene);

      const int n = scene.width * scene.height;
      part.pixels = n;
      for (int i = 0; i < n; ++i) {
        for (int cls = 1; cls <= n_cls; ++cls) {
          const bool p = pred[i] == cls;
          const bool t = scene.true_mask[i] == cls;
          part.inter[cls - 1] += p && t;
          part.uni[cls - 1] += p || t;
        }
        double sig2;
        if (logits.log_var.channels == 1) {
          sig2 = std::exp(clamp_log_var(logits.log_var.data[i]));
        } else {
          sig2 = 0.0;
          for (int c = 0; c < logits.log_var.channels; ++c) {
            sig2 = std::max(
                sig2, std::exp(clamp_log_var(
                          logits.log_var
                              .data[static_cast<std::size_t>(c) * n + i])));
          }
        }
        if (scene.true_mask[i] != 0) {
          part.sig_mask_sum += sig2;
          part.mask_count += 1;
        } else if (in_box[i] != 0) {
          part.sig_band_sum += sig2;
          part.band_count += 1;
        }
        if (sig2 > tau) part.flip_count += 1;
      }
    } catch (const std::exception& e) {
#pragma omp critical
      failure = e.what();
    }
  }
  if (!failure.empty()) throw std::runtime_error(failure);

  EvalResult out;
  out.iou.assign(n_cls, 0.0);
  std::vector<std::int64_t> inter(n_cls, 0), uni(n_cls, 0);
  double sig_mask = 0.0, sig_band = 0.0;
  std::int64_t mask_count = 0, band_count = 0, flips = 0, pixels = 0;
  for (const EvalPartial& part : partials) {
    for (int c = 0; c < n_cls; ++c) {
      inter[c] += part.inter[c];
      uni[c] += part.uni[c];
    }
    sig_mask += part.sig_mask_sum;
    sig_band += part.sig_band_sum;
    mask_count += part.mask_count;
    band_count += part.band_count;
    flips += part.flip_count;
    pixels += part.pixels;
  }
  double miou_sum = 0.0;
  for (int c = 0; c < n_cls; ++c) {
    out.iou[c] = uni[c] == 0
                     ? 1.0
                     : static_cast<double>(inter[c]) /
                           static_cast<double>(uni[c]);
    miou_sum += out.iou[c];
  }
  out.miou = miou_sum / n_cls;
  out.sigma2_in_mask = mask_count == 0 ? 0.0 : sig_mask / mask_count;
  out.sigma2_in_band = band_count == 0 ? 0.0 : sig_band / band_count;
  out.flip_frac = static_cast<double>(flips) / static_cast<double>(pixels);
  return out;
}

TrainResult train(const Dataset& ds, const TrainConfig& cfg) {
  if (cfg.batch_size < 1 || cfg.steps < 1 || cfg.eval_every < 1 ||
      cfg.t_samples < 1) {
    throw std::invalid_argument("TrainConfig: bad sizes");
  }
  if (cfg.pp_sampling_chance < 0.0 || cfg.pp_sampling_chance > 1.0) {
    throw std::invalid_argument("TrainConfig: pp_sampling_chance not in [0,1]");
  }
  if (!(cfg.tau > 0.0) || !(cfg.slope > 0.0)) {
    throw std::invalid_argument("TrainConfig: tau and slope must be > 0");
  }

  const int n_model_cls = model_classes(cfg.loss_variant, ds.classes);
  const int n_images = static_cast<int>(ds.scenes.size());

  // Per-image targets, both kinds, built once.
  std::vector<TargetMask> pp_targets(n_images), bb_targets(n_images);
  for (int i = 0; i < n_images; ++i) {
    if (ds.split.part[i] != SplitPart::Train) continue;
    pp_targets[i] = pixel_perfect_target(ds.scenes[i]);
    bb_targets[i] = rasterize_box_target(ds.scenes[i]);
  }

  TrainResult result;
  result.params = NetworkParams::init(3, n_model_cls, cfg.seed);
  AdamState adam = AdamState::init(result.params, cfg.lr);
  RngStream batch_rng(cfg.seed, 0x626174636855ULL);
  const BootstrapParams boot{cfg.tau, cfg.slope};
  const McConfig mc{cfg.t_samples, cfg.seed};

  const int n_slots = cfg.batch_size;
  std::vector<double> slot_loss(n_slots);
  std::vector<ParamGrads> slot_grads(n_slots);

  for (int step = 1; step <= cfg.steps; ++step) {
    const std::vector<BatchSlot> slots = compose_batch(ds, cfg, batch_rng);

    std::string failure;
#pragma omp parallel for schedule(static)
    for (int b = 0; b < n_slots; ++b) {
      try {
        const SyntheticScene& scene = ds.scenes[slots[b].image];
        const TargetMask& target = slots[b].kind == LabelKind::PixelPerfect
                                       ? pp_targets[slots[b].image]
                                       : bb_targets[slots[b].image];
        ForwardCache cache;
        const GaussianLogitMap logits =
            forward(result.params, scene.image, &cache);

        LossBreakdown bd;
        switch (cfg.loss_variant) {
          case LossVariant::BcePlain:
            bd = n_model_cls == 1 ? composite_plain_bce_loss(logits, target)
                                  : composite_plain_ce_loss(logits, target);
            break;
          case LossVariant::L2Unc:
            bd = composite_l2_loss(logits, target, cfg.region_mode);
            break;
          case LossVariant::BceUncBootstrap:
            bd = composite_binary_loss(logits, target, boot, cfg.region_mode);
            break;
          case LossVariant::MultiClass:
            bd = composite_multiclass_loss(logits, target, cfg.tau, mc,
                                           static_cast<std::uint64_t>(step));
            break;
        }
        slot_loss[b] = bd.value;
        slot_grads[b] = backward(result.params, cache, bd.d_mu, bd.d_log_var);
      } catch (const std::exception& e) {
#pragma omp critical
        failure = e.what();
      }
    }
    if (!failure.empty()) {
      result.aborted = true;
      result.abort_step = step;
      result.abort_reason = failure;
      return result;
    }

    // Deterministic slot-order reduction.
    double batch_loss = 0.0;
    for (int b = 0; b < n_slots; ++b) batch_loss += slot_loss[b];
    batch_loss /= n_slots;
    if (!std::isfinite(batch_loss)) {
      result.aborted = true;
      result.abort_step = step;
      for (int b = 0; b < n_slots; ++b) {
        if (!std::isfinite(slot_loss[b])) {
          result.abort_reason = std::string("non-finite ") +
                                variant_name(cfg.loss_variant) +
                                " loss in batch slot " + std::to_string(b) +
                                " (image " + std::to_string(slots[b].image) +
                                ")";
          break;
        }
      }
      return result;
    }

    ParamGrads total = std::move(slot_grads[0]);
    for (int b = 1; b < n_slots; ++b) total.accumulate(slot_grads[b]);
    total.scale(1.0 / n_slots);

    try {
      adam_step(result.params, total, adam);
    } catch (const std::exception& e) {
      result.aborted = true;
      result.abort_step = step;
      result.abort_reason = e.what();
      return result;
    }

    if (step % cfg.eval_every == 0 || step == cfg.steps) {
      const EvalResult ev = evaluate(ds, result.params, cfg.tau);
      MetricsRecord rec;
      rec.step = step;
      rec.loss = batch_loss;
      rec.iou = ev.iou;
      rec.miou = ev.miou;
      rec.sigma2_in_mask = ev.sigma2_in_mask;
      rec.sigma2_in_band = ev.sigma2_in_band;
      rec.flip_frac = ev.flip_frac;
      result.history.push_back(std::move(rec));
    }
  }
  return result;
}

void write_metrics_csv(const std::string& path,
                       const std::vector<MetricsRecord>& history,
                       int n_classes) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << "step,loss,iou_c1,iou_c2,miou,sigma2_in_mask,sigma2_in_band,"
         "flip_frac\n";
  char buf[64];
  const auto fmt = [&buf](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  for (const MetricsRecord& rec : history) {
    out << rec.step << "," << fmt(rec.loss);
    for (int c = 0; c < 2; ++c) {
      out << ",";
      if (c < n_classes && c < static_cast<int>(rec.iou.size())) {
        out << fmt(rec.iou[c]);
      }
    }
    out << "," << fmt(rec.miou) << "," << fmt(rec.sigma2_in_mask) << ","
        << fmt(rec.sigma2_in_band) << "," << fmt(rec.flip_frac) << "\n";
  }
  if (!out) throw IoError("short write on " + path);
}

void export_val_masks(const std::string& dir, const Dataset& ds,
                      const NetworkParams& params, double tau, double slope) {
  const BootstrapParams boot{tau, slope};
  for (std::size_t i = 0; i < ds.scenes.size(); ++i) {
    if (ds.split.part[i] != SplitPart::Val) continue;
    const SyntheticScene& scene = ds.scenes[i];
    const GaussianLogitMap logits = forward(params, scene.image);
    const std::vector<std::uint8_t> pred = predict_mask(logits);
    const int n = scene.width * scene.height;

    std::vector<std::uint8_t> pred_px(n), w_px(n), flip_px(n);
    for (int i2 = 0; i2 < n; ++i2) {
      pred_px[i2] = static_cast<std::uint8_t>(
          std::lround(pred[i2] * 255.0 / ds.classes));
      double w;
      if (logits.log_var.channels == 1) {
        w = bootstrap_weight(logits.log_var.data[i2], boot);
      } else {
        double sig2 = 0.0;
        for (int c = 0; c < logits.log_var.channels; ++c) {
          sig2 = std::max(
              sig2,
              std::exp(clamp_log_var(
                  logits.log_var.data[static_cast<std::size_t>(c) * n + i2])));
        }
        w = sig2 > tau ? 0.0 : 1.0;
      }
      w_px[i2] = static_cast<std::uint8_t>(std::lround(w * 255.0));
      flip_px[i2] = w < 0.5 ? 255 : 0;
    }
    const std::string id = std::to_string(i);
    write_pgm(dir + "/pred_" + id + ".pgm", pred_px, scene.width,
              scene.height);
    write_pgm(dir + "/w_" + id + ".pgm", w_px, scene.width, scene.height);
    write_pgm(dir + "/flip_" + id + ".pgm", flip_px, scene.width,
              scene.height);
  }
}

}  // namespace boxboot
