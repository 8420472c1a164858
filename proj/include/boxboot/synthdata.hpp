#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "boxboot/loss_core.hpp"
#include "boxboot/tensor.hpp"

namespace boxboot {

struct SceneConfig {
  int width = 64;
  int height = 64;
  int classes = 1;          // object classes, excluding background
  int objects_min = 1;
  int objects_max = 3;
  int jitter_max = 4;       // per-side box margin drawn from {0..jitter_max}
  std::uint64_t seed = 1;
};

// Inclusive pixel bounds.
struct Box {
  int cls = 0;
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

struct SyntheticScene {
  TensorBuf image;                     // (3, H, W), values k/255 in [0, 1]
  std::vector<std::uint8_t> true_mask; // H*W class ids, 0 = background
  std::vector<Box> boxes;              // loosened tight boxes, one per object
  int height = 0;
  int width = 0;
};

enum class SplitPart : std::uint8_t { Train = 0, Val = 1 };

struct DatasetSplit {
  std::vector<LabelKind> kind;   // per image
  std::vector<SplitPart> part;   // per image
};

struct Dataset {
  int width = 0, height = 0, classes = 0;
  std::vector<SyntheticScene> scenes;
  DatasetSplit split;
};

// Deterministic function of (cfg.seed, index).  Objects are noise-deformed
// ellipses placed without overlap, each fully inside the image with room for
// the box jitter; degenerate draws are rejected (up to 100 attempts each).
SyntheticScene generate_scene(const SceneConfig& cfg, int index);

// Box interiors become foreground targets of the box class; overlaps go to
// the smaller-area box; in_box marks the union of boxes; kind = BoxDerived.
TargetMask rasterize_box_target(const SyntheticScene& scene);

// True mask as a pixel-perfect target (in_box still derived from the boxes).
TargetMask pixel_perfect_target(const SyntheticScene& scene);

// 80:20 train/val partition, exactly round(pp_ratio * n_train) PixelPerfect
// train images, deterministic in seed.
DatasetSplit make_split(int n_images, double pp_ratio, std::uint64_t seed);

Dataset build_dataset(const SceneConfig& cfg, int n_images, double pp_ratio);

// Directory layout: manifest.txt, img_<id>.ppm, mask_<id>.pgm,
// boxes_<id>.csv.  read(write(x)) is bit-exact.
void write_dataset(const std::string& dir, const Dataset& ds);
Dataset read_dataset(const std::string& dir);

}  // namespace boxboot
