#include "boxboot/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "boxboot/errors.hpp"
#include "boxboot/netpbm.hpp"
#include "boxboot/rng.hpp"

namespace boxboot {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

struct BlobShape {
  double cx, cy, rx, ry, cos_t, sin_t;
  double amp[3], phase[3];
  double radial(double phi) const {
    double r = 1.0;
    for (int k = 0; k < 3; ++k) {
      r += amp[k] * std::cos((k + 1) * phi + phase[k]);
    }
    return r;
  }
  bool contains(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double u = (dx * cos_t + dy * sin_t) / rx;
    const double v = (-dx * sin_t + dy * cos_t) / ry;
    const double e = std::sqrt(u * u + v * v);
    if (e == 0.0) return true;
    return e <= radial(std::atan2(v, u));
  }
};

struct PlacedObject {
  int cls = 0;
  Box tight;
  std::vector<int> pixels;  // flat indices
  double brightness = 1.0;
};

// Class palettes (background sits near 0.35 gray).
constexpr double kPalette[2][3] = {{0.80, 0.55, 0.22}, {0.25, 0.50, 0.85}};

}  // namespace

SyntheticScene generate_scene(const SceneConfig& cfg, int index) {
  if (cfg.width < 16 || cfg.height < 16) {
    throw std::invalid_argument("SceneConfig: image too small");
  }
  if (cfg.classes < 1 || cfg.classes > 2) {
    throw std::invalid_argument("SceneConfig: classes must be 1 or 2");
  }
  if (cfg.objects_min < 0 || cfg.objects_max < cfg.objects_min) {
    throw std::invalid_argument("SceneConfig: bad objects_per_image range");
  }
  if (cfg.jitter_max < 0) {
    throw std::invalid_argument("SceneConfig: jitter_max must be >= 0");
  }

  const int w = cfg.width, h = cfg.height;
  RngStream rng(cfg.seed, static_cast<std::uint64_t>(index));

  SyntheticScene scene;
  scene.width = w;
  scene.height = h;
  scene.true_mask.assign(static_cast<std::size_t>(w) * h, 0);
  scene.image = TensorBuf(3, h, w);

  // Smooth background: three low-frequency sinusoids with per-channel
  // weights, plus per-pixel grain.
  double base[3], fx[3], fy[3], ph[3], amp[3], chw[3][3];
  for (int c = 0; c < 3; ++c) base[c] = 0.28 + 0.12 * rng.next_uniform();
  for (int k = 0; k < 3; ++k) {
    fx[k] = (0.5 + 1.5 * rng.next_uniform()) * kTwoPi / w;
    fy[k] = (0.5 + 1.5 * rng.next_uniform()) * kTwoPi / h;
    ph[k] = kTwoPi * rng.next_uniform();
    amp[k] = 0.02 + 0.04 * rng.next_uniform();
    for (int c = 0; c < 3; ++c) chw[k][c] = 0.5 + rng.next_uniform();
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double wave[3] = {0.0, 0.0, 0.0};
      for (int k = 0; k < 3; ++k) {
        const double s = amp[k] * std::sin(fx[k] * x + fy[k] * y + ph[k]);
        for (int c = 0; c < 3; ++c) wave[c] += chw[k][c] * s;
      }
      const double grain = 0.04 * (rng.next_uniform() - 0.5);
      for (int c = 0; c < 3; ++c) {
        scene.image.at(c, y, x) = base[c] + wave[c] + grain;
      }
    }
  }

  // Objects: non-overlapping deformed ellipses with jitter room at borders.
  const int margin = cfg.jitter_max + 1;
  const int n_objects =
      cfg.objects_min + rng.next_below(cfg.objects_max - cfg.objects_min + 1);
  std::vector<PlacedObject> objects;
  for (int obj = 0; obj < n_objects; ++obj) {
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      BlobShape blob;
      blob.rx = 4.0 + 6.0 * rng.next_uniform();
      blob.ry = 4.0 + 6.0 * rng.next_uniform();
      const double theta = kTwoPi * rng.next_uniform();
      blob.cos_t = std::cos(theta);
      blob.sin_t = std::sin(theta);
      double deform_total = 0.0;
      for (int k = 0; k < 3; ++k) {
        blob.amp[k] = (rng.next_uniform() - 0.5) * 0.16;
        blob.phase[k] = kTwoPi * rng.next_uniform();
        deform_total += std::fabs(blob.amp[k]);
      }
      const double rmax =
          std::max(blob.rx, blob.ry) * (1.0 + deform_total) + 1.0;
      const double lo_x = margin + rmax, hi_x = w - 1 - margin - rmax;
      const double lo_y = margin + rmax, hi_y = h - 1 - margin - rmax;
      if (hi_x <= lo_x || hi_y <= lo_y) continue;
      blob.cx = lo_x + (hi_x - lo_x) * rng.next_uniform();
      blob.cy = lo_y + (hi_y - lo_y) * rng.next_uniform();

      PlacedObject cand;
      cand.cls = 1 + rng.next_below(cfg.classes);
      cand.brightness = 0.88 + 0.24 * rng.next_uniform();
      int x0 = w, x1 = -1, y0 = h, y1 = -1;
      bool overlap = false;
      const int sy0 = std::max(0, static_cast<int>(blob.cy - rmax));
      const int sy1 = std::min(h - 1, static_cast<int>(blob.cy + rmax) + 1);
      const int sx0 = std::max(0, static_cast<int>(blob.cx - rmax));
      const int sx1 = std::min(w - 1, static_cast<int>(blob.cx + rmax) + 1);
      for (int y = sy0; y <= sy1 && !overlap; ++y) {
        for (int x = sx0; x <= sx1; ++x) {
          if (!blob.contains(x, y)) continue;
          const int flat = y * w + x;
          if (scene.true_mask[flat] != 0) {
            overlap = true;
            break;
          }
          cand.pixels.push_back(flat);
          x0 = std::min(x0, x);
          x1 = std::max(x1, x);
          y0 = std::min(y0, y);
          y1 = std::max(y1, y);
        }
      }
      if (overlap || static_cast<int>(cand.pixels.size()) < 16) continue;
      if (x0 < margin || y0 < margin || x1 > w - 1 - margin ||
          y1 > h - 1 - margin) {
        continue;
      }
      const long box_area =
          static_cast<long>(x1 - x0 + 1) * static_cast<long>(y1 - y0 + 1);
      // the box-minus-mask band must exist even with zero jitter
      if (box_area <= static_cast<long>(cand.pixels.size())) continue;

      cand.tight = Box{cand.cls, x0, y0, x1, y1};
      for (const int flat : cand.pixels) {
        scene.true_mask[flat] = static_cast<std::uint8_t>(cand.cls);
      }

      Box loos = cand.tight;
      loos.x0 -= rng.next_below(cfg.jitter_max + 1);
      loos.y0 -= rng.next_below(cfg.jitter_max + 1);
      loos.x1 += rng.next_below(cfg.jitter_max + 1);
      loos.y1 += rng.next_below(cfg.jitter_max + 1);
      scene.boxes.push_back(loos);
      objects.push_back(std::move(cand));
      placed = true;
    }
    if (!placed) {
      throw std::runtime_error("generate_scene: could not place object " +
                               std::to_string(obj) + " in scene " +
                               std::to_string(index));
    }
  }

  // Paint objects with class color, per-object brightness, per-pixel grain.
  for (const PlacedObject& obj : objects) {
    for (const int flat : obj.pixels) {
      const double grain = 0.08 * (rng.next_uniform() - 0.5);
      for (int c = 0; c < 3; ++c) {
        scene.image.data[static_cast<std::size_t>(c) * w * h + flat] =
            kPalette[obj.cls - 1][c] * obj.brightness + grain;
      }
    }
  }

  // Quantize to byte resolution so PPM round-trips are bit-exact.
  for (double& v : scene.image.data) {
    const double clamped = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    v = std::lround(clamped * 255.0) / 255.0;
  }
  return scene;
}

TargetMask rasterize_box_target(const SyntheticScene& scene) {
  TargetMask tm(scene.height, scene.width);
  std::fill(tm.kind.begin(), tm.kind.end(),
            static_cast<std::uint8_t>(LabelKind::BoxDerived));
  // larger boxes first so smaller boxes end up on top
  std::vector<int> order(scene.boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    const auto& ba = scene.boxes[a];
    const auto& bb = scene.boxes[b];
    const long area_a = static_cast<long>(ba.x1 - ba.x0 + 1) *
                        static_cast<long>(ba.y1 - ba.y0 + 1);
    const long area_b = static_cast<long>(bb.x1 - bb.x0 + 1) *
                        static_cast<long>(bb.y1 - bb.y0 + 1);
    return area_a > area_b;
  });
  for (const int bi : order) {
    const Box& box = scene.boxes[bi];
    for (int y = box.y0; y <= box.y1; ++y) {
      for (int x = box.x0; x <= box.x1; ++x) {
        const int flat = y * scene.width + x;
        tm.y[flat] = static_cast<std::uint8_t>(box.cls);
        tm.in_box[flat] = 1;
      }
    }
  }
  return tm;
}

TargetMask pixel_perfect_target(const SyntheticScene& scene) {
  TargetMask tm(scene.height, scene.width);
  std::copy(scene.true_mask.begin(), scene.true_mask.end(), tm.y.begin());
  for (const Box& box : scene.boxes) {
    for (int y = box.y0; y <= box.y1; ++y) {
      for (int x = box.x0; x <= box.x1; ++x) {
        tm.in_box[y * scene.width + x] = 1;
      }
    }
  }
  return tm;
}

DatasetSplit make_split(int n_images, double pp_ratio, std::uint64_t seed) {
  if (n_images < 5) {
    throw std::invalid_argument("make_split: need at least 5 images");
  }
  if (pp_ratio < 0.0 || pp_ratio > 1.0) {
    throw std::invalid_argument("make_split: pp_ratio must be in [0, 1]");
  }
  std::vector<int> order(n_images);
  std::iota(order.begin(), order.end(), 0);
  RngStream rng(seed, 0x73706c6974ULL);  // "split"
  for (int i = n_images - 1; i > 0; --i) {
    std::swap(order[i], order[rng.next_below(i + 1)]);
  }

  const int n_train = static_cast<int>(std::lround(0.8 * n_images));
  const int pp_train = static_cast<int>(std::lround(pp_ratio * n_train));
  const int n_val = n_images - n_train;
  const int pp_val = static_cast<int>(std::lround(pp_ratio * n_val));

  DatasetSplit split;
  split.kind.assign(n_images, LabelKind::BoxDerived);
  split.part.assign(n_images, SplitPart::Val);
  for (int rank = 0; rank < n_train; ++rank) {
    split.part[order[rank]] = SplitPart::Train;
    if (rank < pp_train) split.kind[order[rank]] = LabelKind::PixelPerfect;
  }
  for (int rank = n_train; rank < n_images; ++rank) {
    if (rank - n_train < pp_val) {
      split.kind[order[rank]] = LabelKind::PixelPerfect;
    }
  }
  return split;
}

Dataset build_dataset(const SceneConfig& cfg, int n_images, double pp_ratio) {
  Dataset ds;
  ds.width = cfg.width;
  ds.height = cfg.height;
  ds.classes = cfg.classes;
  ds.split = make_split(n_images, pp_ratio, cfg.seed);
  ds.scenes.resize(n_images);
  std::string failure;
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n_images; ++i) {
    try {
      ds.scenes[i] = generate_scene(cfg, i);
    } catch (const std::exception& e) {
#pragma omp critical
      failure = e.what();
    }
  }
  if (!failure.empty()) throw std::runtime_error(failure);
  return ds;
}

void write_dataset(const std::string& dir, const Dataset& ds) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir);

  const int n = static_cast<int>(ds.scenes.size());
  std::ofstream manifest(dir + "/manifest.txt", std::ios::trunc);
  if (!manifest) throw IoError("cannot write " + dir + "/manifest.txt");
  manifest << "boxboot-dataset v1 n=" << n << " w=" << ds.width
           << " h=" << ds.height << " classes=" << ds.classes << "\n";
  for (int i = 0; i < n; ++i) {
    manifest << i << " "
             << (ds.split.kind[i] == LabelKind::PixelPerfect ? "pp" : "bb")
             << " "
             << (ds.split.part[i] == SplitPart::Train ? "train" : "val")
             << "\n";
  }
  if (!manifest) throw IoError("short write on " + dir + "/manifest.txt");
  manifest.close();

  for (int i = 0; i < n; ++i) {
    const SyntheticScene& scene = ds.scenes[i];
    const std::string id = std::to_string(i);
    write_ppm(dir + "/img_" + id + ".ppm", scene.image);
    write_pgm(dir + "/mask_" + id + ".pgm", scene.true_mask, scene.width,
              scene.height);
    std::ofstream boxes(dir + "/boxes_" + id + ".csv", std::ios::trunc);
    if (!boxes) throw IoError("cannot write " + dir + "/boxes_" + id + ".csv");
    boxes << "class,x0,y0,x1,y1\n";
    for (const Box& b : scene.boxes) {
      boxes << b.cls << "," << b.x0 << "," << b.y0 << "," << b.x1 << ","
            << b.y1 << "\n";
    }
    if (!boxes) throw IoError("short write on " + dir + "/boxes_" + id + ".csv");
  }
}

Dataset read_dataset(const std::string& dir) {
  std::ifstream manifest(dir + "/manifest.txt");
  if (!manifest) throw IoError("cannot open " + dir + "/manifest.txt");

  std::string header;
  if (!std::getline(manifest, header)) {
    throw IoError("empty manifest in " + dir);
  }
  Dataset ds;
  int n = -1;
  if (std::sscanf(header.c_str(), "boxboot-dataset v1 n=%d w=%d h=%d classes=%d",
                  &n, &ds.width, &ds.height, &ds.classes) != 4 ||
      n < 0) {
    throw IoError("malformed manifest header in " + dir);
  }

  ds.split.kind.reserve(n);
  ds.split.part.reserve(n);
  std::string line;
  int count = 0;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    int id;
    std::string kind, part;
    if (!(row >> id >> kind >> part) || id != count) {
      throw IoError("malformed manifest row in " + dir + ": " + line);
    }
    if (kind == "pp") {
      ds.split.kind.push_back(LabelKind::PixelPerfect);
    } else if (kind == "bb") {
      ds.split.kind.push_back(LabelKind::BoxDerived);
    } else {
      throw IoError("unknown label kind in manifest: " + kind);
    }
    if (part == "train") {
      ds.split.part.push_back(SplitPart::Train);
    } else if (part == "val") {
      ds.split.part.push_back(SplitPart::Val);
    } else {
      throw IoError("unknown split in manifest: " + part);
    }
    ++count;
  }
  if (count != n) {
    throw IoError("manifest image count mismatch in " + dir + ": header says " +
                  std::to_string(n) + ", found " + std::to_string(count));
  }

  ds.scenes.resize(n);
  for (int i = 0; i < n; ++i) {
    const std::string id = std::to_string(i);
    SyntheticScene& scene = ds.scenes[i];
    scene.image = read_ppm(dir + "/img_" + id + ".ppm");
    if (scene.image.width != ds.width || scene.image.height != ds.height) {
      throw IoError("image size mismatch in img_" + id + ".ppm");
    }
    scene.width = ds.width;
    scene.height = ds.height;
    int mw = 0, mh = 0;
    scene.true_mask = read_pgm(dir + "/mask_" + id + ".pgm", &mw, &mh);
    if (mw != ds.width || mh != ds.height) {
      throw IoError("mask size mismatch in mask_" + id + ".pgm");
    }
    for (const std::uint8_t v : scene.true_mask) {
      if (v > ds.classes) {
        throw IoError("mask class out of range in mask_" + id + ".pgm");
      }
    }

    const std::string box_path = dir + "/boxes_" + id + ".csv";
    std::ifstream boxes(box_path);
    if (!boxes) throw IoError("cannot open " + box_path);
    if (!std::getline(boxes, line) || line != "class,x0,y0,x1,y1") {
      throw IoError("malformed box header in " + box_path);
    }
    while (std::getline(boxes, line)) {
      if (line.empty()) continue;
      Box b;
      if (std::sscanf(line.c_str(), "%d,%d,%d,%d,%d", &b.cls, &b.x0, &b.y0,
                      &b.x1, &b.y1) != 5) {
        throw IoError("malformed box row in " + box_path + ": " + line);
      }
      if (b.cls < 1 || b.cls > ds.classes || b.x0 < 0 || b.y0 < 0 ||
          b.x1 < b.x0 || b.y1 < b.y0 || b.x1 >= ds.width ||
          b.y1 >= ds.height) {
        throw IoError("box out of range in " + box_path + ": " + line);
      }
      scene.boxes.push_back(b);
    }
  }
  return ds;
}

}  // namespace boxboot
