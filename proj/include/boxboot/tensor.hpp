#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace boxboot {

// Dense row-major (channel, row, col) buffer of 64-bit floats.
struct TensorBuf {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  TensorBuf() = default;
  TensorBuf(int c, int h, int w, double fill = 0.0)
      : channels(c),
        height(h),
        width(w),
        data(static_cast<std::size_t>(c) * h * w, fill) {
    if (c < 0 || h < 0 || w < 0) {
      throw std::invalid_argument("TensorBuf: negative dimension");
    }
  }

  std::size_t size() const { return data.size(); }

  bool same_shape(const TensorBuf& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }

  double& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  double at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }

  double* row(int c, int y) {
    return data.data() + (static_cast<std::size_t>(c) * height + y) * width;
  }
  const double* row(int c, int y) const {
    return data.data() + (static_cast<std::size_t>(c) * height + y) * width;
  }

  void fill(double v) { data.assign(data.size(), v); }
};

inline void require_same_shape(const TensorBuf& a, const TensorBuf& b,
                               const char* what) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch");
  }
}

}  // namespace boxboot
