#pragma once

namespace boxboot::detail {

// Row reduction primitives with a pinned summation tree (8 strided partial
// sums combined pairwise, serial tail).  The fixed shape is part of the
// kernel contract: every implementation of the weight-gradient / bias-sum
// reductions must use it so results stay bit-identical while the main loop
// still vectorizes.

inline double dot_shift8(const double* __restrict a, const double* __restrict b,
                         int n) {
  double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  int x = 0;
  for (; x + 8 <= n; x += 8) {
    for (int j = 0; j < 8; ++j) acc[j] += a[x + j] * b[x + j];
  }
  double tail = 0.0;
  for (; x < n; ++x) tail += a[x] * b[x];
  return (((acc[0] + acc[1]) + (acc[2] + acc[3])) +
          ((acc[4] + acc[5]) + (acc[6] + acc[7]))) +
         tail;
}

inline double sum_shift8(const double* __restrict a, int n) {
  double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  int x = 0;
  for (; x + 8 <= n; x += 8) {
    for (int j = 0; j < 8; ++j) acc[j] += a[x + j];
  }
  double tail = 0.0;
  for (; x < n; ++x) tail += a[x];
  return (((acc[0] + acc[1]) + (acc[2] + acc[3])) +
          ((acc[4] + acc[5]) + (acc[6] + acc[7]))) +
         tail;
}

}  // namespace boxboot::detail
