#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "boxboot/tensor.hpp"

namespace boxboot {

// Binary netpbm I/O, maxval 255, LF-separated ASCII headers.

// P6 color image; values are quantized as round(v * 255) and read back as
// byte / 255.0, so write -> read round-trips generator output bit-exactly.
void write_ppm(const std::string& path, const TensorBuf& image);
TensorBuf read_ppm(const std::string& path);

// P5 gray map of raw byte values (class ids, scaled masks, ...).
void write_pgm(const std::string& path, const std::vector<std::uint8_t>& pixels,
               int width, int height);
std::vector<std::uint8_t> read_pgm(const std::string& path, int* width,
                                   int* height);

}  // namespace boxboot
