#include "boxboot/netpbm.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "boxboot/errors.hpp"

namespace boxboot {

namespace {

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string next_token(std::istream& in, const std::string& path) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  if (tok.empty()) throw IoError("truncated netpbm header: " + path);
  return tok;
}

void read_header(std::istream& in, const std::string& path,
                 const char* expected_magic, int* w, int* h) {
  const std::string magic = next_token(in, path);
  if (magic != expected_magic) {
    throw IoError("bad netpbm magic in " + path);
  }
  try {
    *w = std::stoi(next_token(in, path));
    *h = std::stoi(next_token(in, path));
    const int maxval = std::stoi(next_token(in, path));
    if (maxval != 255) throw IoError("unsupported maxval in " + path);
  } catch (const std::invalid_argument&) {
    throw IoError("malformed netpbm header: " + path);
  } catch (const std::out_of_range&) {
    throw IoError("malformed netpbm header: " + path);
  }
  if (*w <= 0 || *h <= 0) throw IoError("bad netpbm dimensions in " + path);
  // header ends with exactly one whitespace byte, already consumed
}

}  // namespace

void write_ppm(const std::string& path, const TensorBuf& image) {
  if (image.channels != 3) {
    throw std::invalid_argument("write_ppm: expected 3 channels");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << "P6\n" << image.width << " " << image.height << "\n255\n";
  std::vector<unsigned char> bytes(static_cast<std::size_t>(image.width) *
                                   image.height * 3);
  std::size_t k = 0;
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = image.at(c, y, x);
        const double clamped = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        bytes[k++] = static_cast<unsigned char>(std::lround(clamped * 255.0));
      }
    }
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write on " + path);
}

TensorBuf read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  int w = 0, h = 0;
  read_header(in, path, "P6", &w, &h);
  std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * h * 3);
  if (!in.read(reinterpret_cast<char*>(bytes.data()),
               static_cast<std::streamsize>(bytes.size()))) {
    throw IoError("truncated pixel data in " + path);
  }
  if (in.get() != EOF) throw IoError("trailing bytes in " + path);
  TensorBuf image(3, h, w);
  std::size_t k = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        image.at(c, y, x) = bytes[k++] / 255.0;
      }
    }
  }
  return image;
}

void write_pgm(const std::string& path, const std::vector<std::uint8_t>& pixels,
               int width, int height) {
  if (pixels.size() != static_cast<std::size_t>(width) * height) {
    throw std::invalid_argument("write_pgm: pixel count mismatch");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << "P5\n" << width << " " << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
  if (!out) throw IoError("short write on " + path);
}

std::vector<std::uint8_t> read_pgm(const std::string& path, int* width,
                                   int* height) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  int w = 0, h = 0;
  read_header(in, path, "P5", &w, &h);
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(w) * h);
  if (!in.read(reinterpret_cast<char*>(pixels.data()),
               static_cast<std::streamsize>(pixels.size()))) {
    throw IoError("truncated pixel data in " + path);
  }
  if (in.get() != EOF) throw IoError("trailing bytes in " + path);
  *width = w;
  *height = h;
  return pixels;
}

}  // namespace boxboot
