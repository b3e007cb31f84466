#pragma once

// 8-bit grayscale PGM images (binary P5 written; P5 and ASCII P2 read).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "shotvae/errors.hpp"

namespace shotvae {

struct GrayImage {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> pixels;  // row-major

  /// Pixels from values in [0, 1], quantized as round(255 v).
  static GrayImage from_unit(const std::vector<double>& v, std::size_t rows, std::size_t cols) {
    if (v.size() != rows * cols) throw ShapeError("image of " + std::to_string(v.size()) + " values is not " +
                                                  std::to_string(rows) + "x" + std::to_string(cols));
    GrayImage img{rows, cols, std::vector<std::uint8_t>(v.size())};
    for (std::size_t i = 0; i < v.size(); ++i)
      img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(v[i], 0.0, 1.0) * 255.0));
    return img;
  }

  std::vector<double> to_unit() const {
    std::vector<double> v(pixels.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = pixels[i] / 255.0;
    return v;
  }
};

inline void write_pgm(const GrayImage& img, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f << "P5\n" << img.cols << ' ' << img.rows << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!f) throw IoError("short write to " + path);
}

inline GrayImage read_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  auto token = [&]() {
    std::string t;
    char c;
    while (f.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(f, skip);
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        if (!t.empty()) break;
      } else {
        t += c;
      }
    }
    if (t.empty()) throw IoError(path + ": truncated PGM header");
    return t;
  };
  const std::string magic = token();
  if (magic != "P5" && magic != "P2") throw IoError(path + ": not a PGM file (magic " + magic + ")");
  GrayImage img;
  std::size_t maxval = 0;
  try {
    img.cols = std::stoul(token());
    img.rows = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::logic_error&) {
    throw IoError(path + ": malformed PGM header");
  }
  if (maxval == 0 || maxval > 255) throw IoError(path + ": only 8-bit PGM is supported");
  img.pixels.resize(img.rows * img.cols);
  auto rescale = [&](std::size_t v) { return static_cast<std::uint8_t>((v * 255 + maxval / 2) / maxval); };
  if (magic == "P5") {
    std::vector<char> raw(img.pixels.size());
    f.read(raw.data(), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(f.gcount()) != raw.size()) throw IoError(path + ": truncated PGM payload");
    for (std::size_t i = 0; i < raw.size(); ++i) img.pixels[i] = rescale(static_cast<unsigned char>(raw[i]));
  } else {
    for (auto& p : img.pixels) p = rescale(std::stoul(token()));
  }
  return img;
}

/// Images side by side with a 1-pixel black gutter.
inline GrayImage montage_row(const std::vector<GrayImage>& images) {
  if (images.empty()) throw DomainError("montage of no images");
  const std::size_t r = images.front().rows, c = images.front().cols;
  GrayImage out{r, images.size() * (c + 1) - 1, {}};
  out.pixels.assign(out.rows * out.cols, 0);
  for (std::size_t k = 0; k < images.size(); ++k) {
    if (images[k].rows != r || images[k].cols != c) throw ShapeError("montage images differ in size");
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out.pixels[i * out.cols + k * (c + 1) + j] = images[k].pixels[i * c + j];
  }
  return out;
}

}  // namespace shotvae
