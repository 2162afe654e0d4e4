#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "fattack/error.hpp"
#include "fattack/tensor.hpp"

namespace fattack::synthdata {

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

/// Rounds every value to the nearest multiple of 1/255 in [0, 1].
inline Tensor quantize(const Tensor& image) {
  Tensor out(image.shape());
  for (std::size_t i = 0; i < image.size(); ++i) out[i] = to_byte(image[i]) / 255.0;
  return out;
}

/// Binary P6 encoding of a [3 x H x W] image in [0, 1].
inline std::string encode_ppm(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw DimensionError("P6 images must be [3 x H x W], got " + shape_string(image.shape()));
  }
  const std::size_t h = image.dim(1), w = image.dim(2);
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  out.reserve(out.size() + 3 * h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) out.push_back(static_cast<char>(to_byte(image.at(c, y, x))));
    }
  }
  return out;
}

inline Tensor decode_ppm(const std::string& bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&](const char* what) {
    skip_space();
    std::size_t v = 0, digits = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + static_cast<std::size_t>(bytes[pos++] - '0');
      if (++digits > 9) throw FormatError(std::string("P6 header: ") + what + " too large");
    }
    if (digits == 0) throw FormatError(std::string("P6 header: missing ") + what);
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw FormatError("not a binary P6 pixmap");
  pos = 2;
  const std::size_t w = read_int("width");
  const std::size_t h = read_int("height");
  const std::size_t maxval = read_int("maxval");
  if (w == 0 || h == 0) throw FormatError("P6 header: zero dimension");
  if (maxval != 255) throw FormatError("P6 maxval must be 255, got " + std::to_string(maxval));
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw FormatError("P6 header: missing separator before raster");
  }
  ++pos;
  if (bytes.size() - pos != 3 * w * h) {
    throw FormatError("P6 raster has " + std::to_string(bytes.size() - pos) + " bytes, expected " +
                      std::to_string(3 * w * h));
  }
  Tensor img(Shape{3, h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        img.at(c, y, x) = static_cast<unsigned char>(bytes[pos++]) / 255.0;
      }
    }
  }
  return img;
}

inline void write_image(const std::filesystem::path& path, const Tensor& image) {
  const std::string bytes = encode_ppm(image);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw UsageError("cannot open '" + path.string() + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw UsageError("failed writing '" + path.string() + "'");
}

/// Reads a P6 image; when `height`/`width` are nonzero the dimensions must match.
inline Tensor read_image(const std::filesystem::path& path, std::size_t height = 0, std::size_t width = 0) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw UsageError("cannot open '" + path.string() + "'");
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Tensor img = decode_ppm(bytes);
  if ((height && img.dim(1) != height) || (width && img.dim(2) != width)) {
    throw FormatError("'" + path.string() + "' is " + std::to_string(img.dim(2)) + "x" +
                      std::to_string(img.dim(1)) + ", expected " + std::to_string(width) + "x" +
                      std::to_string(height));
  }
  return img;
}

}  // namespace fattack::synthdata
