// Copyright 2026 The deepbound Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <string>

#include "deepbound/error.hpp"
#include "deepbound/serialization.hpp"
#include "deepbound/tensor.hpp"

namespace deepbound {

inline unsigned char to_byte(float v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

/// Encodes a 3xHxW tensor with values in [0,1] as binary PPM (P6, maxval 255).
inline std::string encode_ppm(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw UsageError("PPM export needs a 3xHxW tensor, got " + to_string(image.shape()));
  }
  const std::size_t h = image.dim(1), w = image.dim(2), plane = h * w;
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  out.reserve(out.size() + 3 * plane);
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < 3; ++c) out.push_back(static_cast<char>(to_byte(image[c * plane + p])));
  }
  return out;
}

inline Tensor decode_ppm(std::string_view bytes, const std::string& context = "ppm") {
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
  auto number = [&] {
    skip_space();
    std::size_t v = 0, digits = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + static_cast<std::size_t>(bytes[pos++] - '0');
      if (++digits > 9) throw FormatError(context + ": header number too large");
    }
    if (digits == 0) throw FormatError(context + ": malformed PPM header");
    return v;
  };
  if (bytes.substr(0, 2) != "P6") throw FormatError(context + ": not a binary PPM (P6)");
  pos = 2;
  const std::size_t w = number(), h = number(), maxval = number();
  if (w == 0 || h == 0) throw FormatError(context + ": empty image");
  if (maxval != 255) throw FormatError(context + ": only 8-bit PPM is supported");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw FormatError(context + ": malformed PPM header");
  }
  ++pos;
  const std::size_t plane = w * h;
  if (bytes.size() - pos < 3 * plane) throw FormatError(context + ": truncated pixel data");
  Tensor image({3, h, w});
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < 3; ++c) {
      image[c * plane + p] = static_cast<float>(static_cast<unsigned char>(bytes[pos++])) / 255.0f;
    }
  }
  return image;
}

inline void save_ppm(const std::filesystem::path& path, const Tensor& image) {
  write_file(path, encode_ppm(image));
}

inline Tensor load_ppm(const std::filesystem::path& path) {
  return decode_ppm(read_file(path), path.string());
}

/// Loads an image from .ppm or .dbt, chosen by extension.
inline Tensor load_image(const std::filesystem::path& path) {
  if (path.extension() == ".ppm") return load_ppm(path);
  return load_tensor(path);
}

inline void save_image(const std::filesystem::path& path, const Tensor& image) {
  if (path.extension() == ".ppm") {
    save_ppm(path, image);
  } else {
    save_tensor(path, image);
  }
}

}  // namespace deepbound
