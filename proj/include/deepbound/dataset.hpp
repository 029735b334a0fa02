// Copyright 2026 The deepbound Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "deepbound/csv.hpp"
#include "deepbound/error.hpp"
#include "deepbound/image.hpp"
#include "deepbound/parallel.hpp"
#include "deepbound/rng.hpp"
#include "deepbound/tensor.hpp"

namespace deepbound {

struct LabeledDataset {
  std::vector<Tensor> images;
  std::vector<int> labels;

  std::size_t size() const noexcept { return images.size(); }
};

enum class ShapeKind { disk, square, triangle, cross, ring };
inline constexpr std::size_t shape_kinds = 5;
inline constexpr std::size_t class_count = 10;

/// Class label = 2 * shape + texture, texture 0 solid and 1 striped.
constexpr int class_label(ShapeKind shape, bool striped) {
  return 2 * static_cast<int>(shape) + (striped ? 1 : 0);
}

namespace detail {

// Point (u, v) is in object coordinates scaled so the shape's outer radius is 1.
inline bool inside_shape(ShapeKind kind, double u, double v) {
  switch (kind) {
    case ShapeKind::disk:
      return u * u + v * v <= 1.0;
    case ShapeKind::square:
      return std::max(std::abs(u), std::abs(v)) <= 0.78;
    case ShapeKind::triangle: {
      for (double a : {-std::numbers::pi / 2, std::numbers::pi / 6, 5 * std::numbers::pi / 6}) {
        if (u * std::cos(a) + v * std::sin(a) > 0.55) return false;
      }
      return true;
    }
    case ShapeKind::cross:
      return (std::abs(u) <= 0.32 && std::abs(v) <= 1.0) || (std::abs(v) <= 0.32 && std::abs(u) <= 1.0);
    case ShapeKind::ring: {
      const double r2 = u * u + v * v;
      return r2 <= 1.0 && r2 >= 0.5 * 0.5;
    }
  }
  return false;
}

inline Tensor render_sample(std::uint64_t seed, int label) {
  constexpr std::size_t side = 32;
  constexpr std::size_t plane = side * side;
  Rng rng(seed);
  const auto kind = static_cast<ShapeKind>(label / 2);
  const bool striped = label % 2 == 1;

  std::array<double, 3> bg{}, fg{}, fg2{};
  const double bg_level = rng.uniform(0.15, 0.85);
  for (auto& c : bg) c = std::clamp(bg_level + rng.uniform(-0.12, 0.12), 0.0, 1.0);
  // Foreground contrasts with the background in overall brightness.
  const double fg_level = bg_level > 0.5 ? rng.uniform(0.0, bg_level - 0.35) : rng.uniform(bg_level + 0.35, 1.0);
  for (auto& c : fg) c = std::clamp(fg_level + rng.uniform(-0.15, 0.15), 0.0, 1.0);
  for (std::size_t c = 0; c < 3; ++c) fg2[c] = std::clamp(0.5 * (fg[c] + bg[c]) + rng.uniform(-0.05, 0.05), 0.0, 1.0);

  const double radius = rng.uniform(8.0, 12.0);
  const double cx = rng.uniform(radius + 1.0, side - radius - 1.0);
  const double cy = rng.uniform(radius + 1.0, side - radius - 1.0);
  const double rot = rng.uniform(-0.35, 0.35);
  const double stripe_angle = rng.uniform(0.0, std::numbers::pi);
  const double stripe_phase = rng.uniform(0.0, 4.0);
  const double grad_x = rng.uniform(-0.1, 0.1), grad_y = rng.uniform(-0.1, 0.1);
  const double noise = rng.uniform(0.03, 0.08);
  const double cr = std::cos(rot), sr = std::sin(rot);
  const double sa = std::cos(stripe_angle), sb = std::sin(stripe_angle);

  Tensor img({3, side, side});
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      // 2x2 supersampling for soft edges.
      double coverage = 0.0;
      for (double oy : {0.25, 0.75}) {
        for (double ox : {0.25, 0.75}) {
          const double dx = x + ox - cx, dy = y + oy - cy;
          const double u = (cr * dx + sr * dy) / radius;
          const double v = (-sr * dx + cr * dy) / radius;
          coverage += inside_shape(kind, u, v) ? 0.25 : 0.0;
        }
      }
      bool dark_stripe = false;
      if (striped) {
        const double t = (x + 0.5) * sa + (y + 0.5) * sb + stripe_phase;
        dark_stripe = std::fmod(t + 400.0, 4.0) < 2.0;
      }
      const double shade = grad_x * (x / 31.0 - 0.5) + grad_y * (y / 31.0 - 0.5);
      for (std::size_t c = 0; c < 3; ++c) {
        const double f = dark_stripe ? fg2[c] : fg[c];
        const double v = coverage * f + (1.0 - coverage) * (bg[c] + shade) + noise * rng.normal();
        img[c * plane + y * side + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return img;
}

}  // namespace detail

/// Class-balanced synthetic images; sample i has label i % 10. Pure in (seed, per_class).
inline LabeledDataset generate_dataset(std::uint64_t seed, std::size_t per_class) {
  if (per_class == 0) throw UsageError("per_class must be at least 1");
  const std::size_t n = per_class * class_count;
  LabeledDataset data;
  data.images.resize(n);
  data.labels.resize(n);
  parallel_for(n, [&](std::size_t i) {
    const int label = static_cast<int>(i % class_count);
    data.labels[i] = label;
    data.images[i] = detail::render_sample(derive_seed(seed, i), label);
  });
  return data;
}

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> held_out;
};

/// Deterministic stratified 80/20 split: every fifth sample of each class is held out.
inline Split split_80_20(const LabeledDataset& data) {
  Split s;
  std::vector<std::size_t> seen;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto label = static_cast<std::size_t>(data.labels[i]);
    if (label >= seen.size()) seen.resize(label + 1, 0);
    (seen[label]++ % 5 == 4 ? s.held_out : s.train).push_back(i);
  }
  return s;
}

inline LabeledDataset subset(const LabeledDataset& data, const std::vector<std::size_t>& idx) {
  LabeledDataset out;
  for (std::size_t i : idx) {
    out.images.push_back(data.images.at(i));
    out.labels.push_back(data.labels.at(i));
  }
  return out;
}

/// Writes one PPM per sample plus manifest.csv (filename,label).
inline void export_dataset(const std::filesystem::path& dir, const LabeledDataset& data) {
  std::filesystem::create_directories(dir);
  CsvTable manifest({"filename", "label"});
  for (std::size_t i = 0; i < data.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "img_%05zu.ppm", i);
    save_ppm(dir / name, data.images[i]);
    manifest.add_row({name, std::to_string(data.labels[i])});
  }
  manifest.save(dir / "manifest.csv");
}

inline LabeledDataset import_dataset(const std::filesystem::path& dir) {
  const CsvTable manifest = CsvTable::load(dir / "manifest.csv");
  const std::size_t file_col = manifest.column("filename");
  const std::size_t label_col = manifest.column("label");
  LabeledDataset data;
  for (const auto& row : manifest.rows()) {
    const double label = parse_number(row[label_col]);
    if (label < 0 || label != std::floor(label)) throw FormatError("bad label " + row[label_col]);
    data.images.push_back(load_ppm(dir / row[file_col]));
    data.labels.push_back(static_cast<int>(label));
  }
  return data;
}

}  // namespace deepbound
