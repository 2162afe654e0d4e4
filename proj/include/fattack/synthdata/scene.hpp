#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "fattack/anchornet/config.hpp"
#include "fattack/box.hpp"
#include "fattack/error.hpp"
#include "fattack/rng.hpp"
#include "fattack/synthdata/pnm.hpp"
#include "fattack/tensor.hpp"

namespace fattack::synthdata {

using anchornet::DetectorConfig;

enum class ShapeKind { square, disk, triangle, cross };
inline constexpr std::size_t kShapeKinds = 4;

inline const char* shape_name(ShapeKind k) {
  switch (k) {
    case ShapeKind::square: return "square";
    case ShapeKind::disk: return "disk";
    case ShapeKind::triangle: return "triangle";
    case ShapeKind::cross: return "cross";
  }
  return "?";
}

// Saturated colors used when there are more classes than shape kinds; class
// id c >= 1 maps to shape (c-1) % kShapeKinds and palette entry (c-1) / kShapeKinds.
inline constexpr std::array<std::array<double, 3>, 8> kPalette{{
    {0.95, 0.05, 0.05},
    {0.05, 0.95, 0.05},
    {0.05, 0.05, 0.95},
    {0.95, 0.95, 0.05},
    {0.95, 0.05, 0.95},
    {0.05, 0.95, 0.95},
    {0.95, 0.95, 0.95},
    {0.05, 0.05, 0.05},
}};

inline constexpr std::size_t kMaxObjects = 4;

struct SceneObject {
  std::uint32_t class_id = 1;
  ShapeKind kind = ShapeKind::square;
  double cx = 0, cy = 0;  // pixels
  double size = 0;        // side of the bounding square
  std::array<double, 3> color{};

  Box box() const { return Box{cx - size / 2, cy - size / 2, cx + size / 2, cy + size / 2}; }
};

struct SceneSpec {
  std::uint64_t seed = 0;
  std::size_t image_size = 64;
  std::array<double, 3> background{};
  double noise = 0.05;
  std::vector<SceneObject> objects;
};

struct ObjectBox {
  std::uint32_t class_id = 1;
  Box box;
  friend bool operator==(const ObjectBox&, const ObjectBox&) = default;
};

struct Annotation {
  std::vector<ObjectBox> boxes;
  friend bool operator==(const Annotation&, const Annotation&) = default;
};

/// One-hot [A x C] anchor labels; background rows are one-hot at class 0.
struct GridLabel {
  Tensor one_hot;

  std::vector<std::uint32_t> classes() const {
    std::vector<std::uint32_t> out(one_hot.dim(0), 0);
    for (std::size_t a = 0; a < one_hot.dim(0); ++a) {
      for (std::size_t c = 0; c < one_hot.dim(1); ++c) {
        if (one_hot.at(a, c) == 1.0) out[a] = static_cast<std::uint32_t>(c);
      }
    }
    return out;
  }
};

struct Sample {
  std::string name;
  Tensor image;  // [3 x H x W], byte-quantized
  Annotation annotation;
  GridLabel label;
};

struct Dataset {
  DetectorConfig config;
  std::uint64_t seed = 0;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
};

inline std::size_t max_supported_classes() { return 1 + kShapeKinds * kPalette.size(); }

inline ShapeKind shape_of_class(std::uint32_t class_id) {
  return static_cast<ShapeKind>((class_id - 1) % kShapeKinds);
}

/// Anchor whose side is closest to the object's larger side (first on ties).
inline std::size_t best_anchor(const DetectorConfig& cfg, const Box& b) {
  const double side = std::max(b.width(), b.height());
  std::size_t best = 0;
  for (std::size_t k = 1; k < cfg.anchors_per_cell; ++k) {
    if (std::abs(cfg.anchor_side(k) - side) < std::abs(cfg.anchor_side(best) - side)) best = k;
  }
  return best;
}

/// Assigns each object to the anchor of the cell containing its box center.
/// When two objects land on the same anchor the larger box wins; equal areas
/// keep the first listed.
inline GridLabel annotation_to_grid(const Annotation& ann, const DetectorConfig& cfg) {
  cfg.validate();
  const std::size_t A = cfg.num_anchors(), C = cfg.num_classes;
  std::vector<std::uint32_t> cls(A, 0);
  std::vector<double> area(A, -1.0);
  const double cs = cfg.cell_size();
  for (const auto& ob : ann.boxes) {
    if (ob.class_id == 0 || ob.class_id >= C) {
      throw ConfigError("annotation class id " + std::to_string(ob.class_id) + " outside [1, " +
                        std::to_string(C - 1) + "]");
    }
    if (!ob.box.valid()) throw ConfigError("annotation box has non-positive extent");
    const double cx = (ob.box.x_min + ob.box.x_max) / 2, cy = (ob.box.y_min + ob.box.y_max) / 2;
    const auto last = static_cast<double>(cfg.grid - 1);
    const auto gx = static_cast<std::size_t>(std::clamp(std::floor(cx / cs), 0.0, last));
    const auto gy = static_cast<std::size_t>(std::clamp(std::floor(cy / cs), 0.0, last));
    const std::size_t row = (gy * cfg.grid + gx) * cfg.anchors_per_cell + best_anchor(cfg, ob.box);
    if (ob.box.area() > area[row]) {
      area[row] = ob.box.area();
      cls[row] = ob.class_id;
    }
  }
  Tensor onehot(Shape{A, C}, 0.0);
  for (std::size_t a = 0; a < A; ++a) onehot.at(a, cls[a]) = 1.0;
  return GridLabel{std::move(onehot)};
}

inline bool inside_shape(ShapeKind kind, double dx, double dy, double size) {
  const double h = size / 2;
  switch (kind) {
    case ShapeKind::square: return std::abs(dx) <= h && std::abs(dy) <= h;
    case ShapeKind::disk: return dx * dx + dy * dy <= h * h;
    case ShapeKind::triangle: return dy >= -h && dy <= h && std::abs(dx) <= (dy + h) / 2;
    case ShapeKind::cross: {
      const double arm = size / 6;
      return (std::abs(dx) <= arm && std::abs(dy) <= h) || (std::abs(dy) <= arm && std::abs(dx) <= h);
    }
  }
  return false;
}

/// Rasterizes a scene: flat background, shapes sampled at pixel centers,
/// then uniform noise of the scene's amplitude, clamped and byte-quantized.
inline Tensor render(const SceneSpec& scene, Rng& noise_rng) {
  const std::size_t n = scene.image_size;
  Tensor img(Shape{3, n, n});
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      std::array<double, 3> px = scene.background;
      const double fx = static_cast<double>(x) + 0.5, fy = static_cast<double>(y) + 0.5;
      for (const auto& ob : scene.objects) {
        if (inside_shape(ob.kind, fx - ob.cx, fy - ob.cy, ob.size)) px = ob.color;
      }
      for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = px[c];
    }
  }
  for (auto& v : img.data()) v += uniform(noise_rng, -scene.noise, scene.noise);
  return quantize(img);
}

/// Draws the layout of image `index`: 0-4 objects on distinct, non-adjacent
/// cells with room for the object, classes from a shuffled permutation.
inline SceneSpec sample_scene(std::uint64_t seed, std::size_t index, const DetectorConfig& cfg, Rng& rng) {
  SceneSpec s;
  s.seed = derive_seed(seed, "dataset", index);
  s.image_size = cfg.input_size;
  const std::size_t num_obj_classes = cfg.num_classes - 1;
  const bool palette = num_obj_classes > kShapeKinds;
  for (auto& c : s.background) c = palette ? uniform(rng, 0.4, 0.6) : uniform(rng, 0.15, 0.85);

  const std::size_t count = static_cast<std::size_t>(uniform_int(rng, 0, kMaxObjects));

  std::vector<std::uint32_t> classes(num_obj_classes);
  for (std::size_t i = 0; i < classes.size(); ++i) classes[i] = static_cast<std::uint32_t>(i + 1);
  for (std::size_t i = classes.size(); i > 1; --i) {
    std::swap(classes[i - 1], classes[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(i - 1)))]);
  }

  const double cs = cfg.cell_size();
  const double lim = static_cast<double>(cfg.input_size);
  std::vector<std::pair<std::size_t, std::size_t>> taken;
  for (std::size_t j = 0; j < count; ++j) {
    const std::size_t k = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(cfg.anchors_per_cell - 1)));
    const double a = cfg.anchor_side(k);
    const auto smin = static_cast<std::int64_t>(std::ceil(0.8 * a));
    const auto smax = std::max(smin, static_cast<std::int64_t>(std::floor(1.2 * a)));
    const double size = static_cast<double>(uniform_int(rng, smin, smax));
    const double reach = size / 2 + 1;  // half size plus center jitter

    std::vector<std::pair<std::size_t, std::size_t>> free_cells;
    for (std::size_t gy = 0; gy < cfg.grid; ++gy) {
      for (std::size_t gx = 0; gx < cfg.grid; ++gx) {
        const double cx = (static_cast<double>(gx) + 0.5) * cs, cy = (static_cast<double>(gy) + 0.5) * cs;
        if (cx - reach < 0 || cy - reach < 0 || cx + reach > lim || cy + reach > lim) continue;
        const bool clash = std::any_of(taken.begin(), taken.end(), [&](const auto& t) {
          const auto dx = static_cast<std::int64_t>(gx) - static_cast<std::int64_t>(t.first);
          const auto dy = static_cast<std::int64_t>(gy) - static_cast<std::int64_t>(t.second);
          return std::max(std::abs(dx), std::abs(dy)) < 2;
        });
        if (!clash) free_cells.emplace_back(gx, gy);
      }
    }
    if (free_cells.empty()) break;
    const auto cell = free_cells[static_cast<std::size_t>(
        uniform_int(rng, 0, static_cast<std::int64_t>(free_cells.size() - 1)))];
    taken.push_back(cell);

    SceneObject ob;
    ob.class_id = classes[j % classes.size()];
    ob.kind = shape_of_class(ob.class_id);
    ob.size = size;
    ob.cx = (static_cast<double>(cell.first) + 0.5) * cs + static_cast<double>(uniform_int(rng, -1, 1));
    ob.cy = (static_cast<double>(cell.second) + 0.5) * cs + static_cast<double>(uniform_int(rng, -1, 1));
    if (palette) {
      ob.color = kPalette[(ob.class_id - 1) / kShapeKinds];
    } else {
      // Random color with at least 0.35 contrast to the background in some channel.
      for (int attempt = 0; attempt < 64; ++attempt) {
        for (auto& c : ob.color) c = uniform(rng, 0.0, 1.0);
        double contrast = 0.0;
        for (std::size_t c = 0; c < 3; ++c) contrast = std::max(contrast, std::abs(ob.color[c] - s.background[c]));
        if (contrast >= 0.35) break;
      }
    }
    s.objects.push_back(ob);
  }
  return s;
}

inline Sample make_sample(std::uint64_t seed, std::size_t index, const DetectorConfig& cfg, double noise = 0.05) {
  Rng rng = make_rng(seed, "dataset", index);
  SceneSpec scene = sample_scene(seed, index, cfg, rng);
  scene.noise = noise;
  Sample smp;
  char name[32];
  std::snprintf(name, sizeof name, "img_%05zu.ppm", index);
  smp.name = name;
  smp.image = render(scene, rng);
  for (const auto& ob : scene.objects) smp.annotation.boxes.push_back({ob.class_id, ob.box()});
  smp.label = annotation_to_grid(smp.annotation, cfg);
  return smp;
}

/// Deterministic dataset: a pure function of (seed, n_images, config). Each
/// image draws from its own stream derived from (seed, index).
inline Dataset generate(std::uint64_t seed, std::size_t n_images, const DetectorConfig& cfg, double noise = 0.05) {
  cfg.validate();
  if (n_images == 0) throw UsageError("dataset must contain at least one image");
  if (cfg.num_classes > max_supported_classes()) {
    throw ConfigError("synthetic data supports at most " + std::to_string(max_supported_classes()) + " classes");
  }
  Dataset ds{cfg, seed, {}};
  ds.samples.reserve(n_images);
  for (std::size_t i = 0; i < n_images; ++i) ds.samples.push_back(make_sample(seed, i, cfg, noise));
  return ds;
}

}  // namespace fattack::synthdata
