#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "fattack/box.hpp"
#include "fattack/error.hpp"

namespace fattack::anchornet {

/// Architecture of the toy detector. The backbone has one stride-2 stage
/// per entry of `widths`, so input_size must equal grid * 2^stages.
struct DetectorConfig {
  std::size_t input_size = 64;
  std::size_t grid = 8;
  std::size_t anchors_per_cell = 1;
  std::size_t num_classes = 5;  // including background (class 0)
  std::vector<std::size_t> widths{8, 16, 32};
  std::size_t kernel = 5;
  std::vector<double> anchor_scales{1.5};  // box side in cells, one per anchor

  std::size_t num_anchors() const { return grid * grid * anchors_per_cell; }
  double cell_size() const { return static_cast<double>(input_size) / static_cast<double>(grid); }
  double anchor_side(std::size_t k) const { return cell_size() * anchor_scales.at(k); }

  void validate() const {
    if (grid == 0 || input_size % grid != 0) {
      throw ConfigError("input_size " + std::to_string(input_size) + " not divisible by grid " +
                        std::to_string(grid));
    }
    if (widths.empty()) throw ConfigError("detector needs at least one backbone stage");
    if ((grid << widths.size()) != input_size) {
      throw ConfigError("input_size must equal grid * 2^" + std::to_string(widths.size()) + " for " +
                        std::to_string(widths.size()) + " stride-2 stages");
    }
    if (num_classes < 2) throw ConfigError("num_classes must be at least 2 (background + one class)");
    if (anchors_per_cell == 0 || anchor_scales.size() != anchors_per_cell) {
      throw ConfigError("anchor_scales must list one scale per anchor");
    }
    for (double s : anchor_scales) {
      if (!(s > 0.0)) throw ConfigError("anchor scales must be positive");
    }
    if (kernel % 2 == 0) throw ConfigError("backbone kernel size must be odd");
    for (auto w : widths) {
      if (w == 0) throw ConfigError("backbone widths must be positive");
    }
  }

  /// Fixed-size box of anchor `a`, centered on its grid cell and clipped to
  /// the image.
  Box anchor_box(std::size_t a) const {
    const std::size_t cell = a / anchors_per_cell, k = a % anchors_per_cell;
    const double cs = cell_size();
    const double cx = (static_cast<double>(cell % grid) + 0.5) * cs;
    const double cy = (static_cast<double>(cell / grid) + 0.5) * cs;
    const double half = anchor_side(k) / 2.0;
    const double lim = static_cast<double>(input_size);
    return Box{std::max(0.0, cx - half), std::max(0.0, cy - half), std::min(lim, cx + half),
               std::min(lim, cy + half)};
  }

  friend bool operator==(const DetectorConfig&, const DetectorConfig&) = default;
};

}  // namespace fattack::anchornet
