#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "fattack/anchornet/config.hpp"
#include "fattack/anchornet/model.hpp"
#include "fattack/box.hpp"
#include "fattack/error.hpp"

namespace fattack::anchornet {

struct Detection {
  Box box;
  std::uint32_t class_id = 0;  // never background
  double score = 0.0;
  std::uint32_t anchor_index = 0;
  friend bool operator==(const Detection&, const Detection&) = default;
};

struct DecodeParams {
  double confidence = 0.5;  // keep anchors whose best object score is strictly above this
  double nms_iou = 0.5;     // suppress same-class boxes overlapping a kept one by more than this

  void validate() const {
    if (!(confidence > 0.0 && confidence < 1.0)) throw ConfigError("decode confidence must lie in (0, 1)");
    if (!(nms_iou > 0.0 && nms_iou <= 1.0)) throw ConfigError("NMS IoU must lie in (0, 1]");
  }
};

/// Greedy per-class non-maximum suppression. Output is ordered by class,
/// then descending score (ties by anchor index).
inline std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold) {
  std::sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
    if (a.class_id != b.class_id) return a.class_id < b.class_id;
    if (a.score != b.score) return a.score > b.score;
    return a.anchor_index < b.anchor_index;
  });
  std::vector<Detection> kept;
  std::uint32_t current = 0;
  std::size_t class_begin = 0;
  for (const auto& d : dets) {
    if (d.class_id != current) {
      current = d.class_id;
      class_begin = kept.size();
    }
    bool suppressed = false;
    for (std::size_t i = class_begin; i < kept.size(); ++i) {
      if (iou(kept[i].box, d.box) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

/// Turns a feature map into detections: one fixed-size box per confident
/// anchor, followed by per-class NMS. Background scores are ignored.
inline std::vector<Detection> decode(const FeatureMap& map, const DetectorConfig& config,
                                     const DecodeParams& params = {}) {
  params.validate();
  if (map.anchors() != config.num_anchors() || map.classes() != config.num_classes) {
    throw DimensionError("feature map " + shape_string(map.values.shape()) + " does not match detector config");
  }
  std::vector<Detection> candidates;
  for (std::size_t a = 0; a < map.anchors(); ++a) {
    std::size_t best = 1;
    for (std::size_t c = 2; c < map.classes(); ++c) {
      if (map.at(a, c) > map.at(a, best)) best = c;
    }
    const double score = map.at(a, best);
    if (score > params.confidence) {
      candidates.push_back(Detection{config.anchor_box(a), static_cast<std::uint32_t>(best), score,
                                     static_cast<std::uint32_t>(a)});
    }
  }
  return nms(std::move(candidates), params.nms_iou);
}

}  // namespace fattack::anchornet
