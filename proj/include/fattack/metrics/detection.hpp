#pragma once

#include <algorithm>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "fattack/anchornet/decode.hpp"
#include "fattack/anchornet/model.hpp"
#include "fattack/box.hpp"
#include "fattack/error.hpp"
#include "fattack/synthdata/scene.hpp"

namespace fattack::metrics {

using fattack::iou;

struct ScoredDetection {
  std::size_t image = 0;
  Box box;
  double score = 0.0;
};

struct GroundTruth {
  std::size_t image = 0;
  Box box;
};

struct PRPoint {
  double recall = 0.0;
  double precision = 0.0;
};

/// Precision-recall curve of one class. Detections are matched greedily in
/// descending score order (ties keep input order): each is compared with the
/// highest-IoU ground truth of its image and counts as a true positive when
/// that IoU reaches `iou_thresh` and the ground truth is still unmatched.
inline std::vector<PRPoint> precision_recall(std::span<const ScoredDetection> dets,
                                             std::span<const GroundTruth> gts, double iou_thresh) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  std::vector<bool> matched(gts.size(), false);
  std::vector<PRPoint> curve;
  curve.reserve(dets.size());
  std::size_t tp = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const auto& d = dets[order[rank]];
    double best = 0.0;
    std::size_t best_gt = gts.size();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gts[g].image != d.image) continue;
      const double o = iou(d.box, gts[g].box);
      if (o > best) {
        best = o;
        best_gt = g;
      }
    }
    if (best_gt < gts.size() && best >= iou_thresh && !matched[best_gt]) {
      matched[best_gt] = true;
      ++tp;
    }
    curve.push_back({static_cast<double>(tp) / static_cast<double>(gts.size()),
                     static_cast<double>(tp) / static_cast<double>(rank + 1)});
  }
  return curve;
}

/// All-points interpolated AP: the precision envelope summed over recall
/// increments. nullopt when the class has no ground truth.
inline std::optional<double> average_precision(std::span<const ScoredDetection> dets,
                                               std::span<const GroundTruth> gts, double iou_thresh = 0.5) {
  if (gts.empty()) return std::nullopt;
  auto curve = precision_recall(dets, gts, iou_thresh);
  for (std::size_t i = curve.size(); i-- > 1;) {
    curve[i - 1].precision = std::max(curve[i - 1].precision, curve[i].precision);
  }
  double ap = 0.0, prev_recall = 0.0;
  for (const auto& p : curve) {
    ap += (p.recall - prev_recall) * p.precision;
    prev_recall = p.recall;
  }
  return ap;
}

struct DetectionScore {
  std::vector<std::optional<double>> per_class_ap;  // index = class id; [0] unused
  double mAP = 0.0;
};

/// Per-class AP over a set of images and their mean over classes that have
/// at least one ground-truth box.
inline DetectionScore evaluate_detections(std::span<const std::vector<anchornet::Detection>> detections,
                                          std::span<const synthdata::Annotation> truths, std::size_t num_classes,
                                          double iou_thresh = 0.5) {
  if (detections.size() != truths.size()) throw DimensionError("detections and annotations differ in image count");
  DetectionScore s;
  s.per_class_ap.assign(num_classes, std::nullopt);
  double total = 0.0;
  std::size_t counted = 0;
  for (std::uint32_t c = 1; c < num_classes; ++c) {
    std::vector<ScoredDetection> dets;
    std::vector<GroundTruth> gts;
    for (std::size_t i = 0; i < truths.size(); ++i) {
      for (const auto& d : detections[i]) {
        if (d.class_id == c) dets.push_back({i, d.box, d.score});
      }
      for (const auto& g : truths[i].boxes) {
        if (g.class_id == c) gts.push_back({i, g.box});
      }
    }
    s.per_class_ap[c] = average_precision(dets, gts, iou_thresh);
    if (s.per_class_ap[c]) {
      total += *s.per_class_ap[c];
      ++counted;
    }
  }
  s.mAP = counted ? total / static_cast<double>(counted) : 0.0;
  return s;
}

/// Clean-image mAP of a model at IoU 0.5. `images` overrides the dataset's
/// pixels (e.g. with adversarial versions) when non-empty.
inline DetectionScore map_score(const anchornet::DetectorModel& model, const synthdata::Dataset& data,
                                const anchornet::DecodeParams& decode = {}, std::span<const Tensor> images = {}) {
  if (data.samples.empty()) throw UsageError("cannot score an empty dataset");
  if (!images.empty() && images.size() != data.samples.size()) {
    throw DimensionError("image override count does not match dataset");
  }
  std::vector<std::vector<anchornet::Detection>> dets;
  std::vector<synthdata::Annotation> truths;
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const Tensor& img = images.empty() ? data.samples[i].image : images[i];
    dets.push_back(anchornet::decode(anchornet::forward(model, img), model.config(), decode));
    truths.push_back(data.samples[i].annotation);
  }
  return evaluate_detections(dets, truths, model.config().num_classes);
}

}  // namespace fattack::metrics
