#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "fattack/anchornet/model.hpp"
#include "fattack/error.hpp"

namespace fattack::anchornet {

struct Histogram {
  std::vector<double> edges;  // bins + 1 ascending edges
  std::vector<std::size_t> counts;

  std::size_t total() const {
    std::size_t n = 0;
    for (auto c : counts) n += c;
    return n;
  }
};

struct SparsityStats {
  std::size_t total = 0;  // entries inspected
  std::vector<double> thresholds;
  std::vector<double> fraction_le;  // fraction of entries <= each threshold
  Histogram histogram;              // all entries over [0, 1]
  double top_fraction = 0.0;
  Histogram top;                    // the most activated top_fraction of entries
};

/// Equal-width histogram over [lo, hi]; the last bin is closed on the right.
inline Histogram make_histogram(std::span<const double> values, double lo, double hi, std::size_t bins) {
  Histogram h;
  if (bins == 0) throw ConfigError("histogram needs at least one bin");
  for (std::size_t i = 0; i <= bins; ++i) {
    h.edges.push_back(i == bins ? hi : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins));
  }
  h.counts.assign(bins, 0);
  const double width = hi - lo;
  for (double v : values) {
    std::size_t b = 0;
    if (width > 0.0) {
      const double pos = (v - lo) / width * static_cast<double>(bins);
      b = pos <= 0.0 ? 0 : std::min(bins - 1, static_cast<std::size_t>(pos));
    }
    ++h.counts[b];
  }
  return h;
}

/// Activation sparsity of a set of feature maps. By default only the
/// object-class columns are inspected, the same entries the focused attack sees.
inline SparsityStats sparsity_stats(std::span<const FeatureMap> maps, std::span<const double> thresholds,
                                    std::size_t bins = 20, double top_fraction = 0.0002,
                                    bool include_background = false) {
  if (!std::is_sorted(thresholds.begin(), thresholds.end())) throw ConfigError("thresholds must be ascending");
  if (!(top_fraction > 0.0 && top_fraction <= 1.0)) throw ConfigError("top fraction must lie in (0, 1]");
  std::vector<double> all;
  const std::size_t first = include_background ? 0 : 1;
  for (const auto& m : maps) {
    for (std::size_t a = 0; a < m.anchors(); ++a) {
      for (std::size_t c = first; c < m.classes(); ++c) all.push_back(m.at(a, c));
    }
  }
  SparsityStats s;
  s.total = all.size();
  s.thresholds.assign(thresholds.begin(), thresholds.end());
  std::sort(all.begin(), all.end());
  for (double t : thresholds) {
    const auto n = std::upper_bound(all.begin(), all.end(), t) - all.begin();
    s.fraction_le.push_back(all.empty() ? 0.0 : static_cast<double>(n) / static_cast<double>(all.size()));
  }
  s.histogram = make_histogram(all, 0.0, 1.0, bins);
  s.top_fraction = top_fraction;
  if (!all.empty()) {
    const auto k = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(top_fraction * static_cast<double>(all.size()))));
    std::span<const double> top(all.data() + (all.size() - std::min(k, all.size())), std::min(k, all.size()));
    s.top = make_histogram(top, top.front(), top.back(), bins);
  }
  return s;
}

}  // namespace fattack::anchornet
