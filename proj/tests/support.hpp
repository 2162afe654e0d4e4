#pragma once

// Shared generators and independent oracles for the test suites.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "fattack/anchornet/config.hpp"
#include "fattack/anchornet/decode.hpp"
#include "fattack/anchornet/model.hpp"
#include "fattack/box.hpp"
#include "fattack/tensor.hpp"

namespace fattack::testkit {

using Gen = std::mt19937_64;

inline Tensor random_tensor(Gen& g, const Shape& shape, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(shape);
  for (auto& v : t.data()) v = d(g);
  return t;
}

/// Row-stochastic [A x C] map with a spread of confident and flat rows.
inline Tensor random_prob_map(Gen& g, std::size_t A, std::size_t C) {
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  std::uniform_real_distribution<double> sharp(0.5, 12.0);
  Tensor t(Shape{A, C});
  for (std::size_t a = 0; a < A; ++a) {
    const double s = sharp(g);
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) z += (t.at(a, c) = std::exp(s * d(g)));
    for (std::size_t c = 0; c < C; ++c) t.at(a, c) /= z;
  }
  return t;
}

/// 32 px input, 4x4 grid: fast enough for exhaustive gradient checks.
inline anchornet::DetectorConfig small_config(std::size_t classes = 5) {
  anchornet::DetectorConfig c;
  c.input_size = 32;
  c.grid = 4;
  c.num_classes = classes;
  c.widths = {4, 6, 8};
  return c;
}

inline Tensor random_image(Gen& g, const anchornet::DetectorConfig& c) {
  return random_tensor(g, Shape{3, c.input_size, c.input_size}, 0.0, 1.0);
}

/// Direct seven-loop cross-correlation with zero padding.
inline Tensor naive_conv(const Tensor& x, const Tensor& k, std::size_t stride, std::size_t pad) {
  const std::size_t ci = x.dim(0), h = x.dim(1), w = x.dim(2), co = k.dim(0), ks = k.dim(2);
  const std::size_t ho = (h + 2 * pad - ks) / stride + 1, wo = (w + 2 * pad - ks) / stride + 1;
  Tensor out(Shape{co, ho, wo}, 0.0);
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        double acc = 0.0;
        for (std::size_t c = 0; c < ci; ++c)
          for (std::size_t ky = 0; ky < ks; ++ky)
            for (std::size_t kx = 0; kx < ks; ++kx) {
              const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
              const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
              if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(h) || ix >= static_cast<std::ptrdiff_t>(w))
                continue;
              acc += x.at(c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) *
                     k[((o * ci + c) * ks + ky) * ks + kx];
            }
        out.at(o, oy, ox) = acc;
      }
  return out;
}

struct OracleDet {
  std::size_t image;
  Box box;
  double score;
};

struct OracleGt {
  std::size_t image;
  Box box;
};

/// Average precision computed the slow way: for every cut-off k the top-k
/// detections are re-matched from scratch, precision is interpolated by an
/// explicit max over all later cut-offs, and area is summed per cut-off.
inline double brute_force_ap(std::vector<OracleDet> dets, const std::vector<OracleGt>& gts, double thresh) {
  std::stable_sort(dets.begin(), dets.end(), [](const OracleDet& a, const OracleDet& b) { return a.score > b.score; });
  const std::size_t n = dets.size();
  std::vector<double> prec(n), rec(n);
  for (std::size_t k = 1; k <= n; ++k) {
    std::vector<char> used(gts.size(), 0);
    std::size_t tp = 0;
    for (std::size_t d = 0; d < k; ++d) {
      double best = -1.0;
      std::size_t arg = gts.size();
      for (std::size_t j = 0; j < gts.size(); ++j) {
        if (gts[j].image != dets[d].image) continue;
        const Box& a = dets[d].box;
        const Box& b = gts[j].box;
        const double iw = std::max(0.0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
        const double ih = std::max(0.0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
        const double inter = iw * ih;
        const double uni = (a.x_max - a.x_min) * (a.y_max - a.y_min) + (b.x_max - b.x_min) * (b.y_max - b.y_min) - inter;
        const double o = uni > 0 ? inter / uni : 0.0;
        if (o > best) {
          best = o;
          arg = j;
        }
      }
      if (arg < gts.size() && best >= thresh && best > 0.0 && !used[arg]) {
        used[arg] = 1;
        ++tp;
      }
    }
    prec[k - 1] = static_cast<double>(tp) / static_cast<double>(k);
    rec[k - 1] = static_cast<double>(tp) / static_cast<double>(gts.size());
  }
  double ap = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    double p = 0.0;
    for (std::size_t j = k; j < n; ++j) p = std::max(p, prec[j]);
    ap += (rec[k] - (k ? rec[k - 1] : 0.0)) * p;
  }
  return ap;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("fattack_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace fattack::testkit
