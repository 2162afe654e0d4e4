#pragma once

#include <algorithm>
#include <cmath>

#include "fattack/tensor.hpp"

namespace fattack::metrics {

namespace detail {

/// Neumaier-compensated sum, so a mean of n equal terms is that term.
class CompensatedSum {
 public:
  void add(double v) {
    const double t = sum_ + v;
    comp_ += std::abs(sum_) >= std::abs(v) ? (sum_ - t) + v : (v - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

}  // namespace detail

/// ||x - x'||_1 divided by the number of channel-pixels.
inline double mean_l1(const Tensor& x, const Tensor& x_adv) {
  require_same_shape(x, x_adv, "mean_l1");
  detail::CompensatedSum acc;
  for (std::size_t i = 0; i < x.size(); ++i) acc.add(std::abs(x[i] - x_adv[i]));
  return acc.value() / static_cast<double>(x.size());
}

inline double linf(const Tensor& x, const Tensor& x_adv) {
  require_same_shape(x, x_adv, "linf");
  double m = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - x_adv[i]));
  return m;
}

inline double mse(const Tensor& x, const Tensor& x_adv) {
  require_same_shape(x, x_adv, "mse");
  detail::CompensatedSum acc;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - x_adv[i];
    acc.add(d * d);
  }
  return acc.value() / static_cast<double>(x.size());
}

inline constexpr double kPsnrCap = 100.0;

/// PSNR in dB for images in [0, 1] (peak 1), capped at 100 dB.
inline double psnr(const Tensor& x, const Tensor& x_adv) {
  const double e = mse(x, x_adv);
  if (e < 1e-10) return kPsnrCap;
  return std::min(kPsnrCap, 20.0 * std::log10(1.0 / std::sqrt(e)));
}

}  // namespace fattack::metrics
