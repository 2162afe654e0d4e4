#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "fattack/error.hpp"
#include "fattack/gradtape/tape.hpp"
#include "fattack/tensor.hpp"

namespace fattack::gradtape {

// ---------------------------------------------------------------------------
// Convolution kernels. Layouts: input [Cin x H x W], kernel [Cout x Cin x k x k].
// All kernels accumulate into a given output element in (channel, ky, kx)
// order so the dense and support-restricted variants round identically.
// ---------------------------------------------------------------------------

struct ConvGeometry {
  std::size_t cin, h, w, cout, k, stride, pad, ho, wo;

  static ConvGeometry of(const Shape& input, const Shape& kernel, std::size_t stride, std::size_t pad) {
    if (input.size() != 3 || kernel.size() != 4) {
      throw DimensionError("conv2d expects input [Cin x H x W] and kernel [Cout x Cin x k x k], got " +
                           shape_string(input) + " and " + shape_string(kernel));
    }
    if (kernel[1] != input[0] || kernel[2] != kernel[3]) {
      throw DimensionError("conv2d kernel " + shape_string(kernel) + " incompatible with input " +
                           shape_string(input));
    }
    const std::size_t k = kernel[2];
    if (k % 2 == 0) throw DimensionError("conv2d kernel size must be odd, got " + std::to_string(k));
    if (stride == 0) throw DimensionError("conv2d stride must be positive");
    if (input[1] + 2 * pad < k || input[2] + 2 * pad < k) {
      throw DimensionError("conv2d kernel " + shape_string(kernel) + " larger than padded input " +
                           shape_string(input));
    }
    ConvGeometry g{input[0], input[1], input[2], kernel[0], k, stride, pad, 0, 0};
    g.ho = (g.h + 2 * pad - k) / stride + 1;
    g.wo = (g.w + 2 * pad - k) / stride + 1;
    return g;
  }

  // Output index range [lo, hi) whose tap `kpos` lands inside [0, extent).
  std::pair<std::size_t, std::size_t> valid_range(std::size_t kpos, std::size_t extent,
                                                  std::size_t out_extent) const {
    const auto s = static_cast<std::ptrdiff_t>(stride);
    const auto off = static_cast<std::ptrdiff_t>(kpos) - static_cast<std::ptrdiff_t>(pad);
    std::ptrdiff_t lo = off >= 0 ? 0 : (-off + s - 1) / s;
    std::ptrdiff_t hi = (static_cast<std::ptrdiff_t>(extent) - 1 - off);
    hi = hi < 0 ? 0 : hi / s + 1;
    hi = std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(out_extent));
    if (lo > hi) lo = hi;
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
  }
};

inline Tensor conv2d_forward(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t pad) {
  const auto g = ConvGeometry::of(input.shape(), kernel.shape(), stride, pad);
  Tensor out(Shape{g.cout, g.ho, g.wo}, 0.0);
  const double* in = input.data().data();
  const double* wt = kernel.data().data();
  double* o = out.data().data();
  for (std::size_t co = 0; co < g.cout; ++co) {
    double* oplane = o + co * g.ho * g.wo;
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
      const double* iplane = in + ci * g.h * g.w;
      for (std::size_t ky = 0; ky < g.k; ++ky) {
        const auto [oy0, oy1] = g.valid_range(ky, g.h, g.ho);
        for (std::size_t kx = 0; kx < g.k; ++kx) {
          const double w = wt[((co * g.cin + ci) * g.k + ky) * g.k + kx];
          const auto [ox0, ox1] = g.valid_range(kx, g.w, g.wo);
          const auto xoff = static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(g.pad);
          for (std::size_t oy = oy0; oy < oy1; ++oy) {
            const double* irow = iplane + (oy * g.stride + ky - g.pad) * g.w;
            double* orow = oplane + oy * g.wo;
            for (std::size_t ox = ox0; ox < ox1; ++ox) {
              orow[ox] += w * irow[static_cast<std::ptrdiff_t>(ox * g.stride) + xoff];
            }
          }
        }
      }
    }
  }
  return out;
}

/// Input positions (y * W + x) reachable from the given output positions.
inline Support conv2d_input_support(const ConvGeometry& g, const Support& out_support) {
  std::vector<char> hit(g.h * g.w, 0);
  const auto H = static_cast<std::ptrdiff_t>(g.h);
  const auto W = static_cast<std::ptrdiff_t>(g.w);
  for (auto p : out_support) {
    const auto y0 = static_cast<std::ptrdiff_t>((p / g.wo) * g.stride) - static_cast<std::ptrdiff_t>(g.pad);
    const auto x0 = static_cast<std::ptrdiff_t>((p % g.wo) * g.stride) - static_cast<std::ptrdiff_t>(g.pad);
    for (std::ptrdiff_t iy = std::max<std::ptrdiff_t>(y0, 0);
         iy < std::min<std::ptrdiff_t>(y0 + static_cast<std::ptrdiff_t>(g.k), H); ++iy) {
      for (std::ptrdiff_t ix = std::max<std::ptrdiff_t>(x0, 0);
           ix < std::min<std::ptrdiff_t>(x0 + static_cast<std::ptrdiff_t>(g.k), W); ++ix) {
        hit[static_cast<std::size_t>(iy * W + ix)] = 1;
      }
    }
  }
  Support in;
  for (std::size_t p = 0; p < hit.size(); ++p) {
    if (hit[p]) in.push_back(static_cast<std::uint32_t>(p));
  }
  return in;
}

/// Input gradient of conv2d. When `out_support` is given only those output
/// positions are read; every other output position must hold zero gradient.
inline void conv2d_backward_input(const ConvGeometry& g, const Tensor& kernel, const Tensor& grad_out,
                                  Tensor& grad_in, const Support* out_support) {
  const double* wt = kernel.data().data();
  const double* go = grad_out.data().data();
  double* gi = grad_in.data().data();
  if (!out_support) {
    for (std::size_t co = 0; co < g.cout; ++co) {
      const double* gplane = go + co * g.ho * g.wo;
      for (std::size_t ci = 0; ci < g.cin; ++ci) {
        double* iplane = gi + ci * g.h * g.w;
        for (std::size_t ky = 0; ky < g.k; ++ky) {
          const auto [oy0, oy1] = g.valid_range(ky, g.h, g.ho);
          for (std::size_t kx = 0; kx < g.k; ++kx) {
            const double w = wt[((co * g.cin + ci) * g.k + ky) * g.k + kx];
            const auto [ox0, ox1] = g.valid_range(kx, g.w, g.wo);
            const auto xoff = static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(g.pad);
            for (std::size_t oy = oy0; oy < oy1; ++oy) {
              double* irow = iplane + (oy * g.stride + ky - g.pad) * g.w;
              const double* grow = gplane + oy * g.wo;
              for (std::size_t ox = ox0; ox < ox1; ++ox) {
                irow[static_cast<std::ptrdiff_t>(ox * g.stride) + xoff] += w * grow[ox];
              }
            }
          }
        }
      }
    }
    return;
  }

  // Walk the support as horizontal runs of output positions so the inner
  // loop matches the dense one; per input element the (co, ky, kx) order of
  // contributions is unchanged.
  struct Run {
    std::size_t oy, x0, x1;
  };
  std::vector<Run> runs;
  for (auto p : *out_support) {
    const std::size_t oy = p / g.wo, ox = p % g.wo;
    if (!runs.empty() && runs.back().oy == oy && runs.back().x1 == ox) {
      ++runs.back().x1;
    } else {
      runs.push_back({oy, ox, ox + 1});
    }
  }
  for (std::size_t co = 0; co < g.cout; ++co) {
    const double* gplane = go + co * g.ho * g.wo;
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
      double* iplane = gi + ci * g.h * g.w;
      for (std::size_t ky = 0; ky < g.k; ++ky) {
        const auto [oy0, oy1] = g.valid_range(ky, g.h, g.ho);
        for (std::size_t kx = 0; kx < g.k; ++kx) {
          const double w = wt[((co * g.cin + ci) * g.k + ky) * g.k + kx];
          const auto [ox0, ox1] = g.valid_range(kx, g.w, g.wo);
          const auto xoff = static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(g.pad);
          for (const auto& run : runs) {
            if (run.oy < oy0 || run.oy >= oy1) continue;
            double* irow = iplane + (run.oy * g.stride + ky - g.pad) * g.w;
            const double* grow = gplane + run.oy * g.wo;
            const std::size_t xe = std::min(run.x1, ox1);
            for (std::size_t ox = std::max(run.x0, ox0); ox < xe; ++ox) {
              irow[static_cast<std::ptrdiff_t>(ox * g.stride) + xoff] += w * grow[ox];
            }
          }
        }
      }
    }
  }
}

inline void conv2d_backward_kernel(const ConvGeometry& g, const Tensor& input, const Tensor& grad_out,
                                   Tensor& grad_kernel) {
  const double* in = input.data().data();
  const double* go = grad_out.data().data();
  double* gw = grad_kernel.data().data();
  for (std::size_t co = 0; co < g.cout; ++co) {
    const double* gplane = go + co * g.ho * g.wo;
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
      const double* iplane = in + ci * g.h * g.w;
      for (std::size_t ky = 0; ky < g.k; ++ky) {
        const auto [oy0, oy1] = g.valid_range(ky, g.h, g.ho);
        for (std::size_t kx = 0; kx < g.k; ++kx) {
          const auto [ox0, ox1] = g.valid_range(kx, g.w, g.wo);
          const auto xoff = static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(g.pad);
          double acc = 0.0;
          for (std::size_t oy = oy0; oy < oy1; ++oy) {
            const double* irow = iplane + (oy * g.stride + ky - g.pad) * g.w;
            const double* grow = gplane + oy * g.wo;
            for (std::size_t ox = ox0; ox < ox1; ++ox) {
              acc += grow[ox] * irow[static_cast<std::ptrdiff_t>(ox * g.stride) + xoff];
            }
          }
          gw[((co * g.cin + ci) * g.k + ky) * g.k + kx] += acc;
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Recorded ops
// ---------------------------------------------------------------------------

/// Cross-correlation with zero padding (no kernel flip).
inline Var conv2d(Tape& tape, Var input, Var kernel, std::size_t stride, std::size_t padding) {
  const Tensor& x = tape.value(input);
  const Tensor& k = tape.value(kernel);
  const auto g = ConvGeometry::of(x.shape(), k.shape(), stride, padding);
  return tape.record(conv2d_forward(x, k, stride, padding), {input.id, kernel.id},
                     [g](Tape& t, std::uint32_t self) {
                       const auto& ps = t.parents(self);
                       const Tensor& gout = t.grad_of(self);
                       const auto& sup = t.support_of(self);
                       if (t.needs_grad(ps[0])) {
                         // A support covering most of the plane gains nothing
                         // over the dense loop, which yields the same values.
                         if (sup && 2 * sup->size() <= g.ho * g.wo) {
                           Tensor& gi = t.grad_sparse(ps[0], conv2d_input_support(g, *sup));
                           conv2d_backward_input(g, t.value_of(ps[1]), gout, gi, &*sup);
                         } else {
                           conv2d_backward_input(g, t.value_of(ps[1]), gout, t.grad_dense(ps[0]), nullptr);
                         }
                       }
                       if (t.needs_grad(ps[1])) {
                         conv2d_backward_kernel(g, t.value_of(ps[0]), gout, t.grad_dense(ps[1]));
                       }
                     });
}

/// x[c, y, x] + bias[c].
inline Var add_channel_bias(Tape& tape, Var input, Var bias) {
  const Tensor& x = tape.value(input);
  const Tensor& b = tape.value(bias);
  if (x.rank() != 3 || b.rank() != 1 || b.dim(0) != x.dim(0)) {
    throw DimensionError("add_channel_bias: input " + shape_string(x.shape()) + " vs bias " +
                         shape_string(b.shape()));
  }
  const std::size_t plane = x.dim(1) * x.dim(2);
  Tensor out = x;
  for (std::size_t c = 0; c < x.dim(0); ++c) {
    for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] += b[c];
  }
  return tape.record(std::move(out), {input.id, bias.id}, [plane](Tape& t, std::uint32_t self) {
    const auto& ps = t.parents(self);
    const Tensor& gout = t.grad_of(self);
    const auto& sup = t.support_of(self);
    if (t.needs_grad(ps[0])) {
      Tensor& gi = sup ? t.grad_sparse(ps[0], *sup) : t.grad_dense(ps[0]);
      for (std::size_t i = 0; i < gout.size(); ++i) gi[i] += gout[i];
    }
    if (t.needs_grad(ps[1])) {
      Tensor& gb = t.grad_dense(ps[1]);
      for (std::size_t c = 0; c < gb.size(); ++c) {
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) acc += gout[c * plane + i];
        gb[c] += acc;
      }
    }
  });
}

namespace detail {

template <class Fwd, class Deriv>
Var elementwise(Tape& tape, Var input, Fwd fwd, Deriv deriv) {
  const Tensor& x = tape.value(input);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i]);
  return tape.record(std::move(out), {input.id}, [deriv](Tape& t, std::uint32_t self) {
    const auto p = t.parents(self)[0];
    const Tensor& gout = t.grad_of(self);
    const Tensor& x = t.value_of(p);
    const Tensor& y = t.value_of(self);
    const auto& sup = t.support_of(self);
    Tensor& gi = sup ? t.grad_sparse(p, *sup) : t.grad_dense(p);
    for (std::size_t i = 0; i < gout.size(); ++i) gi[i] += deriv(x[i], y[i]) * gout[i];
  });
}

inline void require_rank2(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw DimensionError(std::string(what) + " expects [A x C], got " + shape_string(t.shape()));
}

}  // namespace detail

inline Var relu(Tape& tape, Var input) {
  return detail::elementwise(
      tape, input, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var sigmoid(Tape& tape, Var input) {
  return detail::elementwise(
      tape, input,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var scale(Tape& tape, Var input, double factor) {
  return detail::elementwise(
      tape, input, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

/// Row-wise softmax of an [A x C] tensor.
inline Var softmax_rows(Tape& tape, Var input) {
  const Tensor& z = tape.value(input);
  detail::require_rank2(z, "softmax_rows");
  const std::size_t rows = z.dim(0), cols = z.dim(1);
  Tensor out(z.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c) m = std::max(m, z.at(r, c));
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += (out.at(r, c) = std::exp(z.at(r, c) - m));
    const double inv = 1.0 / s;
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) *= inv;
  }
  return tape.record(std::move(out), {input.id}, [cols](Tape& t, std::uint32_t self) {
    const auto p = t.parents(self)[0];
    const Tensor& g = t.grad_of(self);
    const Tensor& y = t.value_of(self);
    const auto& sup = t.support_of(self);
    Tensor& gi = sup ? t.grad_sparse(p, *sup) : t.grad_dense(p);
    auto row = [&](std::size_t r) {
      const double* yr = y.data().data() + r * cols;
      const double* gr = g.data().data() + r * cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += gr[c] * yr[c];
      double* out = gi.data().data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) out[c] += yr[c] * (gr[c] - dot);
    };
    if (sup) {
      for (auto r : *sup) row(r);
    } else {
      for (std::size_t r = 0; r < y.dim(0); ++r) row(r);
    }
  });
}

/// Regroups a detection head output [K*C x G x G] into per-anchor rows
/// [G*G*K x C]; anchor a = (gy * G + gx) * K + k takes channels k*C .. k*C+C-1.
inline Var anchor_rows(Tape& tape, Var head, std::size_t anchors_per_cell) {
  const Tensor& h = tape.value(head);
  if (h.rank() != 3 || anchors_per_cell == 0 || h.dim(0) % anchors_per_cell != 0) {
    throw DimensionError("anchor_rows: head " + shape_string(h.shape()) + " not divisible into " +
                         std::to_string(anchors_per_cell) + " anchors");
  }
  const std::size_t K = anchors_per_cell, C = h.dim(0) / K, cells = h.dim(1) * h.dim(2);
  Tensor out(Shape{cells * K, C});
  for (std::size_t cell = 0; cell < cells; ++cell) {
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t c = 0; c < C; ++c) out.at(cell * K + k, c) = h[(k * C + c) * cells + cell];
    }
  }
  return tape.record(std::move(out), {head.id}, [K, C, cells](Tape& t, std::uint32_t self) {
    const auto p = t.parents(self)[0];
    const Tensor& g = t.grad_of(self);
    const auto& sup = t.support_of(self);
    auto row = [&](Tensor& gi, std::size_t a) {
      const std::size_t cell = a / K, k = a % K;
      for (std::size_t c = 0; c < C; ++c) gi[(k * C + c) * cells + cell] += g.at(a, c);
    };
    if (sup) {
      Support cell_sup;
      for (auto a : *sup) {
        const auto cell = static_cast<std::uint32_t>(a / K);
        if (cell_sup.empty() || cell_sup.back() != cell) cell_sup.push_back(cell);
      }
      Tensor& gi = t.grad_sparse(p, cell_sup);
      for (auto a : *sup) row(gi, a);
    } else {
      Tensor& gi = t.grad_dense(p);
      for (std::size_t a = 0; a < cells * K; ++a) row(gi, a);
    }
  });
}

inline Var sum(Tape& tape, Var input) {
  const Tensor& x = tape.value(input);
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return tape.record(Tensor::scalar(acc), {input.id}, [](Tape& t, std::uint32_t self) {
    const auto p = t.parents(self)[0];
    const double g = t.grad_of(self)[0];
    Tensor& gi = t.grad_dense(p);
    for (auto& v : gi.data()) v += g;
  });
}

/// Elementwise product of equal-shape tensors.
inline Var mul(Tape& tape, Var a, Var b) {
  const Tensor& x = tape.value(a);
  const Tensor& y = tape.value(b);
  require_same_shape(x, y, "mul");
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return tape.record(std::move(out), {a.id, b.id}, [](Tape& t, std::uint32_t self) {
    const auto& ps = t.parents(self);
    const Tensor& g = t.grad_of(self);
    const Tensor& x = t.value_of(ps[0]);
    const Tensor& y = t.value_of(ps[1]);
    if (t.needs_grad(ps[0])) {
      Tensor& gx = t.grad_dense(ps[0]);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i];
    }
    if (t.needs_grad(ps[1])) {
      Tensor& gy = t.grad_dense(ps[1]);
      for (std::size_t i = 0; i < g.size(); ++i) gy[i] += g[i] * x[i];
    }
  });
}

/// Columns [first, C) of an [A x C] tensor. Row support passes through.
inline Var drop_columns(Tape& tape, Var input, std::size_t first) {
  const Tensor& x = tape.value(input);
  detail::require_rank2(x, "drop_columns");
  if (first >= x.dim(1)) throw DimensionError("drop_columns would remove every column");
  const std::size_t rows = x.dim(0), cols = x.dim(1), kept = cols - first;
  Tensor out(Shape{rows, kept});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < kept; ++c) out.at(r, c) = x.at(r, first + c);
  }
  return tape.record(std::move(out), {input.id}, [rows, cols, first, kept](Tape& t, std::uint32_t self) {
    const auto p = t.parents(self)[0];
    const Tensor& g = t.grad_of(self);
    const auto& sup = t.support_of(self);
    Tensor& gi = sup ? t.grad_sparse(p, *sup) : t.grad_dense(p);
    auto row = [&](std::size_t r) {
      for (std::size_t c = 0; c < kept; ++c) gi[r * cols + first + c] += g[r * kept + c];
    };
    if (sup) {
      for (auto r : *sup) row(r);
    } else {
      for (std::size_t r = 0; r < rows; ++r) row(r);
    }
  });
}

/// Summed negative log-likelihood of per-row labels under row-stochastic
/// probabilities: sum_r -log(p[r, labels[r]]). Probabilities are floored at
/// the smallest normal double.
inline Var nll_rows(Tape& tape, Var probs, std::span<const std::uint32_t> labels) {
  const Tensor& p = tape.value(probs);
  detail::require_rank2(p, "nll_rows");
  if (labels.size() != p.dim(0)) {
    throw DimensionError("nll_rows: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(p.dim(0)) + " rows");
  }
  constexpr double floor = std::numeric_limits<double>::min();
  double acc = 0.0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] >= p.dim(1)) throw DimensionError("nll_rows: label out of range");
    acc -= std::log(std::max(p.at(r, labels[r]), floor));
  }
  std::vector<std::uint32_t> lab(labels.begin(), labels.end());
  return tape.record(Tensor::scalar(acc), {probs.id}, [lab = std::move(lab)](Tape& t, std::uint32_t self) {
    const auto pid = t.parents(self)[0];
    const double g = t.grad_of(self)[0];
    const Tensor& p = t.value_of(pid);
    Tensor& gi = t.grad_dense(pid);
    for (std::size_t r = 0; r < lab.size(); ++r) {
      const double v = p.at(r, lab[r]);
      if (v > floor) gi.at(r, lab[r]) -= g / v;
    }
  });
}

// ---------------------------------------------------------------------------
// Focused activation reductions
// ---------------------------------------------------------------------------

struct FocusIndex {
  std::uint32_t anchor;
  std::uint32_t cls;
  friend bool operator==(const FocusIndex&, const FocusIndex&) = default;
};

/// The entries of a feature map strictly above a focus threshold, in
/// ascending (anchor, class) order.
struct FocusMask {
  double threshold = 0.0;
  std::size_t cols = 0;
  std::vector<FocusIndex> indices;

  bool empty() const noexcept { return indices.empty(); }
  std::size_t size() const noexcept { return indices.size(); }
  std::size_t flat(std::size_t i) const { return indices[i].anchor * cols + indices[i].cls; }

  static FocusMask select(const Tensor& map, double t) {
    FocusMask m{t, map.dim(1), {}};
    for (std::size_t r = 0; r < map.dim(0); ++r) {
      for (std::size_t c = 0; c < map.dim(1); ++c) {
        if (map.at(r, c) > t) m.indices.push_back({static_cast<std::uint32_t>(r), static_cast<std::uint32_t>(c)});
      }
    }
    return m;
  }

  /// Distinct anchors of the mask, ascending.
  Support anchors() const {
    Support rows;
    for (const auto& ix : indices) {
      if (rows.empty() || rows.back() != ix.anchor) rows.push_back(ix.anchor);
    }
    return rows;
  }
};

inline void check_focus_threshold(double t) {
  if (!(t >= 0.0 && t < 1.0)) throw ConfigError("focus threshold must lie in [0, 1), got " + std::to_string(t));
}

/// Hinge form: sum of max(0, y - t). Subgradient 0 at y == t.
inline Var fa_hinge(Tape& tape, Var y_hat, double t) {
  check_focus_threshold(t);
  const Tensor& y = tape.value(y_hat);
  detail::require_rank2(y, "fa_hinge");
  double acc = 0.0;
  for (double v : y.data()) acc += v > t ? v - t : 0.0;
  return tape.record(Tensor::scalar(acc), {y_hat.id}, [t](Tape& tp, std::uint32_t self) {
    const auto p = tp.parents(self)[0];
    const double g = tp.grad_of(self)[0];
    const Tensor& y = tp.value_of(p);
    Tensor& gi = tp.grad_dense(p);
    for (std::size_t i = 0; i < y.size(); ++i) gi[i] += y[i] > t ? g : 0.0;
  });
}

/// Dense masked reduction: sum of y * focus(y, t) over every entry.
inline Var fa_parallel(Tape& tape, Var y_hat, double t) {
  check_focus_threshold(t);
  const Tensor& y = tape.value(y_hat);
  detail::require_rank2(y, "fa_parallel");
  double acc = 0.0;
  for (double v : y.data()) acc += v * (v > t ? 1.0 : 0.0);
  return tape.record(Tensor::scalar(acc), {y_hat.id}, [t](Tape& tp, std::uint32_t self) {
    const auto p = tp.parents(self)[0];
    const double g = tp.grad_of(self)[0];
    const Tensor& y = tp.value_of(p);
    Tensor& gi = tp.grad_dense(p);
    for (std::size_t i = 0; i < y.size(); ++i) gi[i] += g * (y[i] > t ? 1.0 : 0.0);
  });
}

struct FocusedValue {
  Var value;
  FocusMask mask;
};

/// Index-gather reduction: L1 norm of the entries above t. Backward seeds
/// gradient only at the gathered indices and tags the map gradient with
/// the anchors involved, so upstream ops can skip untouched rows.
inline FocusedValue fa_indexed(Tape& tape, Var y_hat, double t) {
  check_focus_threshold(t);
  const Tensor& y = tape.value(y_hat);
  detail::require_rank2(y, "fa_indexed");
  FocusMask mask = FocusMask::select(y, t);
  double acc = 0.0;
  std::vector<std::uint32_t> flat(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    flat[i] = static_cast<std::uint32_t>(mask.flat(i));
    acc += y[flat[i]];
  }
  Support rows = mask.anchors();
  Var v = tape.record(Tensor::scalar(acc), {y_hat.id},
                      [flat = std::move(flat), rows = std::move(rows)](Tape& tp, std::uint32_t self) {
                        if (flat.empty()) return;
                        const auto p = tp.parents(self)[0];
                        const double g = tp.grad_of(self)[0];
                        Tensor& gi = tp.grad_sparse(p, rows);
                        for (auto i : flat) gi[i] += g;
                      });
  return {v, std::move(mask)};
}

}  // namespace fattack::gradtape
