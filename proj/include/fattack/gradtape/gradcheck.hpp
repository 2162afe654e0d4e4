#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "fattack/error.hpp"
#include "fattack/gradtape/tape.hpp"
#include "fattack/tensor.hpp"

namespace fattack::gradtape {

/// Builds a scalar-valued graph on `tape` from the input variable.
using ScalarGraph = std::function<Var(Tape& tape, Var x)>;

struct GradCheckReport {
  Tensor analytic;
  Tensor numeric;
  std::vector<double> rel_error;  // per coordinate
  double max_rel_error = 0.0;
  std::size_t worst = 0;
};

inline double evaluate_scalar(const ScalarGraph& f, const Tensor& x) {
  Tape tape;
  const Var root = f(tape, tape.constant(x));
  return tape.value(root).item();
}

inline Tensor analytic_gradient(const ScalarGraph& f, const Tensor& x) {
  Tape tape;
  const Var in = tape.variable(x);
  const Var root = f(tape, in);
  tape.backward(root);
  return tape.grad(in);
}

/// Compares the tape gradient against central differences coordinate by
/// coordinate. Error per coordinate is |analytic - numeric| / max(1, |analytic|).
inline GradCheckReport finite_diff_report(const ScalarGraph& f, const Tensor& x, double h = 1e-5) {
  if (!(h > 0.0)) throw ConfigError("finite-difference step must be positive");
  GradCheckReport r;
  r.analytic = analytic_gradient(f, x);
  r.numeric = Tensor(x.shape(), 0.0);
  r.rel_error.resize(x.size());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = evaluate_scalar(f, probe);
    probe[i] = orig - h;
    const double down = evaluate_scalar(f, probe);
    probe[i] = orig;
    r.numeric[i] = (up - down) / (2.0 * h);
    const double a = r.analytic[i];
    r.rel_error[i] = std::abs(a - r.numeric[i]) / std::max(1.0, std::abs(a));
    if (r.rel_error[i] > r.max_rel_error) {
      r.max_rel_error = r.rel_error[i];
      r.worst = i;
    }
  }
  return r;
}

inline double finite_diff_check(const ScalarGraph& f, const Tensor& x, double h = 1e-5) {
  return finite_diff_report(f, x, h).max_rel_error;
}

}  // namespace fattack::gradtape
