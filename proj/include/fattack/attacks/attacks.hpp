#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fattack/anchornet/model.hpp"
#include "fattack/error.hpp"
#include "fattack/gradtape/ops.hpp"
#include "fattack/gradtape/tape.hpp"
#include "fattack/tensor.hpp"

namespace fattack::attacks {

using anchornet::DetectorModel;
using gradtape::FocusMask;
using gradtape::Tape;
using gradtape::Var;

enum class AttackKind { fgsm, pgd, fa };
enum class FaVariant { indexed, parallel, hinge };

inline const char* to_string(AttackKind k) {
  switch (k) {
    case AttackKind::fgsm: return "fgsm";
    case AttackKind::pgd: return "pgd";
    case AttackKind::fa: return "fa";
  }
  return "?";
}

inline const char* to_string(FaVariant v) {
  switch (v) {
    case FaVariant::indexed: return "indexed";
    case FaVariant::parallel: return "parallel";
    case FaVariant::hinge: return "hinge";
  }
  return "?";
}

inline AttackKind parse_attack_kind(const std::string& s) {
  if (s == "fgsm") return AttackKind::fgsm;
  if (s == "pgd") return AttackKind::pgd;
  if (s == "fa") return AttackKind::fa;
  throw ConfigError("unknown attack '" + s + "' (expected fgsm, pgd or fa)");
}

inline FaVariant parse_fa_variant(const std::string& s) {
  if (s == "indexed") return FaVariant::indexed;
  if (s == "parallel") return FaVariant::parallel;
  if (s == "hinge") return FaVariant::hinge;
  throw ConfigError("unknown FA variant '" + s + "' (expected indexed, parallel or hinge)");
}

struct AttackConfig {
  AttackKind kind = AttackKind::fa;
  double budget = 0.02;  // L-inf radius of the total perturbation
  int steps = 5;
  double focus = 0.5;  // fa only
  FaVariant fa_variant = FaVariant::indexed;
  bool clamp = true;
  /// Step along +sign(grad FA), ascending the focused activation instead of
  /// descending it.
  bool literal_sign = false;

  double step_size() const { return budget / static_cast<double>(steps); }

  void validate() const {
    if (!(budget >= 0.0 && budget <= 1.0)) throw ConfigError("attack budget must lie in [0, 1]");
    if (steps < 1) throw ConfigError("attack steps must be at least 1");
    if (kind == AttackKind::fgsm && steps != 1) throw ConfigError("fgsm is a single-step attack (steps = 1)");
    if (kind == AttackKind::fa) gradtape::check_focus_threshold(focus);
  }
};

struct PerturbationResult {
  Tensor adversarial;
  Tensor delta;  // adversarial - original
  std::vector<std::vector<std::int8_t>> step_signs;  // per executed step, entries in {-1, 0, +1}
  double seconds = 0.0;
  bool no_op = false;        // focus mask empty on the clean image
  std::size_t first_mask_size = 0;
};

namespace detail {

inline std::int8_t sign_of(double g) { return static_cast<std::int8_t>((g > 0.0) - (g < 0.0)); }

inline std::vector<std::int8_t> signs(const Tensor& grad) {
  std::vector<std::int8_t> s(grad.size());
  for (std::size_t i = 0; i < grad.size(); ++i) s[i] = sign_of(grad[i]);
  return s;
}

inline Tensor finish(const Tensor& x, Tensor adv) {
  Tensor delta(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) delta[i] = adv[i] - x[i];
  return delta;
}

inline double elapsed(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

inline std::vector<std::uint32_t> argmax_rows(const Tensor& map) {
  std::vector<std::uint32_t> labels(map.dim(0));
  for (std::size_t a = 0; a < map.dim(0); ++a) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < map.dim(1); ++c) {
      if (map.at(a, c) > map.at(a, best)) best = c;
    }
    labels[a] = static_cast<std::uint32_t>(best);
  }
  return labels;
}

}  // namespace detail

struct FocusedGradient {
  Tensor grad;
  FocusMask mask;
  double value = 0.0;
};

/// Gradient of the focused activation of f(image) with respect to the image.
/// The focus covers the object-class columns only, so mask column j is class
/// j + 1; the background column is ignored just as decode ignores it.
inline FocusedGradient focused_gradient(const DetectorModel& model, const Tensor& image, double t, FaVariant variant) {
  Tape tape;
  const Var x = tape.variable(image);
  const auto g = anchornet::record_forward(tape, model, x);
  const Var objects = gradtape::drop_columns(tape, g.probs, 1);
  FocusedGradient out;
  Var root;
  switch (variant) {
    case FaVariant::indexed: {
      auto fv = gradtape::fa_indexed(tape, objects, t);
      root = fv.value;
      out.mask = std::move(fv.mask);
      break;
    }
    case FaVariant::parallel:
      root = gradtape::fa_parallel(tape, objects, t);
      out.mask = FocusMask::select(tape.value(objects), t);
      break;
    case FaVariant::hinge:
      root = gradtape::fa_hinge(tape, objects, t);
      out.mask = FocusMask::select(tape.value(objects), t);
      break;
  }
  out.value = tape.value(root).item();
  tape.backward(root);
  out.grad = tape.grad(x);
  return out;
}

/// Gradient of the untargeted baseline objective: summed cross-entropy of
/// f(image) against fixed per-anchor labels. With `labels` empty, the labels
/// are the argmax of this same forward pass and are returned through it.
inline Tensor adversarial_loss_gradient(const DetectorModel& model, const Tensor& image,
                                        std::vector<std::uint32_t>& labels) {
  Tape tape;
  const Var x = tape.variable(image);
  const auto g = anchornet::record_forward(tape, model, x);
  if (labels.empty()) labels = detail::argmax_rows(tape.value(g.probs));
  const Var loss = gradtape::nll_rows(tape, g.probs, labels);
  tape.backward(loss);
  return tape.grad(x);
}

/// Iterative focused attack: S steps of size budget/S, each descending the
/// sign of the focused activation gradient and clamping to [0, 1]. The focus
/// mask is recomputed from the current image at every step; an empty mask
/// ends the attack early.
inline PerturbationResult focused_attack(const DetectorModel& model, const Tensor& image, const AttackConfig& cfg) {
  if (cfg.kind != AttackKind::fa) throw ConfigError("focused_attack requires kind fa");
  cfg.validate();
  anchornet::require_image(model.config(), image);
  const auto start = std::chrono::steady_clock::now();
  const double eps = cfg.step_size();
  const double dir = cfg.literal_sign ? 1.0 : -1.0;
  PerturbationResult r;
  Tensor adv = image;
  for (int s = 0; s < cfg.steps; ++s) {
    FocusedGradient fg = focused_gradient(model, adv, cfg.focus, cfg.fa_variant);
    if (s == 0) r.first_mask_size = fg.mask.size();
    if (fg.mask.empty()) {
      r.no_op = (s == 0);
      break;
    }
    auto sg = detail::signs(fg.grad);
    for (std::size_t i = 0; i < adv.size(); ++i) {
      double v = adv[i] + dir * eps * sg[i];
      if (cfg.clamp) v = std::clamp(v, 0.0, 1.0);
      adv[i] = v;
    }
    r.step_signs.push_back(std::move(sg));
  }
  r.delta = detail::finish(image, adv);
  r.adversarial = std::move(adv);
  r.seconds = detail::elapsed(start);
  return r;
}

/// One-shot x' = clamp(x + budget * sign(grad L_adv)).
inline PerturbationResult fgsm(const DetectorModel& model, const Tensor& image, const AttackConfig& cfg) {
  if (cfg.kind != AttackKind::fgsm) throw ConfigError("fgsm requires kind fgsm");
  cfg.validate();
  anchornet::require_image(model.config(), image);
  const auto start = std::chrono::steady_clock::now();
  PerturbationResult r;
  std::vector<std::uint32_t> labels;
  auto sg = detail::signs(adversarial_loss_gradient(model, image, labels));
  Tensor adv = image;
  for (std::size_t i = 0; i < adv.size(); ++i) {
    double v = image[i] + cfg.budget * sg[i];
    if (cfg.clamp) v = std::clamp(v, 0.0, 1.0);
    adv[i] = v;
  }
  r.step_signs.push_back(std::move(sg));
  r.delta = detail::finish(image, adv);
  r.adversarial = std::move(adv);
  r.seconds = detail::elapsed(start);
  return r;
}

/// S ascent steps of size budget/S on L_adv, labels fixed from the clean
/// image, projecting onto the budget ball around x and then onto [0, 1].
inline PerturbationResult pgd(const DetectorModel& model, const Tensor& image, const AttackConfig& cfg) {
  if (cfg.kind != AttackKind::pgd) throw ConfigError("pgd requires kind pgd");
  cfg.validate();
  anchornet::require_image(model.config(), image);
  const auto start = std::chrono::steady_clock::now();
  const double eps = cfg.step_size();
  PerturbationResult r;
  std::vector<std::uint32_t> labels;
  Tensor adv = image;
  for (int s = 0; s < cfg.steps; ++s) {
    auto sg = detail::signs(adversarial_loss_gradient(model, adv, labels));
    for (std::size_t i = 0; i < adv.size(); ++i) {
      double v = adv[i] + eps * sg[i];
      v = std::clamp(v, image[i] - cfg.budget, image[i] + cfg.budget);
      if (cfg.clamp) v = std::clamp(v, 0.0, 1.0);
      adv[i] = v;
    }
    r.step_signs.push_back(std::move(sg));
  }
  r.delta = detail::finish(image, adv);
  r.adversarial = std::move(adv);
  r.seconds = detail::elapsed(start);
  return r;
}

inline PerturbationResult run_attack(const DetectorModel& model, const Tensor& image, const AttackConfig& cfg) {
  switch (cfg.kind) {
    case AttackKind::fgsm: return fgsm(model, image, cfg);
    case AttackKind::pgd: return pgd(model, image, cfg);
    case AttackKind::fa: return focused_attack(model, image, cfg);
  }
  throw ConfigError("unknown attack kind");
}

/// Per-pixel mean |delta| over results and channels, as an [H x W] tensor.
inline Tensor perturbation_heat(std::span<const PerturbationResult> results) {
  if (results.empty()) throw UsageError("perturbation heat needs at least one result");
  const Tensor& d0 = results.front().delta;
  const std::size_t C = d0.dim(0), H = d0.dim(1), W = d0.dim(2);
  Tensor heat(Shape{H, W}, 0.0);
  for (const auto& r : results) {
    require_same_shape(r.delta, d0, "perturbation_heat");
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) heat.at(y, x) += std::abs(r.delta.at(c, y, x));
      }
    }
  }
  const double n = static_cast<double>(results.size() * C);
  for (auto& v : heat.data()) v /= n;
  return heat;
}

/// Fraction of channel-pixels whose |delta| is at least `level`, averaged over results.
inline double fraction_perturbed(std::span<const PerturbationResult> results, double level) {
  if (results.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& r : results) {
    std::size_t n = 0;
    for (double v : r.delta.data()) n += std::abs(v) >= level ? 1 : 0;
    acc += static_cast<double>(n) / static_cast<double>(r.delta.size());
  }
  return acc / static_cast<double>(results.size());
}

}  // namespace fattack::attacks
