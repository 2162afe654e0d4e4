#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "fattack/anchornet/config.hpp"
#include "fattack/error.hpp"
#include "fattack/gradtape/ops.hpp"
#include "fattack/gradtape/tape.hpp"
#include "fattack/rng.hpp"
#include "fattack/tensor.hpp"

namespace fattack::anchornet {

using gradtape::Tape;
using gradtape::Var;

struct NamedTensor {
  std::string name;
  std::shared_ptr<const Tensor> value;
};

/// Per-anchor class probabilities [A x C]; every row sums to one.
struct FeatureMap {
  Tensor values;

  std::size_t anchors() const { return values.dim(0); }
  std::size_t classes() const { return values.dim(1); }
  double at(std::size_t a, std::size_t c) const { return values.at(a, c); }
};

/// Expected parameter shapes, in canonical order.
inline std::vector<std::pair<std::string, Shape>> parameter_layout(const DetectorConfig& cfg) {
  std::vector<std::pair<std::string, Shape>> out;
  std::size_t cin = 3;
  for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
    const std::string stage = "stage" + std::to_string(i + 1);
    out.emplace_back(stage + ".weight", Shape{cfg.widths[i], cin, cfg.kernel, cfg.kernel});
    out.emplace_back(stage + ".bias", Shape{cfg.widths[i]});
    cin = cfg.widths[i];
  }
  const std::size_t head = cfg.anchors_per_cell * cfg.num_classes;
  out.emplace_back("head.weight", Shape{head, cin, 1, 1});
  out.emplace_back("head.bias", Shape{head});
  return out;
}

/// Detector architecture plus immutable weights. Copies share weight
/// storage; a model is safe to use from several threads at once.
class DetectorModel {
 public:
  DetectorModel(DetectorConfig config, std::vector<NamedTensor> params)
      : config_(std::move(config)), params_(std::move(params)) {
    config_.validate();
    const auto layout = parameter_layout(config_);
    if (layout.size() != params_.size()) {
      throw FormatError("expected " + std::to_string(layout.size()) + " parameter tensors, got " +
                        std::to_string(params_.size()));
    }
    for (std::size_t i = 0; i < layout.size(); ++i) {
      if (params_[i].name != layout[i].first) {
        throw FormatError("parameter " + std::to_string(i) + " is '" + params_[i].name + "', expected '" +
                          layout[i].first + "'");
      }
      if (!params_[i].value || params_[i].value->shape() != layout[i].second) {
        throw FormatError("parameter '" + params_[i].name + "' has shape " +
                          (params_[i].value ? shape_string(params_[i].value->shape()) : "null") + ", expected " +
                          shape_string(layout[i].second));
      }
    }
  }

  /// He-normal weights drawn from the "init" stream of `seed`, zero biases.
  static DetectorModel initialize(const DetectorConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng = make_rng(seed, "init");
    std::vector<NamedTensor> params;
    for (const auto& [name, shape] : parameter_layout(config)) {
      Tensor t(shape, 0.0);
      if (shape.size() == 4) {
        const double fan_in = static_cast<double>(shape[1] * shape[2] * shape[3]);
        const double sd = std::sqrt(2.0 / fan_in);
        for (auto& v : t.data()) v = sd * standard_normal(rng);
      }
      params.push_back({name, std::make_shared<const Tensor>(std::move(t))});
    }
    return DetectorModel(config, std::move(params));
  }

  /// All-zero weights: the output is the uniform distribution everywhere.
  static DetectorModel zeros(const DetectorConfig& config) {
    config.validate();
    std::vector<NamedTensor> params;
    for (const auto& [name, shape] : parameter_layout(config)) {
      params.push_back({name, std::make_shared<const Tensor>(Tensor(shape, 0.0))});
    }
    return DetectorModel(config, std::move(params));
  }

  const DetectorConfig& config() const noexcept { return config_; }
  const std::vector<NamedTensor>& parameters() const noexcept { return params_; }

  const Tensor& parameter(const std::string& name) const {
    for (const auto& p : params_) {
      if (p.name == name) return *p.value;
    }
    throw UsageError("no parameter named '" + name + "'");
  }

  bool same_weights(const DetectorModel& other) const {
    if (!(config_ == other.config_)) return false;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (!(*params_[i].value == *other.params_[i].value)) return false;
    }
    return true;
  }

 private:
  static double standard_normal(Rng& rng) {
    // Box-Muller on our own uniform draws keeps init identical across
    // standard libraries.
    const double u1 = 1.0 - uniform(rng, 0.0, 1.0);
    const double u2 = uniform(rng, 0.0, 1.0);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  DetectorConfig config_;
  std::vector<NamedTensor> params_;
};

struct ForwardGraph {
  Var probs;                // [A x C]
  std::vector<Var> params;  // canonical order
};

inline void require_image(const DetectorConfig& cfg, const Tensor& image) {
  require_shape(image, Shape{3, cfg.input_size, cfg.input_size}, "detector input");
}

/// Records the detector forward pass. Parameters become variables only when
/// `trainable` is set; attacks differentiate with respect to the image alone.
inline ForwardGraph record_forward(Tape& tape, const DetectorModel& model, Var image, bool trainable = false) {
  const auto& cfg = model.config();
  require_image(cfg, tape.value(image));
  ForwardGraph g;
  for (const auto& p : model.parameters()) {
    g.params.push_back(trainable ? tape.variable(p.value) : tape.constant(p.value));
  }
  Var x = image;
  const std::size_t pad = cfg.kernel / 2;
  for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
    x = gradtape::conv2d(tape, x, g.params[2 * i], 2, pad);
    x = gradtape::add_channel_bias(tape, x, g.params[2 * i + 1]);
    x = gradtape::relu(tape, x);
  }
  const std::size_t h = 2 * cfg.widths.size();
  x = gradtape::conv2d(tape, x, g.params[h], 1, 0);
  x = gradtape::add_channel_bias(tape, x, g.params[h + 1]);
  x = gradtape::anchor_rows(tape, x, cfg.anchors_per_cell);
  g.probs = gradtape::softmax_rows(tape, x);
  return g;
}

inline FeatureMap forward(const DetectorModel& model, const Tensor& image) {
  Tape tape;
  const auto g = record_forward(tape, model, tape.constant(image));
  return FeatureMap{tape.value(g.probs)};
}

}  // namespace fattack::anchornet
