#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fattack/anchornet/decode.hpp"
#include "fattack/anchornet/model.hpp"
#include "fattack/attacks/attacks.hpp"
#include "fattack/error.hpp"
#include "fattack/harness/parallel.hpp"
#include "fattack/metrics/detection.hpp"
#include "fattack/metrics/perceptibility.hpp"
#include "fattack/metrics/report.hpp"
#include "fattack/synthdata/pnm.hpp"
#include "fattack/synthdata/scene.hpp"

namespace fattack::harness {

using anchornet::DetectorModel;
using attacks::AttackConfig;
using attacks::PerturbationResult;
using synthdata::Dataset;

/// Which part of a dataset a command works on. The validation split is the
/// trailing `val_fraction` of the images, rounded to the nearest image.
enum class Split { all, train, val };

inline Split parse_split(const std::string& s) {
  if (s == "all") return Split::all;
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  throw ConfigError("unknown split '" + s + "' (expected all, train or val)");
}

inline std::size_t validation_count(std::size_t n, double val_fraction) {
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ConfigError("validation fraction must lie in [0, 1)");
  return static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n)));
}

inline Dataset select_split(const Dataset& data, Split split, double val_fraction = 0.2) {
  const std::size_t n_val = validation_count(data.samples.size(), val_fraction);
  const std::size_t cut = data.samples.size() - n_val;
  Dataset out{data.config, data.seed, {}};
  switch (split) {
    case Split::all: out.samples = data.samples; break;
    case Split::train: out.samples.assign(data.samples.begin(), data.samples.begin() + static_cast<std::ptrdiff_t>(cut)); break;
    case Split::val: out.samples.assign(data.samples.begin() + static_cast<std::ptrdiff_t>(cut), data.samples.end()); break;
  }
  if (out.samples.empty()) throw UsageError("selected split contains no images");
  return out;
}

/// Label used in CSV rows: "fa1", "fa5", "pgd", ...
inline std::string attack_label(const AttackConfig& cfg) {
  if (cfg.kind == attacks::AttackKind::fa) return "fa" + std::to_string(cfg.steps);
  return attacks::to_string(cfg.kind);
}

struct EvalOptions {
  std::string model_name = "model";
  anchornet::DecodeParams decode;
  bool quantize = false;   // score 8-bit versions of the adversarial images
  std::size_t workers = 1;  // 0 = all hardware threads
};

struct AttackRun {
  std::vector<PerturbationResult> results;  // empty for a clean run
  std::vector<Tensor> evaluated;            // images the detector was scored on
  metrics::EvalReport report;
};

/// Attacks every image of `data` (or none, for a clean run) and scores the
/// detector on the result. Per-image results keep dataset order whatever the
/// worker count.
inline AttackRun evaluate_attack(const DetectorModel& model, const Dataset& data,
                                 const std::optional<AttackConfig>& attack, const EvalOptions& opt = {}) {
  if (data.samples.empty()) throw UsageError("cannot evaluate on an empty dataset");
  if (attack) attack->validate();
  const std::size_t n = data.samples.size();
  AttackRun run;
  run.evaluated.resize(n);
  if (attack) {
    run.results.resize(n);
    parallel_for(n, opt.workers, [&](std::size_t i) {
      run.results[i] = attacks::run_attack(model, data.samples[i].image, *attack);
      run.evaluated[i] = opt.quantize ? synthdata::quantize(run.results[i].adversarial) : run.results[i].adversarial;
    });
  } else {
    for (std::size_t i = 0; i < n; ++i) run.evaluated[i] = data.samples[i].image;
  }

  auto& r = run.report;
  r.model = opt.model_name;
  r.attack = attack ? attacks::to_string(attack->kind) : "clean";
  r.epsilon = attack ? attack->budget : 0.0;
  r.steps = attack ? attack->steps : 0;
  if (attack && attack->kind == attacks::AttackKind::fa) r.focus = attack->focus;
  const auto score = metrics::map_score(model, data, opt.decode, run.evaluated);
  r.per_class_ap = score.per_class_ap;
  r.mAP = score.mAP;
  double l1 = 0.0, ps = 0.0, ms = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor& x = data.samples[i].image;
    l1 += metrics::mean_l1(x, run.evaluated[i]);
    r.linf = std::max(r.linf, metrics::linf(x, run.evaluated[i]));
    ps += metrics::psnr(x, run.evaluated[i]);
    if (attack) ms += run.results[i].seconds * 1000.0;
  }
  r.mean_l1 = l1 / static_cast<double>(n);
  r.psnr = ps / static_cast<double>(n);
  r.ms_per_image = ms / static_cast<double>(n);
  return run;
}

struct BenchCell {
  AttackConfig config;
  double mean_ms = 0.0;  // per image
  double stddev_ms = 0.0;
  std::size_t runs = 0;
};

/// Timing protocol: every measured run attacks each image once, single
/// threaded, with the clock around the attack calls only. Cells are visited
/// round-robin within each repeat so slow drift hits all of them alike.
/// With `io_paths` set, each timed attack also reads its image from disk and
/// encodes the result as P6.
inline std::vector<BenchCell> bench_attacks(const DetectorModel& model, std::span<const Tensor> images,
                                            std::span<const AttackConfig> cells, std::size_t warmups,
                                            std::size_t repeats,
                                            std::span<const std::filesystem::path> io_paths = {}) {
  if (images.empty()) throw UsageError("benchmark needs at least one image");
  if (!io_paths.empty() && io_paths.size() != images.size()) {
    throw DimensionError("benchmark I/O paths do not match image count");
  }
  const auto& cfg = model.config();
  if (repeats == 0) throw ConfigError("benchmark repeats must be at least 1");
  for (const auto& c : cells) c.validate();
  std::vector<std::vector<double>> samples(cells.size());
  for (std::size_t rep = 0; rep < warmups + repeats; ++rep) {
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const auto start = std::chrono::steady_clock::now();
      for (std::size_t i = 0; i < images.size(); ++i) {
        if (io_paths.empty()) {
          attacks::run_attack(model, images[i], cells[c]);
        } else {
          const Tensor img = synthdata::read_image(io_paths[i], cfg.input_size, cfg.input_size);
          const auto bytes = synthdata::encode_ppm(attacks::run_attack(model, img, cells[c]).adversarial);
          if (bytes.empty()) throw Error("failed to encode adversarial image");
        }
      }
      const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      if (rep >= warmups) samples[c].push_back(ms / static_cast<double>(images.size()));
    }
  }
  std::vector<BenchCell> out;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    BenchCell b{cells[c], 0.0, 0.0, samples[c].size()};
    for (double v : samples[c]) b.mean_ms += v;
    b.mean_ms /= static_cast<double>(b.runs);
    if (b.runs > 1) {
      double ss = 0.0;
      for (double v : samples[c]) ss += (v - b.mean_ms) * (v - b.mean_ms);
      b.stddev_ms = std::sqrt(ss / static_cast<double>(b.runs - 1));
    }
    out.push_back(b);
  }
  return out;
}

}  // namespace fattack::harness
