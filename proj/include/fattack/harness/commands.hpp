#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "fattack/anchornet/sparsity.hpp"
#include "fattack/anchornet/train.hpp"
#include "fattack/anchornet/weights_io.hpp"
#include "fattack/attacks/attacks.hpp"
#include "fattack/harness/experiment.hpp"
#include "fattack/metrics/report.hpp"
#include "fattack/synthdata/dataset_io.hpp"
#include "fattack/synthdata/pnm.hpp"
#include "fattack/text.hpp"

namespace fattack::harness {

namespace fs = std::filesystem;

inline std::string csv_line(const std::vector<std::string>& fields) {
  std::string s;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) s += ',';
    s += fields[i];
  }
  return s + '\n';
}

inline void write_csv(const fs::path& path, const std::string& header, const std::vector<std::string>& rows) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::string text = header + '\n';
  for (const auto& r : rows) text += r;
  synthdata::write_text(path, text);
}

/// Where a command reads its images from.
struct DataRef {
  fs::path dir;
  Split split = Split::val;
  double val_fraction = 0.2;

  Dataset load() const { return select_split(synthdata::read_dataset(dir), split, val_fraction); }
};

inline DetectorModel load_model(const fs::path& weights, const anchornet::DetectorConfig& cfg) {
  return anchornet::load_weights(cfg, weights);
}

// ---------------------------------------------------------------- generate

struct GenerateOptions {
  std::uint64_t seed = 1;
  std::size_t count = 500;
  anchornet::DetectorConfig config;
  double noise = 0.05;
  fs::path out;
  bool force = false;
};

inline Dataset cmd_generate(const GenerateOptions& opt, std::ostream& log) {
  if (opt.count == 0) throw ConfigError("image count must be positive");
  opt.config.validate();
  auto ds = synthdata::generate(opt.seed, opt.count, opt.config, opt.noise);
  synthdata::write_dataset(ds, opt.out, opt.force);
  log << "wrote " << ds.samples.size() << " images to " << opt.out.string() << '\n';
  return ds;
}

// ---------------------------------------------------------------- train

struct TrainCommandOptions {
  DataRef data{{}, Split::train, 0.2};  // split is ignored: train uses train, scores val
  int epochs = 50;
  double learning_rate = 0.5;
  std::size_t batch_size = 8;
  std::uint64_t seed = 1;
  fs::path out;
  std::optional<fs::path> loss_csv;  // default: <out> with extension .loss.csv
};

struct TrainSummary {
  DetectorModel model;
  std::vector<double> loss;     // index 0 = before training
  std::vector<double> val_map;  // index 0 = before training
};

inline fs::path default_loss_csv(const fs::path& weights) {
  fs::path p = weights;
  p.replace_extension(".loss.csv");
  return p;
}

inline TrainSummary cmd_train(const TrainCommandOptions& opt, std::ostream& log) {
  const Dataset all = synthdata::read_dataset(opt.data.dir);
  const Dataset train_set = select_split(all, Split::train, opt.data.val_fraction);
  const bool has_val = validation_count(all.samples.size(), opt.data.val_fraction) > 0;
  const Dataset val_set = has_val ? select_split(all, Split::val, opt.data.val_fraction) : Dataset{};

  const auto initial = DetectorModel::initialize(all.config, opt.seed);
  auto score = [&](const DetectorModel& m) { return has_val ? metrics::map_score(m, val_set).mAP : 0.0; };
  TrainSummary s{initial, {anchornet::mean_loss(initial, train_set)}, {score(initial)}};
  log << "epoch 0 loss " << format_double(s.loss[0]) << " val_mAP " << format_double(s.val_map[0]) << '\n';

  anchornet::TrainOptions to{opt.epochs, opt.learning_rate, opt.batch_size, opt.seed};
  auto result = anchornet::train(initial, train_set, to, [&](int epoch, double loss, const DetectorModel& m) {
    s.loss.push_back(loss);
    s.val_map.push_back(score(m));
    log << "epoch " << epoch << " loss " << format_double(loss) << " val_mAP " << format_double(s.val_map.back())
        << '\n';
  });
  s.model = std::move(result.model);

  anchornet::save_weights(s.model, opt.out);
  std::vector<std::string> rows;
  for (std::size_t e = 0; e < s.loss.size(); ++e) {
    rows.push_back(csv_line({std::to_string(e), format_double(s.loss[e]), format_double(s.val_map[e])}));
  }
  write_csv(opt.loss_csv.value_or(default_loss_csv(opt.out)), "epoch,loss,val_mAP", rows);
  return s;
}

// ---------------------------------------------------------------- attack

struct AttackCommandOptions {
  fs::path weights;
  DataRef data;
  AttackConfig attack;
  anchornet::DecodeParams decode;
  bool quantize = false;
  std::uint64_t seed = 1;  // the attacks draw no random numbers; kept for a uniform interface
  std::size_t workers = 1;
  fs::path out;
};

inline std::string heat_csv(const Tensor& heat) {
  std::string s;
  for (std::size_t y = 0; y < heat.dim(0); ++y) {
    for (std::size_t x = 0; x < heat.dim(1); ++x) {
      if (x) s += ',';
      s += format_double(heat.at(y, x));
    }
    s += '\n';
  }
  return s;
}

inline AttackRun cmd_attack(const AttackCommandOptions& opt, std::ostream& log) {
  const Dataset data = opt.data.load();
  const auto model = load_model(opt.weights, data.config);
  EvalOptions eo{opt.weights.stem().string(), opt.decode, opt.quantize, opt.workers};
  auto run = evaluate_attack(model, data, opt.attack, eo);

  fs::create_directories(opt.out / "original");
  fs::create_directories(opt.out / "adversarial");
  std::vector<std::string> deltas;
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const auto& s = data.samples[i];
    const auto& r = run.results[i];
    synthdata::write_image(opt.out / "original" / s.name, s.image);
    synthdata::write_image(opt.out / "adversarial" / s.name, r.adversarial);
    deltas.push_back(csv_line({s.name, format_double(metrics::mean_l1(s.image, r.adversarial)),
                               format_double(metrics::linf(s.image, r.adversarial)),
                               format_double(metrics::psnr(s.image, r.adversarial)),
                               std::to_string(r.step_signs.size()), r.no_op ? "1" : "0"}));
  }
  write_csv(opt.out / "report.csv", metrics::kEvalReportHeader, {metrics::eval_report_row(run.report) + '\n'});
  write_csv(opt.out / "deltas.csv", "image,mean_l1,linf,psnr,steps_run,no_op", deltas);
  synthdata::write_text(opt.out / "heat.csv", heat_csv(attacks::perturbation_heat(run.results)));
  log << attack_label(opt.attack) << " mAP " << format_double(run.report.mAP) << " mean_l1 "
      << format_double(run.report.mean_l1) << " psnr " << format_double(run.report.psnr) << '\n';
  return run;
}

// ---------------------------------------------------------------- sweep

enum class SweepVariable { epsilon, steps, focus };

inline SweepVariable parse_sweep_variable(const std::string& s) {
  if (s == "epsilon") return SweepVariable::epsilon;
  if (s == "steps") return SweepVariable::steps;
  if (s == "focus") return SweepVariable::focus;
  throw ConfigError("unknown sweep variable '" + s + "' (expected epsilon, steps or focus)");
}

inline const char* to_string(SweepVariable v) {
  switch (v) {
    case SweepVariable::epsilon: return "epsilon";
    case SweepVariable::steps: return "steps";
    case SweepVariable::focus: return "focus";
  }
  return "?";
}

inline std::vector<double> default_sweep_values(SweepVariable v) {
  switch (v) {
    case SweepVariable::epsilon: return {0.01, 0.02, 0.05, 0.1};
    case SweepVariable::steps: return {1, 3, 5, 10};
    case SweepVariable::focus: return {0.1, 0.3, 0.5, 0.7, 0.9};
  }
  return {};
}

struct SweepOptions {
  fs::path weights;
  DataRef data;
  SweepVariable variable = SweepVariable::epsilon;
  std::vector<double> values;       // empty = defaults for the variable
  std::optional<double> epsilon;    // default 0.02, or 0.1 for a steps sweep
  int steps = 5;
  double focus = 0.5;
  attacks::FaVariant fa_variant = attacks::FaVariant::indexed;
  anchornet::DecodeParams decode;
  bool quantize = false;
  std::size_t workers = 1;
  fs::path out;
};

struct SweepRow {
  std::string attack;
  double value = 0.0;
  metrics::EvalReport report;
};

inline std::vector<SweepRow> cmd_sweep(const SweepOptions& opt, std::ostream& log) {
  const auto values = opt.values.empty() ? default_sweep_values(opt.variable) : opt.values;
  const double eps = opt.epsilon.value_or(opt.variable == SweepVariable::steps ? 0.1 : 0.02);
  for (double v : values) {
    if (opt.variable == SweepVariable::steps && (v < 1 || v != std::floor(v))) {
      throw ConfigError("steps values must be positive integers");
    }
  }
  const Dataset data = opt.data.load();
  const auto model = load_model(opt.weights, data.config);
  const EvalOptions eo{opt.weights.stem().string(), opt.decode, opt.quantize, opt.workers};

  auto make = [&](attacks::AttackKind kind, double budget, int steps, double focus) {
    AttackConfig c;
    c.kind = kind;
    c.budget = budget;
    c.steps = steps;
    c.focus = focus;
    c.fa_variant = opt.fa_variant;
    c.validate();
    return c;
  };
  auto eval = [&](const AttackConfig& c) { return evaluate_attack(model, data, c, eo).report; };
  using attacks::AttackKind;

  std::vector<SweepRow> rows;
  auto add = [&](const std::string& name, double value, const metrics::EvalReport& r) {
    rows.push_back({name, value, r});
    log << name << ' ' << to_string(opt.variable) << '=' << format_double(value) << " mAP " << format_double(r.mAP)
        << '\n';
  };

  switch (opt.variable) {
    case SweepVariable::epsilon:
      for (double v : values) {
        add("fgsm", v, eval(make(AttackKind::fgsm, v, 1, opt.focus)));
        add("pgd", v, eval(make(AttackKind::pgd, v, opt.steps, opt.focus)));
        add("fa1", v, eval(make(AttackKind::fa, v, 1, opt.focus)));
        add("fa" + std::to_string(opt.steps), v, eval(make(AttackKind::fa, v, opt.steps, opt.focus)));
      }
      break;
    case SweepVariable::steps: {
      const auto fgsm = eval(make(AttackKind::fgsm, eps, 1, opt.focus));
      for (double v : values) {
        const int s = static_cast<int>(v);
        add("fgsm", v, fgsm);
        add("pgd", v, eval(make(AttackKind::pgd, eps, s, opt.focus)));
        add("fa", v, eval(make(AttackKind::fa, eps, s, opt.focus)));
      }
      break;
    }
    case SweepVariable::focus: {
      // The baselines have no focus parameter: one run each, repeated per value.
      const auto fgsm = eval(make(AttackKind::fgsm, eps, 1, opt.focus));
      const auto pgd = eval(make(AttackKind::pgd, eps, opt.steps, opt.focus));
      for (double v : values) {
        add("fgsm", v, fgsm);
        add("pgd", v, pgd);
        add("fa1", v, eval(make(AttackKind::fa, eps, 1, v)));
        add("fa" + std::to_string(opt.steps), v, eval(make(AttackKind::fa, eps, opt.steps, v)));
      }
      break;
    }
  }

  std::vector<std::string> lines;
  for (const auto& r : rows) {
    lines.push_back(csv_line({r.attack, to_string(opt.variable), format_double(r.value), format_double(r.report.mAP),
                              format_double(r.report.mean_l1), format_double(r.report.psnr),
                              format_double(r.report.ms_per_image)}));
  }
  write_csv(opt.out, "attack,variable,value,mAP,mean_l1,psnr,ms_per_image", lines);
  return rows;
}

// ---------------------------------------------------------------- bench

struct BenchOptions {
  fs::path weights;
  DataRef data;
  std::vector<double> thresholds{0.1, 0.3, 0.5, 0.7, 0.9};
  double epsilon = 0.02;
  int steps = 5;
  std::size_t images = 20;  // first N images of the split
  std::size_t warmups = 3;
  std::size_t repeats = 20;
  bool include_io = false;
  fs::path out;
};

inline std::vector<BenchCell> cmd_bench(const BenchOptions& opt, std::ostream& log) {
  if (opt.thresholds.empty()) throw ConfigError("benchmark needs at least one focus threshold");
  if (opt.images == 0) throw ConfigError("benchmark image count must be positive");
  const auto ds = synthdata::read_dataset(opt.data.dir);
  Dataset data = select_split(ds, opt.data.split, opt.data.val_fraction);
  const auto model = load_model(opt.weights, data.config);
  if (data.samples.size() > opt.images) data.samples.resize(opt.images);
  std::vector<Tensor> images;
  std::vector<fs::path> paths;
  for (const auto& s : data.samples) {
    images.push_back(s.image);
    if (opt.include_io) paths.push_back(opt.data.dir / "images" / s.name);
  }

  using attacks::AttackKind;
  using attacks::FaVariant;
  std::vector<AttackConfig> cells;
  auto cell = [&](AttackKind kind, int steps, double focus, FaVariant v) {
    AttackConfig c;
    c.kind = kind;
    c.budget = opt.epsilon;
    c.steps = steps;
    c.focus = focus;
    c.fa_variant = v;
    cells.push_back(c);
  };
  cell(AttackKind::fgsm, 1, 0.5, FaVariant::indexed);
  cell(AttackKind::pgd, opt.steps, 0.5, FaVariant::indexed);
  for (double t : opt.thresholds) {
    for (int s : {1, opt.steps}) {
      cell(AttackKind::fa, s, t, FaVariant::indexed);
      cell(AttackKind::fa, s, t, FaVariant::parallel);
    }
  }

  const auto results = bench_attacks(model, images, cells, opt.warmups, opt.repeats, paths);
  std::vector<std::string> lines;
  for (const auto& b : results) {
    const bool fa = b.config.kind == AttackKind::fa;
    lines.push_back(csv_line({attacks::to_string(b.config.kind), fa ? attacks::to_string(b.config.fa_variant) : "",
                              fa ? format_double(b.config.focus) : "", std::to_string(b.config.steps),
                              format_double(b.mean_ms), format_double(b.stddev_ms), std::to_string(b.runs)}));
    log << lines.back();
  }
  write_csv(opt.out, "attack,variant,focus,steps,mean_ms,stddev_ms,runs", lines);
  return results;
}

// ---------------------------------------------------------------- sparsity

struct SparsityOptions {
  std::optional<fs::path> weights;  // nullopt = untrained model with zero weights
  DataRef data;
  std::vector<double> thresholds{0.01, 0.05, 0.1, 0.2, 0.5};
  std::size_t bins = 20;
  double top_fraction = 0.0002;
  bool include_background = false;
  fs::path out;
};

inline std::string histogram_rows(const anchornet::Histogram& h, std::vector<std::string>& lines) {
  const double total = static_cast<double>(h.total());
  for (std::size_t b = 0; b < h.counts.size(); ++b) {
    lines.push_back(csv_line({format_double(h.edges[b]), format_double(h.edges[b + 1]), std::to_string(h.counts[b]),
                              format_double(total > 0 ? static_cast<double>(h.counts[b]) / total : 0.0)}));
  }
  return "bin_lo,bin_hi,count,fraction";
}

inline anchornet::SparsityStats cmd_sparsity(const SparsityOptions& opt, std::ostream& log) {
  const Dataset data = opt.data.load();
  const auto model = opt.weights ? load_model(*opt.weights, data.config) : DetectorModel::zeros(data.config);
  std::vector<anchornet::FeatureMap> maps;
  for (const auto& s : data.samples) maps.push_back(anchornet::forward(model, s.image));
  const auto stats =
      anchornet::sparsity_stats(maps, opt.thresholds, opt.bins, opt.top_fraction, opt.include_background);

  fs::create_directories(opt.out);
  std::vector<std::string> lines;
  const auto header = histogram_rows(stats.histogram, lines);
  write_csv(opt.out / "histogram.csv", header, lines);
  lines.clear();
  histogram_rows(stats.top, lines);
  write_csv(opt.out / "top.csv", header, lines);
  lines.clear();
  for (std::size_t i = 0; i < stats.thresholds.size(); ++i) {
    lines.push_back(csv_line({format_double(stats.thresholds[i]), format_double(stats.fraction_le[i])}));
    log << "fraction <= " << format_double(stats.thresholds[i]) << ": " << format_double(stats.fraction_le[i]) << '\n';
  }
  write_csv(opt.out / "thresholds.csv", "threshold,fraction_le", lines);
  return stats;
}

// ---------------------------------------------------------------- eval

struct EvalCommandOptions {
  fs::path weights;
  DataRef data;
  anchornet::DecodeParams decode;
  std::optional<fs::path> out;
};

inline metrics::EvalReport cmd_eval(const EvalCommandOptions& opt, std::ostream& log) {
  const Dataset data = opt.data.load();
  const auto model = load_model(opt.weights, data.config);
  const auto run = evaluate_attack(model, data, std::nullopt, {opt.weights.stem().string(), opt.decode, false, 1});
  for (std::size_t c = 1; c < run.report.per_class_ap.size(); ++c) {
    const auto& ap = run.report.per_class_ap[c];
    log << "class " << c << " AP " << (ap ? format_double(*ap) : std::string("n/a")) << '\n';
  }
  log << "mAP " << format_double(run.report.mAP) << '\n';
  if (opt.out) write_csv(*opt.out, metrics::kEvalReportHeader, {metrics::eval_report_row(run.report) + '\n'});
  return run.report;
}

}  // namespace fattack::harness
