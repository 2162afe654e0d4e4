#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fattack/text.hpp"

namespace fattack::metrics {

/// One evaluated (model, attack) configuration over a dataset.
struct EvalReport {
  std::string model;
  std::string attack;  // "clean", "fgsm", "pgd", "fa"
  double epsilon = 0.0;
  int steps = 0;
  std::optional<double> focus;  // fa only
  std::vector<std::optional<double>> per_class_ap;
  double mAP = 0.0;
  double mean_l1 = 0.0;   // mean over images
  double linf = 0.0;      // max over images
  double psnr = 0.0;      // mean over images
  double ms_per_image = 0.0;
};

inline constexpr const char* kEvalReportHeader = "model,attack,epsilon,steps,focus,mAP,mean_l1,linf,psnr,ms_per_image";

inline std::string eval_report_row(const EvalReport& r) {
  return r.model + ',' + r.attack + ',' + format_double(r.epsilon) + ',' + std::to_string(r.steps) + ',' +
         (r.focus ? format_double(*r.focus) : std::string()) + ',' + format_double(r.mAP) + ',' +
         format_double(r.mean_l1) + ',' + format_double(r.linf) + ',' + format_double(r.psnr) + ',' +
         format_double(r.ms_per_image);
}

}  // namespace fattack::metrics
