// Command-line front end: generate, train, attack, sweep, bench, sparsity, eval.

#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fattack/harness/commands.hpp"

using namespace fattack;
using namespace fattack::harness;

namespace {

struct DataFlags {
  std::string dir;
  std::string split = "val";
  double val_fraction = 0.2;

  void add(CLI::App* app, const std::string& default_split) {
    split = default_split;
    app->add_option("--dataset", dir, "Dataset directory written by 'generate'")->required();
    app->add_option("--split", split, "Images to use: all, train or val")->capture_default_str();
    app->add_option("--val-fraction", val_fraction, "Trailing fraction of images held out for validation")
        ->capture_default_str();
  }

  DataRef ref() const { return {dir, parse_split(split), val_fraction}; }
};

void add_decode(CLI::App* app, anchornet::DecodeParams& d) {
  app->add_option("--confidence", d.confidence, "Detection confidence bound c")->capture_default_str();
  app->add_option("--nms-iou", d.nms_iou, "NMS IoU threshold")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse adversarial attacks on a toy anchor-grid detector"};
  app.require_subcommand(1);

  // generate
  GenerateOptions gen;
  std::string gen_out;
  auto* g = app.add_subcommand("generate", "Render a synthetic detection dataset");
  g->add_option("--seed", gen.seed)->capture_default_str();
  g->add_option("--count,-n", gen.count)->capture_default_str();
  g->add_option("--out", gen_out)->required();
  g->add_flag("--force", gen.force, "Overwrite a non-empty output directory");
  g->add_option("--classes", gen.config.num_classes, "Classes including background")->capture_default_str();
  g->add_option("--noise", gen.noise)->capture_default_str();

  // train
  TrainCommandOptions tr;
  DataFlags tr_data;
  std::string tr_out, tr_loss;
  auto* t = app.add_subcommand("train", "Train the detector by plain gradient descent");
  tr_data.add(t, "train");
  t->add_option("--epochs", tr.epochs)->capture_default_str();
  t->add_option("--lr", tr.learning_rate)->capture_default_str();
  t->add_option("--batch", tr.batch_size)->capture_default_str();
  t->add_option("--seed", tr.seed)->capture_default_str();
  t->add_option("--out", tr_out, "Weights file")->required();
  t->add_option("--loss-csv", tr_loss, "Loss trace (default: <out>.loss.csv)");

  // attack
  AttackCommandOptions at;
  DataFlags at_data;
  std::string at_kind = "fa", at_variant = "indexed", at_weights, at_out;
  auto* a = app.add_subcommand("attack", "Attack a dataset split and score the detector");
  at_data.add(a, "val");
  a->add_option("--weights", at_weights)->required();
  a->add_option("--attack", at_kind, "fgsm, pgd or fa")->capture_default_str();
  a->add_option("--epsilon", at.attack.budget)->capture_default_str();
  a->add_option("--steps", at.attack.steps)->capture_default_str();
  a->add_option("--focus", at.attack.focus)->capture_default_str();
  a->add_option("--fa-variant", at_variant, "indexed, parallel or hinge")->capture_default_str();
  a->add_flag("--literal-sign", at.attack.literal_sign, "Step along +sign(grad FA)");
  a->add_flag("--quantize", at.quantize, "Score 8-bit adversarial images");
  a->add_option("--seed", at.seed)->capture_default_str();
  a->add_option("--workers", at.workers, "0 = all hardware threads")->capture_default_str();
  a->add_option("--out", at_out)->required();
  add_decode(a, at.decode);

  // sweep
  SweepOptions sw;
  DataFlags sw_data;
  std::string sw_var = "epsilon", sw_variant = "indexed", sw_weights, sw_out;
  double sw_eps = -1.0;
  auto* s = app.add_subcommand("sweep", "Hyperparameter curve over epsilon, steps or focus");
  sw_data.add(s, "val");
  s->add_option("--weights", sw_weights)->required();
  s->add_option("--variable", sw_var, "epsilon, steps or focus")->capture_default_str();
  s->add_option("--values", sw.values, "Values to sweep (default per variable)")->delimiter(',');
  s->add_option("--epsilon", sw_eps, "Fixed budget (default 0.02, 0.1 for steps)");
  s->add_option("--steps", sw.steps)->capture_default_str();
  s->add_option("--focus", sw.focus)->capture_default_str();
  s->add_option("--fa-variant", sw_variant)->capture_default_str();
  s->add_flag("--quantize", sw.quantize);
  s->add_option("--workers", sw.workers)->capture_default_str();
  s->add_option("--out", sw_out, "Curve CSV")->required();
  add_decode(s, sw.decode);

  // bench
  BenchOptions be;
  DataFlags be_data;
  std::string be_weights, be_out;
  auto* b = app.add_subcommand("bench", "Wall-clock time per image for each attack");
  be_data.add(b, "val");
  b->add_option("--weights", be_weights)->required();
  b->add_option("--thresholds", be.thresholds)->delimiter(',')->capture_default_str();
  b->add_option("--epsilon", be.epsilon)->capture_default_str();
  b->add_option("--steps", be.steps)->capture_default_str();
  b->add_option("--images", be.images)->capture_default_str();
  b->add_option("--warmups", be.warmups)->capture_default_str();
  b->add_option("--repeats", be.repeats)->capture_default_str();
  b->add_flag("--include-io", be.include_io, "Time image reads and P6 encoding too");
  b->add_option("--out", be_out)->required();

  // sparsity
  SparsityOptions sp;
  DataFlags sp_data;
  std::string sp_weights, sp_out;
  bool sp_untrained = false;
  auto* p = app.add_subcommand("sparsity", "Activation histogram of the detector's feature maps");
  sp_data.add(p, "val");
  auto* spw = p->add_option("--weights", sp_weights);
  p->add_flag("--untrained", sp_untrained, "Use all-zero weights")->excludes(spw);
  p->add_option("--thresholds", sp.thresholds)->delimiter(',')->capture_default_str();
  p->add_option("--bins", sp.bins)->capture_default_str();
  p->add_option("--top-fraction", sp.top_fraction)->capture_default_str();
  p->add_flag("--include-background", sp.include_background);
  p->add_option("--out", sp_out, "Output directory")->required();

  // eval
  EvalCommandOptions ev;
  DataFlags ev_data;
  std::string ev_weights, ev_out;
  auto* e = app.add_subcommand("eval", "Clean mAP of a trained detector");
  ev_data.add(e, "val");
  e->add_option("--weights", ev_weights)->required();
  e->add_option("--out", ev_out, "Optional report CSV");
  add_decode(e, ev.decode);

  CLI11_PARSE(app, argc, argv);

  try {
    if (g->parsed()) {
      gen.out = gen_out;
      cmd_generate(gen, std::cout);
    } else if (t->parsed()) {
      tr.data = tr_data.ref();
      tr.out = tr_out;
      if (!tr_loss.empty()) tr.loss_csv = tr_loss;
      cmd_train(tr, std::cout);
    } else if (a->parsed()) {
      at.data = at_data.ref();
      at.weights = at_weights;
      at.out = at_out;
      at.attack.kind = attacks::parse_attack_kind(at_kind);
      at.attack.fa_variant = attacks::parse_fa_variant(at_variant);
      cmd_attack(at, std::cout);
    } else if (s->parsed()) {
      sw.data = sw_data.ref();
      sw.weights = sw_weights;
      sw.out = sw_out;
      sw.variable = parse_sweep_variable(sw_var);
      sw.fa_variant = attacks::parse_fa_variant(sw_variant);
      if (sw_eps >= 0.0) sw.epsilon = sw_eps;
      cmd_sweep(sw, std::cout);
    } else if (b->parsed()) {
      be.data = be_data.ref();
      be.weights = be_weights;
      be.out = be_out;
      cmd_bench(be, std::cout);
    } else if (p->parsed()) {
      sp.data = sp_data.ref();
      if (!sp_untrained) {
        if (sp_weights.empty()) throw UsageError("sparsity needs --weights or --untrained");
        sp.weights = sp_weights;
      }
      sp.out = sp_out;
      cmd_sparsity(sp, std::cout);
    } else if (e->parsed()) {
      ev.data = ev_data.ref();
      ev.weights = ev_weights;
      if (!ev_out.empty()) ev.out = ev_out;
      cmd_eval(ev, std::cout);
    }
  } catch (const fattack::Error& err) {
    std::cerr << "fattack: " << err.what() << '\n';
    return 1;
  } catch (const std::exception& err) {
    std::cerr << "fattack: unexpected error: " << err.what() << '\n';
    return 2;
  }
  return 0;
}
