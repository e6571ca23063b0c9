// SPDX-License-Identifier: Apache-2.0

#include "cli_args.hpp"

#include <CLI11.hpp>
#include <json.hpp>

namespace mtlcli {

namespace {

void add_common_training_flags(CLI::App* sub, CliConfig& c) {
  sub->add_option("--weighting", c.weighting, "Loss weighting strategy")
      ->check(CLI::IsMember({"EW", "GradNorm", "UW", "MGDA", "DWA", "GLS",
                             "PCGrad", "GradDrop", "IMTL", "GradVac", "CAGrad",
                             "RLW"}));
  sub->add_option("--arch", c.arch, "Sharing architecture")
      ->check(CLI::IsMember(
          {"HPS", "CrossStitch", "MMoE", "MTAN", "CGC", "PLE", "DSelectK"}));
  sub->add_option("--mode", c.mode,
                  "Gradient acquisition: exact shared-parameter gradients or "
                  "the representation surrogate")
      ->check(CLI::IsMember({"param", "rep"}));
  sub->add_flag("--multi-input", c.multi_input,
                "Each task draws from its own dataset");
  sub->add_option("--seed", c.seed, "Master seed");
  sub->add_option("--epochs", c.epochs, "Training epochs");
  sub->add_option("--bs", c.batch_size, "Batch size");
  sub->add_option("--lr", c.lr, "Learning rate");
  sub->add_option("--optimizer", c.optimizer, "Optimizer")
      ->check(CLI::IsMember({"sgd", "sgd_momentum", "adam"}));
  sub->add_option("--momentum", c.momentum, "SGD momentum");

  sub->add_option("--alpha", c.alpha, "GradNorm asymmetry");
  sub->add_option("--weight-lr", c.weight_lr, "GradNorm weight step size");
  sub->add_option("--tau", c.tau, "DWA temperature");
  sub->add_option("--beta", c.beta, "GradVac EMA rate");
  sub->add_option("--c", c.c, "CAGrad convergence radius");
  sub->add_option("--mgda-norm", c.mgda_norm, "MGDA row normalization")
      ->check(CLI::IsMember({"none", "l2", "loss", "loss+"}));
  sub->add_option("--cagrad-rescale", c.cagrad_rescale,
                  "CAGrad direction rescale")
      ->check(CLI::IsMember({"none", "sq"}));

  sub->add_option("--hidden", c.hidden, "Hidden layer widths");
  sub->add_option("--rep-dim", c.rep_dim, "Shared representation width");
  sub->add_option("--experts", c.experts, "Shared expert count");
  sub->add_option("--task-experts", c.task_experts,
                  "Per-task expert count (CGC/PLE)");
  sub->add_option("--levels", c.levels, "PLE level count");
  sub->add_option("--top-k", c.top_k, "DSelect-k slot count");
  sub->add_option("--gamma", c.gamma, "DSelect-k smooth-step width");
  sub->add_option("--reg-coeff", c.reg_coeff,
                  "DSelect-k selection-entropy coefficient");

  sub->add_option("--tasks", c.tasks, "Synthetic task count");
  sub->add_option("--dim", c.dim, "Synthetic input dimension");
  sub->add_option("--samples", c.samples, "Synthetic samples (per task)");
  sub->add_option("--conflict", c.conflict,
                  "Teacher conflict in [0,1]; pairwise cosine ~ 1-2*conflict");
  sub->add_option("--teacher", c.teacher, "Synthetic teacher")
      ->check(CLI::IsMember({"linear", "mlp"}));
  sub->add_option("--noise-std", c.noise_std, "Target noise stddev");
  sub->add_flag("--classification", c.classification,
                "Classification targets (cross-entropy tasks)");
  sub->add_option("--classes", c.classes, "Class count for classification");
}

}  // namespace

ParseOutcome parse_args(const std::vector<std::string>& argv) {
  ParseOutcome out;
  CliConfig& c = out.config;

  CLI::App app{"Desk-scale multi-task learning engine"};
  app.require_subcommand(0, 1);

  CLI::App* run = app.add_subcommand("run", "Run a single experiment");
  add_common_training_flags(run, c);
  run->add_option("--data", c.data_path, "Dataset directory (CSV exchange)");
  run->add_option("--out", c.out_path, "Report JSON path");
  run->add_option("--trace", c.trace_path, "Per-step weights trace CSV path");
  run->add_flag("--omit-timing", c.omit_timing,
                "Report wall_seconds as 0 for byte-comparable output");

  CLI::App* sweep = app.add_subcommand(
      "sweep", "Run every weighting x architecture combination");
  add_common_training_flags(sweep, c);
  sweep->add_option("--out", c.out_path, "Output directory")->required();
  sweep->add_option("--jobs", c.jobs, "Parallel combo runners");
  sweep->add_flag("--omit-timing", c.omit_timing,
                  "Report wall_seconds as 0 for byte-comparable output");

  CLI::App* gen = app.add_subcommand("gen-data", "Generate synthetic datasets");
  gen->add_option("--tasks", c.tasks, "Task count");
  gen->add_option("--dim", c.dim, "Input dimension");
  gen->add_option("--samples", c.samples, "Samples (per task)");
  gen->add_option("--seed", c.seed, "Master seed");
  gen->add_option("--conflict", c.conflict, "Teacher conflict in [0,1]");
  gen->add_option("--teacher", c.teacher, "Teacher kind")
      ->check(CLI::IsMember({"linear", "mlp"}));
  gen->add_option("--noise-std", c.noise_std, "Target noise stddev");
  gen->add_flag("--multi-input", c.multi_input, "Per-task input data");
  gen->add_flag("--classification", c.classification, "Classification targets");
  gen->add_option("--classes", c.classes, "Class count");
  gen->add_option("--out", c.out_path, "Output directory")->required();

  CLI::App* verify = app.add_subcommand(
      "verify", "Run gradient checks and solver oracles");
  verify->add_option("--seed", c.seed, "Oracle RNG seed");

  std::vector<const char*> cargv;
  cargv.push_back("mtl");
  for (const std::string& a : argv) cargv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(cargv.size()), cargv.data());
  } catch (const CLI::CallForHelp& e) {
    out.exit_early = true;
    out.exit_code = 0;
    out.error = app.help();
    return out;
  } catch (const CLI::ParseError& e) {
    out.exit_code = 1;
    out.error = e.what();
    return out;
  }

  if (run->parsed()) {
    c.command = Command::Run;
  } else if (sweep->parsed()) {
    c.command = Command::Sweep;
    // sweep defaults tuned for the 84-combination toy: 200 steps over a
    // 2-task, d=16 dataset unless overridden
    if (!sweep->count("--epochs")) c.epochs = 25;
    if (!sweep->count("--samples")) c.samples = 320;
  } else if (gen->parsed()) {
    c.command = Command::GenData;
  } else if (verify->parsed()) {
    c.command = Command::Verify;
  } else {
    out.exit_code = 1;
    out.error = app.help();
    return out;
  }
  out.ok = true;
  return out;
}

std::vector<std::string> render_args(const CliConfig& c) {
  std::vector<std::string> a;
  auto num = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  switch (c.command) {
    case Command::Run: a.push_back("run"); break;
    case Command::Sweep: a.push_back("sweep"); break;
    case Command::GenData: a.push_back("gen-data"); break;
    case Command::Verify: a.push_back("verify"); break;
    case Command::None: return a;
  }
  auto opt = [&](const char* flag, const std::string& v) {
    a.push_back(flag);
    a.push_back(v);
  };

  if (c.command == Command::Verify) {
    opt("--seed", std::to_string(c.seed));
    return a;
  }
  if (c.command == Command::GenData) {
    opt("--tasks", std::to_string(c.tasks));
    opt("--dim", std::to_string(c.dim));
    opt("--samples", std::to_string(c.samples));
    opt("--seed", std::to_string(c.seed));
    opt("--conflict", num(c.conflict));
    opt("--teacher", c.teacher);
    opt("--noise-std", num(c.noise_std));
    if (c.multi_input) a.push_back("--multi-input");
    if (c.classification) a.push_back("--classification");
    opt("--classes", std::to_string(c.classes));
    opt("--out", c.out_path);
    return a;
  }

  opt("--weighting", c.weighting);
  opt("--arch", c.arch);
  opt("--mode", c.mode);
  if (c.multi_input) a.push_back("--multi-input");
  opt("--seed", std::to_string(c.seed));
  opt("--epochs", std::to_string(c.epochs));
  opt("--bs", std::to_string(c.batch_size));
  opt("--lr", num(c.lr));
  opt("--optimizer", c.optimizer);
  opt("--momentum", num(c.momentum));
  opt("--alpha", num(c.alpha));
  opt("--weight-lr", num(c.weight_lr));
  opt("--tau", num(c.tau));
  opt("--beta", num(c.beta));
  opt("--c", num(c.c));
  opt("--mgda-norm", c.mgda_norm);
  opt("--cagrad-rescale", c.cagrad_rescale);
  a.push_back("--hidden");
  for (int h : c.hidden) a.push_back(std::to_string(h));
  opt("--rep-dim", std::to_string(c.rep_dim));
  opt("--experts", std::to_string(c.experts));
  opt("--task-experts", std::to_string(c.task_experts));
  opt("--levels", std::to_string(c.levels));
  opt("--top-k", std::to_string(c.top_k));
  opt("--gamma", num(c.gamma));
  opt("--reg-coeff", num(c.reg_coeff));
  opt("--tasks", std::to_string(c.tasks));
  opt("--dim", std::to_string(c.dim));
  opt("--samples", std::to_string(c.samples));
  opt("--conflict", num(c.conflict));
  opt("--teacher", c.teacher);
  opt("--noise-std", num(c.noise_std));
  if (c.classification) a.push_back("--classification");
  opt("--classes", std::to_string(c.classes));
  if (!c.data_path.empty()) opt("--data", c.data_path);
  if (!c.out_path.empty()) opt("--out", c.out_path);
  if (c.command == Command::Run && !c.trace_path.empty()) {
    opt("--trace", c.trace_path);
  }
  if (c.omit_timing) a.push_back("--omit-timing");
  if (c.command == Command::Sweep) opt("--jobs", std::to_string(c.jobs));
  return a;
}

std::string to_train_config_json(const CliConfig& c) {
  nlohmann::ordered_json j;
  j["weighting"] = c.weighting;
  j["arch"] = c.arch;
  j["mode"] = c.mode;
  j["multi_input"] = c.multi_input;
  j["seed"] = c.seed;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["optimizer"] = {{"kind", c.optimizer},
                    {"lr", c.lr},
                    {"momentum", c.momentum}};
  j["arch_params"] = {{"hidden_dims", c.hidden},
                      {"rep_dim", c.rep_dim},
                      {"experts", c.experts},
                      {"task_experts", c.task_experts},
                      {"levels", c.levels},
                      {"top_k", c.top_k},
                      {"gamma", c.gamma},
                      {"reg_coeff", c.reg_coeff}};
  j["hyper"] = {{"alpha", c.alpha},
                {"weight_lr", c.weight_lr},
                {"tau", c.tau},
                {"beta", c.beta},
                {"c", c.c},
                {"mgda_norm", c.mgda_norm},
                {"cagrad_rescale", c.cagrad_rescale == "sq" ? "sq" : "none"}};
  j["trace_path"] = c.trace_path;
  j["omit_timing"] = c.omit_timing;
  return j.dump();
}

std::string to_gen_json(const CliConfig& c) {
  nlohmann::ordered_json j;
  j["tasks"] = c.tasks;
  j["dim"] = c.dim;
  j["samples"] = c.samples;
  j["seed"] = c.seed;
  j["multi_input"] = c.multi_input;
  j["teacher"] = c.teacher;
  j["conflict"] = c.conflict;
  j["noise_std"] = c.noise_std;
  j["classification"] = c.classification;
  j["classes"] = c.classes;
  return j.dump();
}

std::string sweep_defaults_note() {
  return "sweep defaults: 2-task single-input toy, d=16, conflict 0.5, "
         "320 samples, 25 epochs x 8 steps = 200 steps per combination";
}

}  // namespace mtlcli
