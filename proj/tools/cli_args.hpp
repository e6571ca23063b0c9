// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mtlcli {

enum class Command { None, Run, Sweep, GenData, Verify };

/// Every flag of every subcommand, with documented defaults. The CLI builds
/// the engine-facing JSON from this; parse and render round-trip exactly.
struct CliConfig {
  Command command = Command::None;

  // training
  std::string weighting = "EW";
  std::string arch = "HPS";
  std::string mode = "param";
  bool multi_input = false;
  uint64_t seed = 0;
  int epochs = 50;
  int batch_size = 32;
  double lr = 1e-3;
  std::string optimizer = "adam";
  double momentum = 0.9;

  // strategy hyperparameters
  double alpha = 1.5;
  double weight_lr = 0.025;
  double tau = 2.0;
  double beta = 0.01;
  double c = 0.4;
  std::string mgda_norm = "none";
  std::string cagrad_rescale = "sq";

  // architecture sizes
  std::vector<int> hidden = {16};
  int rep_dim = 16;
  int experts = 4;
  int task_experts = 1;
  int levels = 2;
  int top_k = 2;
  double gamma = 1.0;
  double reg_coeff = 0.0;

  // synthetic data
  int tasks = 2;
  int dim = 16;
  int samples = 512;
  double conflict = 0.5;
  std::string teacher = "linear";
  double noise_std = 0.1;
  bool classification = false;
  int classes = 3;

  // io
  std::string data_path;
  std::string out_path;
  std::string trace_path;
  bool omit_timing = false;

  // sweep
  int jobs = 1;

  bool operator==(const CliConfig&) const = default;
};

struct ParseOutcome {
  bool ok = false;
  bool exit_early = false;  // --help and friends
  int exit_code = 0;
  std::string error;
  CliConfig config;
};

ParseOutcome parse_args(const std::vector<std::string>& argv);

/// Canonical argv (subcommand plus every explicit flag) such that
/// parse_args(render_args(c)).config == c.
std::vector<std::string> render_args(const CliConfig& c);

/// Engine-facing JSON documents.
std::string to_train_config_json(const CliConfig& c);
std::string to_gen_json(const CliConfig& c);
std::string sweep_defaults_note();

}  // namespace mtlcli
