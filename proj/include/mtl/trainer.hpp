// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mtl/architecture.hpp"
#include "mtl/data.hpp"
#include "mtl/tasks.hpp"
#include "mtl/weighting.hpp"

namespace mtl {

enum class OptimizerKind { Sgd, SgdMomentum, Adam };
const char* optimizer_name(OptimizerKind k);
OptimizerKind optimizer_from(const std::string& s);

struct OptimConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double lr = 1e-3;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  WeightingKind weighting = WeightingKind::EW;
  GradMode mode = GradMode::ParamGrad;
  bool multi_input = false;
  ArchSpec arch;
  OptimConfig optim;
  int batch_size = 32;
  int epochs = 50;
  uint64_t seed = 0;
  WeightingHyperparams hyper;
  double val_fraction = 0.2;
  bool trace_weights = false;
  std::string trace_path;
  bool omit_timing = false;  // emit wall_seconds as 0 for byte comparisons

  /// Cross-cutting invariants: GradDrop => rep-grad, rep-grad => single
  /// input, CrossStitch => single input.
  void validate() const;
};

class Optimizer {
 public:
  Optimizer(const OptimConfig& cfg, std::vector<Parameter*> params);
  void step();
  void zero_grad();

 private:
  OptimConfig cfg_;
  std::vector<Parameter*> params_;
  std::vector<Tensor> m_, v_;
  long long t_ = 0;
};

struct StepRecord {
  bool ok = true;
  std::string failure;
  std::vector<double> task_losses;
  double total_loss = 0.0;
  std::vector<double> applied_weights;  // empty when elementwise
  bool elementwise = false;
};

struct TaskEpochRecord {
  double train_loss = 0.0;
  double val_metric = 0.0;
};

struct RunReport {
  std::string config_json;  // canonical config echo (includes data provenance)
  std::vector<std::string> task_names;
  std::vector<double> initial_val_metrics;
  std::vector<std::vector<TaskEpochRecord>> epochs;  // [epoch][task]
  long long param_count = 0;
  double step0_total_loss = 0.0;
  double wall_seconds = 0.0;
  bool aborted = false;
  std::string abort_reason;
  std::map<std::string, long long> degenerate_events;
  std::string trace_csv;  // per-step weights, populated when requested
};

/// Per-task gradients for the current batch. In param-grad mode each row is
/// the flattened gradient of L_t over the shared parameters (one backward
/// per task); in rep-grad mode rows are gradients at the per-task shared
/// representations. Task-head gradients land in stash for the later
/// optimizer step.
GradientBundle collect_task_gradients(Tape& tape, const ForwardPass& fp,
                                      MultiTaskModel& model,
                                      std::span<const NodeId> losses,
                                      GradMode mode,
                                      std::vector<std::vector<Tensor>>* stash);

StepRecord train_step(MultiTaskModel& model, const StepBatch& batch,
                      const std::vector<TaskSpec>& specs,
                      WeightingState& state, const TrainConfig& cfg,
                      Optimizer& opt);

RunReport run_experiment(const TrainConfig& cfg, const MultiTaskDataset& ds);

long long count_parameters(const MultiTaskModel& model);

}  // namespace mtl
