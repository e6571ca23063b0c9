// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "mtl/rng.hpp"
#include "mtl/tensor.hpp"
#include "mtl/weighting.hpp"

namespace mtl {

enum class ArchKind { HPS, CrossStitch, MMoE, MTAN, CGC, PLE, DSelectK };

constexpr int kArchCount = 7;
const char* arch_name(ArchKind k);
ArchKind arch_from(const std::string& s);

struct ArchSpec {
  ArchKind kind = ArchKind::HPS;
  int input_dim = 16;
  std::vector<int> hidden_dims = {16};
  int rep_dim = 16;
  int num_shared_experts = 4;   // MMoE/CGC/PLE/DSelectK
  int num_task_experts = 1;     // CGC/PLE
  int num_levels = 2;           // PLE
  int top_k = 2;                // DSelectK slots
  double gamma = 1.0;           // DSelectK smooth-step width
  double dselectk_reg_coeff = 0.0;
  std::vector<int> task_head_dims;

  void validate(int tasks) const;  // throws naming the offending field
};

/// One bound forward pass: task outputs, per-task shared representations,
/// and the tape leaf bound to each parameter (one leaf per parameter).
struct ForwardPass {
  std::vector<NodeId> outputs;
  std::vector<NodeId> reps;
  std::vector<Parameter*> bound_params;
  std::vector<NodeId> bound_leaves;
  NodeId aux_loss = -1;  // optional regularizer term (DSelect-k), -1 if none

  NodeId leaf_of(const Parameter* p) const;
};

/// Task-shared parameters theta plus per-task parameters psi_t assembled per
/// an ArchSpec. The partition is exact: a parameter belongs to psi_t iff it
/// can only influence task t's outputs.
class MultiTaskModel {
 public:
  virtual ~MultiTaskModel() = default;

  static std::unique_ptr<MultiTaskModel> build(const ArchSpec& spec, int tasks,
                                               uint64_t seed);

  const ArchSpec& spec() const { return spec_; }
  int task_count() const { return tasks_; }

  std::vector<Parameter*> shared_params();
  std::vector<Parameter*> task_params(int t);
  std::vector<Parameter*> all_params();
  long long count_parameters() const;

  /// Single-input forward: one batch seen by every task.
  virtual ForwardPass forward(Tape& tape, const Tensor& x) = 0;
  /// Multi-input forward: one batch per task; task t's output/rep comes from
  /// xs[t].
  virtual ForwardPass forward_multi(Tape& tape, const std::vector<Tensor>& xs);

 protected:
  MultiTaskModel(ArchSpec spec, int tasks) : spec_(std::move(spec)), tasks_(tasks) {}

  ArchSpec spec_;
  int tasks_ = 0;
  std::vector<Parameter> shared_;
  std::vector<std::vector<Parameter>> task_;

  friend struct PassBuilder;
};

/// Smooth-step gate of DSelect-k: per slot, expert probabilities are products
/// of per-bit smooth-step selections; slots are mixed by a softmax.
/// z: slots x bits selection logits, w_slots: slot logits. Returns K expert
/// probabilities summing to 1.
std::vector<double> dselectk_gate(const std::vector<std::vector<double>>& z,
                                  const std::vector<double>& w_slots, int K,
                                  double gamma);
double smooth_step(double t, double gamma);

}  // namespace mtl
