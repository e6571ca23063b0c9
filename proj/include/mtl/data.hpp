// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "mtl/rng.hpp"
#include "mtl/tasks.hpp"
#include "mtl/tensor.hpp"

namespace mtl {

enum class TeacherKind { Linear, Mlp };
const char* teacher_name(TeacherKind k);
TeacherKind teacher_from(const std::string& s);

struct GenConfig {
  int tasks = 2;
  int dim = 16;
  int samples = 512;                  // single-input size
  std::vector<int> samples_per_task;  // multi-input sizes; falls back to samples
  uint64_t seed = 0;
  bool multi_input = false;
  TeacherKind teacher = TeacherKind::Linear;
  double conflict = 0.5;  // pairwise teacher cosine ~ 1 - 2*conflict
  double noise_std = 0.1;
  bool classification = false;
  int classes = 3;

  std::string to_json() const;
  static GenConfig from_json(const std::string& json);
};

struct TaskData {
  TaskSpec spec;
  Tensor inputs;   // N x d
  Tensor targets;  // N x output_dim, or N x 1 class indices
  int samples() const { return inputs.rows(); }
};

struct MultiTaskDataset {
  bool single_input = true;
  std::vector<TaskData> tasks;
  std::string provenance_json;  // generator echo or load origin

  int task_count() const { return static_cast<int>(tasks.size()); }
  int input_dim() const { return tasks.at(0).inputs.cols(); }
};

/// Unit teacher vectors with all pairwise cosines equal to
/// clamp(1 - 2*conflict, feasible minimum -1/(T-1), 1). Requires
/// dim >= tasks + 1.
std::vector<std::vector<double>> conflict_teachers(int tasks, int dim,
                                                   double conflict, Rng& rng);

/// Single-input setting: every task shares the same inputs.
MultiTaskDataset gen_single_input(const GenConfig& cfg);
/// Multi-input setting: per-task inputs from per-task derived seeds.
MultiTaskDataset gen_multi_input(const GenConfig& cfg);
MultiTaskDataset generate(const GenConfig& cfg);

/// CSV exchange: per-task files (header x0..x{d-1},y0.. or x0..,y) plus a
/// manifest.json describing the collection.
void save_csv(const MultiTaskDataset& ds, const std::string& dir);
MultiTaskDataset load_csv(const std::string& dir);

/// One epoch of batches over per-task index subsets. Single-input batches
/// share one shuffled index stream; multi-input tasks run independent
/// streams where shorter tasks cycle (reshuffled on wrap) until the longest
/// task finishes.
struct StepBatch {
  std::vector<Tensor> inputs;   // per task
  std::vector<Tensor> targets;  // per task
  std::vector<int> sizes;
};

class EpochBatches {
 public:
  EpochBatches(const MultiTaskDataset& ds,
               const std::vector<std::vector<int>>& task_indices,
               int batch_size, uint64_t epoch_seed, bool shuffle = true);
  int steps() const { return steps_; }
  StepBatch get(int step) const;

 private:
  const MultiTaskDataset& ds_;
  int steps_ = 0;
  // schedule_[t][s] = indices of task t's step-s batch
  std::vector<std::vector<std::vector<int>>> schedule_;
};

}  // namespace mtl
