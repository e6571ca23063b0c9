// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "mtl/tensor.hpp"

namespace mtl {

enum class LossKind { Mse, CrossEntropy, L1 };
enum class MetricKind { Mse, Mae, Accuracy };

struct TaskSpec {
  std::string name;
  LossKind loss = LossKind::Mse;
  MetricKind metric = MetricKind::Mse;
  bool higher_is_better = false;
  int output_dim = 1;

  void validate() const;
};

const char* loss_kind_name(LossKind k);
const char* metric_kind_name(MetricKind k);
LossKind loss_kind_from(const std::string& s);
MetricKind metric_kind_from(const std::string& s);

/// Builds the task loss on the tape and returns the scalar node.
/// mse/l1 expect targets shaped like the predictions; cross_entropy expects
/// an n x 1 matrix of class indices and row-max-stabilized logits.
NodeId compute_loss(Tape& tape, const TaskSpec& spec, NodeId predictions,
                    const Tensor& targets);

/// Pure evaluation metric. Accuracy breaks argmax ties toward the lowest
/// index.
double compute_metric(const TaskSpec& spec, const Tensor& predictions,
                      const Tensor& targets);

}  // namespace mtl
