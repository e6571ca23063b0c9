// SPDX-License-Identifier: Apache-2.0

#include "mtl/tasks.hpp"

#include <cmath>
#include <stdexcept>

namespace mtl {

void TaskSpec::validate() const {
  if (output_dim < 1) {
    throw std::invalid_argument("task '" + name + "': output_dim must be >= 1");
  }
  if (loss == LossKind::CrossEntropy && output_dim < 2) {
    throw std::invalid_argument("task '" + name +
                                "': cross_entropy requires output_dim >= 2");
  }
  if (metric == MetricKind::Accuracy && loss != LossKind::CrossEntropy) {
    throw std::invalid_argument("task '" + name +
                                "': accuracy requires cross_entropy loss");
  }
}

const char* loss_kind_name(LossKind k) {
  switch (k) {
    case LossKind::Mse: return "mse";
    case LossKind::CrossEntropy: return "cross_entropy";
    case LossKind::L1: return "l1";
  }
  return "?";
}

const char* metric_kind_name(MetricKind k) {
  switch (k) {
    case MetricKind::Mse: return "mse";
    case MetricKind::Mae: return "mae";
    case MetricKind::Accuracy: return "accuracy";
  }
  return "?";
}

LossKind loss_kind_from(const std::string& s) {
  if (s == "mse") return LossKind::Mse;
  if (s == "cross_entropy") return LossKind::CrossEntropy;
  if (s == "l1") return LossKind::L1;
  throw std::invalid_argument("unknown loss kind '" + s +
                              "' (expected mse|cross_entropy|l1)");
}

MetricKind metric_kind_from(const std::string& s) {
  if (s == "mse") return MetricKind::Mse;
  if (s == "mae") return MetricKind::Mae;
  if (s == "accuracy") return MetricKind::Accuracy;
  throw std::invalid_argument("unknown metric kind '" + s +
                              "' (expected mse|mae|accuracy)");
}

namespace {

void check_shapes(const TaskSpec& spec, const Tensor& pred,
                  const Tensor& targets) {
  if (spec.loss == LossKind::CrossEntropy) {
    if (pred.rank() != 2 || pred.cols() != spec.output_dim) {
      throw std::invalid_argument("task '" + spec.name +
                                  "': logits shape " + pred.shape_str() +
                                  " does not match output_dim");
    }
    if (targets.rank() != 2 || targets.cols() != 1 ||
        targets.rows() != pred.rows()) {
      throw std::invalid_argument("task '" + spec.name +
                                  "': class targets must be n x 1, got " +
                                  targets.shape_str());
    }
    for (std::size_t i = 0; i < targets.size(); ++i) {
      double t = targets[i];
      if (t != std::floor(t) || t < 0 || t >= pred.cols()) {
        throw std::invalid_argument("task '" + spec.name +
                                    "': class index out of range");
      }
    }
  } else if (!pred.same_shape(targets)) {
    throw std::invalid_argument("task '" + spec.name +
                                "': predictions " + pred.shape_str() +
                                " vs targets " + targets.shape_str());
  }
}

}  // namespace

NodeId compute_loss(Tape& tape, const TaskSpec& spec, NodeId predictions,
                    const Tensor& targets) {
  const Tensor& pred = tape.value(predictions);
  check_shapes(spec, pred, targets);
  switch (spec.loss) {
    case LossKind::Mse: {
      NodeId t = tape.leaf(targets);
      NodeId d = tape.sub(predictions, t);
      return tape.mean(tape.mul(d, d));
    }
    case LossKind::L1: {
      NodeId t = tape.leaf(targets);
      return tape.mean(tape.abs_(tape.sub(predictions, t)));
    }
    case LossKind::CrossEntropy: {
      int n = pred.rows(), c = pred.cols();
      Tensor onehot = Tensor::zeros({n, c});
      for (int i = 0; i < n; ++i) {
        onehot.at(i, static_cast<int>(targets.at(i, 0))) = 1.0;
      }
      NodeId logp = tape.log_(tape.softmax_rows(predictions));
      NodeId picked = tape.mul(logp, tape.leaf(onehot));
      return tape.scalar_mul(tape.sum(picked), -1.0 / n);
    }
  }
  throw std::invalid_argument("compute_loss: unknown loss kind");
}

double compute_metric(const TaskSpec& spec, const Tensor& pred,
                      const Tensor& targets) {
  check_shapes(spec, pred, targets);
  switch (spec.metric) {
    case MetricKind::Mse: {
      double s = 0.0;
      for (std::size_t i = 0; i < pred.size(); ++i) {
        double d = pred[i] - targets[i];
        s += d * d;
      }
      return s / static_cast<double>(pred.size());
    }
    case MetricKind::Mae: {
      double s = 0.0;
      for (std::size_t i = 0; i < pred.size(); ++i) {
        s += std::fabs(pred[i] - targets[i]);
      }
      return s / static_cast<double>(pred.size());
    }
    case MetricKind::Accuracy: {
      int n = pred.rows(), c = pred.cols();
      int hits = 0;
      for (int i = 0; i < n; ++i) {
        int arg = 0;
        for (int j = 1; j < c; ++j) {
          if (pred.at(i, j) > pred.at(i, arg)) arg = j;  // ties keep lowest
        }
        if (arg == static_cast<int>(targets.at(i, 0))) ++hits;
      }
      return static_cast<double>(hits) / n;
    }
  }
  throw std::invalid_argument("compute_metric: unknown metric kind");
}

}  // namespace mtl
