// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace mtl {

/// Dense double-precision tensor, rank 1 or 2, row-major storage.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<int> shape, std::vector<double> data);

  static Tensor zeros(const std::vector<int>& shape);
  static Tensor filled(const std::vector<int>& shape, double v);
  static Tensor scalar(double v);
  static Tensor vector(std::vector<double> v);
  static Tensor matrix(int rows, int cols, std::vector<double> data);

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int rows() const;
  int cols() const;
  std::size_t size() const { return data_.size(); }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  std::string shape_str() const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(int r, int c);
  double at(int r, int c) const;
  bool all_finite() const;

  bool requires_grad = false;

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

enum class Op {
  Leaf,
  Matmul,
  Add,
  Sub,
  Mul,
  ScaleRows,
  ScaleAll,
  ScalarMul,
  Relu,
  Sigmoid,
  Tanh,
  Exp,
  Log,
  Abs,
  Sum,
  Mean,
  SoftmaxRows,
  ConcatRows,
  ConcatCols,
  SliceRows,
  SliceCols,
};

const char* op_name(Op op);

using NodeId = int;

/// Reverse-mode differentiation record. A tape is rebuilt for every forward
/// pass; nodes are appended in topological order (parents precede children)
/// and gradient buffers accumulate across backward calls until zero_grads().
class Tape {
 public:
  NodeId leaf(Tensor value, bool requires_grad = false);

  NodeId matmul(NodeId a, NodeId b);
  /// Elementwise add; also broadcasts a rank-1 [m] bias across the rows of
  /// an n x m matrix.
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  /// Scales row i of an n x m matrix by the i-th entry of a rank-1 [n]
  /// vector or an n x 1 column.
  NodeId scale_rows(NodeId m, NodeId c);
  /// Broadcast multiply by a size-1 node: out = s[0] * a.
  NodeId scale_all(NodeId a, NodeId s);
  NodeId scalar_mul(NodeId a, double k);
  NodeId relu(NodeId a);
  NodeId sigmoid(NodeId a);
  NodeId tanh_(NodeId a);
  NodeId exp_(NodeId a);
  NodeId log_(NodeId a);
  NodeId abs_(NodeId a);
  NodeId sum(NodeId a);
  NodeId mean(NodeId a);
  NodeId softmax_rows(NodeId a);
  NodeId concat_rows(NodeId a, NodeId b);
  NodeId concat_cols(NodeId a, NodeId b);
  NodeId slice_rows(NodeId a, int r0, int r1);
  NodeId slice_cols(NodeId a, int c0, int c1);

  /// Generic dispatch, mainly for property harnesses that iterate op kinds.
  NodeId apply(Op op, std::span<const NodeId> inputs, double k = 0.0,
               int a0 = 0, int a1 = 0);

  const Tensor& value(NodeId id) const;
  /// Accumulated gradient for a node; zeros if backward never touched it.
  Tensor grad(NodeId id) const;
  bool requires_grad(NodeId id) const;
  std::size_t node_count() const { return nodes_.size(); }

  void zero_grads();
  /// Seeds d(root)/d(root) = 1 and sweeps the tape in reverse. root must be
  /// scalar (size 1). Gradients accumulate into existing buffers.
  void backward(NodeId root);
  /// As backward(root), but nodes in stop_at receive their gradient and do
  /// not propagate to their parents.
  void backward(NodeId root, std::span<const NodeId> stop_at);

 private:
  struct Node {
    Op op;
    std::array<NodeId, 2> parents{-1, -1};
    int n_parents = 0;
    Tensor value;
    bool requires_grad = false;
    double k = 0.0;  // ScalarMul factor
    int a0 = 0, a1 = 0;  // slice bounds
  };

  NodeId push(Node n);
  void check(NodeId id) const;

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;  // empty tensor until first touched
};

/// Compares the tape gradient of build(tape, params_leaf) against central
/// finite differences. Returns the max over coordinates of
/// |analytic - numeric| / max(1, |analytic|). Throws if the function value
/// is non-finite.
double finite_diff_check(const std::function<NodeId(Tape&, NodeId)>& build,
                         const Tensor& params, double step);

}  // namespace mtl
