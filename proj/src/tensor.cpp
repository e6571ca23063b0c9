// SPDX-License-Identifier: Apache-2.0

#include "mtl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace mtl {

namespace {

// Forward guards: log floors its argument, exp caps it. Both leave gradients
// untouched at interior points.
constexpr double kLogFloor = 1e-12;
constexpr double kExpCap = 700.0;

std::size_t shape_product(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

[[noreturn]] void fail(const std::string& msg) {
  throw std::invalid_argument(msg);
}

}  // namespace

Tensor::Tensor(std::vector<int> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.empty() || shape_.size() > 2) {
    fail("Tensor: rank must be 1 or 2");
  }
  for (int d : shape_) {
    if (d <= 0) fail("Tensor: dimensions must be positive");
  }
  if (shape_product(shape_) != data_.size()) {
    fail("Tensor: shape/data size mismatch");
  }
}

Tensor Tensor::zeros(const std::vector<int>& shape) {
  return Tensor(shape, std::vector<double>(shape_product(shape), 0.0));
}

Tensor Tensor::filled(const std::vector<int>& shape, double v) {
  return Tensor(shape, std::vector<double>(shape_product(shape), v));
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::vector(std::vector<double> v) {
  int n = static_cast<int>(v.size());
  return Tensor({n}, std::move(v));
}

Tensor Tensor::matrix(int rows, int cols, std::vector<double> data) {
  return Tensor({rows, cols}, std::move(data));
}

int Tensor::rows() const {
  if (rank() != 2) fail("Tensor::rows: rank-2 required, got " + shape_str());
  return shape_[0];
}

int Tensor::cols() const {
  if (rank() != 2) fail("Tensor::cols: rank-2 required, got " + shape_str());
  return shape_[1];
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << "x";
    os << shape_[i];
  }
  os << "]";
  return os.str();
}

double& Tensor::at(int r, int c) {
  return data_[static_cast<std::size_t>(r) * shape_[1] + c];
}

double Tensor::at(int r, int c) const {
  return data_[static_cast<std::size_t>(r) * shape_[1] + c];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Matmul: return "matmul";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::ScaleRows: return "scale_rows";
    case Op::ScaleAll: return "scale_all";
    case Op::ScalarMul: return "scalar_mul";
    case Op::Relu: return "relu";
    case Op::Sigmoid: return "sigmoid";
    case Op::Tanh: return "tanh";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Abs: return "abs";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::SoftmaxRows: return "softmax_rows";
    case Op::ConcatRows: return "concat_rows";
    case Op::ConcatCols: return "concat_cols";
    case Op::SliceRows: return "slice_rows";
    case Op::SliceCols: return "slice_cols";
  }
  return "?";
}

void Tape::check(NodeId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
    fail("Tape: invalid node id");
  }
}

NodeId Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  grads_.emplace_back();
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.op = Op::Leaf;
  n.requires_grad = requires_grad || value.requires_grad;
  n.value = std::move(value);
  return push(std::move(n));
}

const Tensor& Tape::value(NodeId id) const {
  check(id);
  return nodes_[id].value;
}

Tensor Tape::grad(NodeId id) const {
  check(id);
  if (grads_[id].size() == 0) return Tensor::zeros(nodes_[id].value.shape());
  return grads_[id];
}

bool Tape::requires_grad(NodeId id) const {
  check(id);
  return nodes_[id].requires_grad;
}

void Tape::zero_grads() {
  for (auto& g : grads_) g = Tensor();
}

namespace {

std::string binop_msg(const char* op, const Tensor& a, const Tensor& b) {
  return std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
         b.shape_str();
}

}  // namespace

NodeId Tape::matmul(NodeId a, NodeId b) {
  check(a);
  check(b);
  const Tensor& A = nodes_[a].value;
  const Tensor& B = nodes_[b].value;
  if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows()) {
    fail(binop_msg("matmul", A, B));
  }
  int n = A.rows(), k = A.cols(), m = B.cols();
  Tensor C = Tensor::zeros({n, m});
  for (int i = 0; i < n; ++i) {
    for (int p = 0; p < k; ++p) {
      double av = A.at(i, p);
      if (av == 0.0) continue;
      for (int j = 0; j < m; ++j) C.at(i, j) += av * B.at(p, j);
    }
  }
  Node node;
  node.op = Op::Matmul;
  node.parents = {a, b};
  node.n_parents = 2;
  node.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
  node.value = std::move(C);
  return push(std::move(node));
}

NodeId Tape::add(NodeId a, NodeId b) {
  check(a);
  check(b);
  const Tensor& A = nodes_[a].value;
  const Tensor& B = nodes_[b].value;
  Tensor C;
  if (A.same_shape(B)) {
    C = A;
    for (std::size_t i = 0; i < C.size(); ++i) C[i] += B[i];
  } else if (A.rank() == 2 && B.rank() == 1 && A.cols() == B.shape()[0]) {
    C = A;
    for (int i = 0; i < A.rows(); ++i) {
      for (int j = 0; j < A.cols(); ++j) C.at(i, j) += B[j];
    }
  } else {
    fail(binop_msg("add", A, B));
  }
  Node node;
  node.op = Op::Add;
  node.parents = {a, b};
  node.n_parents = 2;
  node.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
  node.value = std::move(C);
  return push(std::move(node));
}

NodeId Tape::sub(NodeId a, NodeId b) {
  check(a);
  check(b);
  const Tensor& A = nodes_[a].value;
  const Tensor& B = nodes_[b].value;
  if (!A.same_shape(B)) fail(binop_msg("sub", A, B));
  Tensor C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C[i] -= B[i];
  Node node;
  node.op = Op::Sub;
  node.parents = {a, b};
  node.n_parents = 2;
  node.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
  node.value = std::move(C);
  return push(std::move(node));
}

NodeId Tape::mul(NodeId a, NodeId b) {
  check(a);
  check(b);
  const Tensor& A = nodes_[a].value;
  const Tensor& B = nodes_[b].value;
  if (!A.same_shape(B)) fail(binop_msg("mul", A, B));
  Tensor C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C[i] *= B[i];
  Node node;
  node.op = Op::Mul;
  node.parents = {a, b};
  node.n_parents = 2;
  node.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
  node.value = std::move(C);
  return push(std::move(node));
}

NodeId Tape::scale_rows(NodeId m, NodeId c) {
  check(m);
  check(c);
  const Tensor& M = nodes_[m].value;
  const Tensor& C = nodes_[c].value;
  bool col_ok = (C.rank() == 1 && C.shape()[0] == M.rows()) ||
                (C.rank() == 2 && C.cols() == 1 && C.rows() == M.rows());
  if (M.rank() != 2 || !col_ok) {
    fail(binop_msg("scale_rows", M, C));
  }
  Tensor out = M;
  for (int i = 0; i < M.rows(); ++i) {
    for (int j = 0; j < M.cols(); ++j) out.at(i, j) *= C[i];
  }
  Node node;
  node.op = Op::ScaleRows;
  node.parents = {m, c};
  node.n_parents = 2;
  node.requires_grad = nodes_[m].requires_grad || nodes_[c].requires_grad;
  node.value = std::move(out);
  return push(std::move(node));
}

NodeId Tape::scale_all(NodeId a, NodeId s) {
  check(a);
  check(s);
  const Tensor& A = nodes_[a].value;
  const Tensor& S = nodes_[s].value;
  if (S.size() != 1) fail(binop_msg("scale_all", A, S));
  Tensor C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C[i] *= S[0];
  Node node;
  node.op = Op::ScaleAll;
  node.parents = {a, s};
  node.n_parents = 2;
  node.requires_grad = nodes_[a].requires_grad || nodes_[s].requires_grad;
  node.value = std::move(C);
  return push(std::move(node));
}

NodeId Tape::scalar_mul(NodeId a, double k) {
  check(a);
  Tensor C = nodes_[a].value;
  for (std::size_t i = 0; i < C.size(); ++i) C[i] *= k;
  Node node;
  node.op = Op::ScalarMul;
  node.parents = {a, -1};
  node.n_parents = 1;
  node.requires_grad = nodes_[a].requires_grad;
  node.k = k;
  node.value = std::move(C);
  return push(std::move(node));
}

namespace {

template <typename F>
Tensor map_unary(const Tensor& a, F f) {
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i]);
  return out;
}

}  // namespace

NodeId Tape::relu(NodeId a) {
  check(a);
  Node node;
  node.op = Op::Relu;
  node.parents = {a, -1};
  node.n_parents = 1;
  node.requires_grad = nodes_[a].requires_grad;
  node.value = map_unary(nodes_[a].value,
                         [](double v) { return v > 0.0 ? v : 0.0; });
  return push(std::move(node));
}

NodeId Tape::sigmoid(NodeId a) {
  check(a);
  Node node;
  node.op = Op::Sigmoid;
  node.parents = {a, -1};
  node.n_parents = 1;
  node.requires_grad = nodes_[a].requires_grad;
  node.value = map_unary(nodes_[a].value, [](double v) {
    return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                    : std::exp(v) / (1.0 + std::exp(v));
  });
  return push(std::move(node));
}

NodeId Tape::tanh_(NodeId a) {
  check(a);
  Node node;
  node.op = Op::Tanh;
  node.parents = {a, -1};
  node.n_parents = 1;
  node.requires_grad = nodes_[a].requires_grad;
  node.value = map_unary(nodes_[a].value, [](double v) { return std::tanh(v); });
  return push(std::move(node));
}

NodeId Tape::exp_(NodeId a) {
  check(a);
  Node node;
  node.op = Op::Exp;
  node.parents = {a, -1};
  node.n_parents = 1;
  node.requires_grad = nodes_[a].requires_grad;
  node.value = map_unary(nodes_[a].value, [](double v) {
    return std::exp(std::min(v, kExpCap));
  });
  return push(std::move(node));
}

NodeId Tape::log_(NodeId a) {
  check(a);
  Node node;
  node.op = Op::Log;
  node.parents = {a, -1};
  node.n_parents = 1;
  node.requires_grad = nodes_[a].requires_grad;
  node.value = map_unary(nodes_[a].value, [](double v) {
    return std::log(std::max(v, kLogFloor));
  });
  return push(std::move(node));
}

NodeId Tape::abs_(NodeId a) {
  check(a);
  Node node;
  node.op = Op::Abs;
  node.parents = {a, -1};
  node.n_parents = 1;
  node.requires_grad = nodes_[a].requires_grad;
  node.value = map_unary(nodes_[a].value, [](double v) { return std::fabs(v); });
  return push(std::move(node));
}

NodeId Tape::sum(NodeId a) {
  check(a);
  const Tensor& A = nodes_[a].value;
  double s = 0.0;
  for (std::size_t i = 0; i < A.size(); ++i) s += A[i];
  Node node;
  node.op = Op::Sum;
  node.parents = {a, -1};
  node.n_parents = 1;
  node.requires_grad = nodes_[a].requires_grad;
  node.value = Tensor::scalar(s);
  return push(std::move(node));
}

NodeId Tape::mean(NodeId a) {
  check(a);
  const Tensor& A = nodes_[a].value;
  double s = 0.0;
  for (std::size_t i = 0; i < A.size(); ++i) s += A[i];
  Node node;
  node.op = Op::Mean;
  node.parents = {a, -1};
  node.n_parents = 1;
  node.requires_grad = nodes_[a].requires_grad;
  node.value = Tensor::scalar(s / static_cast<double>(A.size()));
  return push(std::move(node));
}

NodeId Tape::softmax_rows(NodeId a) {
  check(a);
  const Tensor& A = nodes_[a].value;
  Tensor out = A;
  int nrows = A.rank() == 2 ? A.rows() : 1;
  int ncols = A.rank() == 2 ? A.cols() : A.shape()[0];
  for (int i = 0; i < nrows; ++i) {
    double* row = out.data() + static_cast<std::size_t>(i) * ncols;
    double mx = row[0];
    for (int j = 1; j < ncols; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int j = 0; j < ncols; ++j) {
      row[j] = std::exp(row[j] - mx);
      denom += row[j];
    }
    for (int j = 0; j < ncols; ++j) row[j] /= denom;
  }
  Node node;
  node.op = Op::SoftmaxRows;
  node.parents = {a, -1};
  node.n_parents = 1;
  node.requires_grad = nodes_[a].requires_grad;
  node.value = std::move(out);
  return push(std::move(node));
}

NodeId Tape::concat_rows(NodeId a, NodeId b) {
  check(a);
  check(b);
  const Tensor& A = nodes_[a].value;
  const Tensor& B = nodes_[b].value;
  if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.cols()) {
    fail(binop_msg("concat_rows", A, B));
  }
  Tensor C = Tensor::zeros({A.rows() + B.rows(), A.cols()});
  std::copy(A.data(), A.data() + A.size(), C.data());
  std::copy(B.data(), B.data() + B.size(), C.data() + A.size());
  Node node;
  node.op = Op::ConcatRows;
  node.parents = {a, b};
  node.n_parents = 2;
  node.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
  node.value = std::move(C);
  return push(std::move(node));
}

NodeId Tape::concat_cols(NodeId a, NodeId b) {
  check(a);
  check(b);
  const Tensor& A = nodes_[a].value;
  const Tensor& B = nodes_[b].value;
  if (A.rank() != 2 || B.rank() != 2 || A.rows() != B.rows()) {
    fail(binop_msg("concat_cols", A, B));
  }
  int n = A.rows(), ca = A.cols(), cb = B.cols();
  Tensor C = Tensor::zeros({n, ca + cb});
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < ca; ++j) C.at(i, j) = A.at(i, j);
    for (int j = 0; j < cb; ++j) C.at(i, ca + j) = B.at(i, j);
  }
  Node node;
  node.op = Op::ConcatCols;
  node.parents = {a, b};
  node.n_parents = 2;
  node.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
  node.value = std::move(C);
  return push(std::move(node));
}

NodeId Tape::slice_rows(NodeId a, int r0, int r1) {
  check(a);
  const Tensor& A = nodes_[a].value;
  if (A.rank() != 2 || r0 < 0 || r1 > A.rows() || r0 >= r1) {
    fail("slice_rows: bad range on " + A.shape_str());
  }
  Tensor C = Tensor::zeros({r1 - r0, A.cols()});
  std::copy(A.data() + static_cast<std::size_t>(r0) * A.cols(),
            A.data() + static_cast<std::size_t>(r1) * A.cols(), C.data());
  Node node;
  node.op = Op::SliceRows;
  node.parents = {a, -1};
  node.n_parents = 1;
  node.requires_grad = nodes_[a].requires_grad;
  node.a0 = r0;
  node.a1 = r1;
  node.value = std::move(C);
  return push(std::move(node));
}

NodeId Tape::slice_cols(NodeId a, int c0, int c1) {
  check(a);
  const Tensor& A = nodes_[a].value;
  if (A.rank() != 2 || c0 < 0 || c1 > A.cols() || c0 >= c1) {
    fail("slice_cols: bad range on " + A.shape_str());
  }
  Tensor C = Tensor::zeros({A.rows(), c1 - c0});
  for (int i = 0; i < A.rows(); ++i) {
    for (int j = c0; j < c1; ++j) C.at(i, j - c0) = A.at(i, j);
  }
  Node node;
  node.op = Op::SliceCols;
  node.parents = {a, -1};
  node.n_parents = 1;
  node.requires_grad = nodes_[a].requires_grad;
  node.a0 = c0;
  node.a1 = c1;
  node.value = std::move(C);
  return push(std::move(node));
}

NodeId Tape::apply(Op op, std::span<const NodeId> in, double k, int a0,
                   int a1) {
  switch (op) {
    case Op::Matmul: return matmul(in[0], in[1]);
    case Op::Add: return add(in[0], in[1]);
    case Op::Sub: return sub(in[0], in[1]);
    case Op::Mul: return mul(in[0], in[1]);
    case Op::ScaleRows: return scale_rows(in[0], in[1]);
    case Op::ScaleAll: return scale_all(in[0], in[1]);
    case Op::ScalarMul: return scalar_mul(in[0], k);
    case Op::Relu: return relu(in[0]);
    case Op::Sigmoid: return sigmoid(in[0]);
    case Op::Tanh: return tanh_(in[0]);
    case Op::Exp: return exp_(in[0]);
    case Op::Log: return log_(in[0]);
    case Op::Abs: return abs_(in[0]);
    case Op::Sum: return sum(in[0]);
    case Op::Mean: return mean(in[0]);
    case Op::SoftmaxRows: return softmax_rows(in[0]);
    case Op::ConcatRows: return concat_rows(in[0], in[1]);
    case Op::ConcatCols: return concat_cols(in[0], in[1]);
    case Op::SliceRows: return slice_rows(in[0], a0, a1);
    case Op::SliceCols: return slice_cols(in[0], a0, a1);
    case Op::Leaf: break;
  }
  fail("apply: leaf is not an applicable op");
}

void Tape::backward(NodeId root) { backward(root, {}); }

void Tape::backward(NodeId root, std::span<const NodeId> stop_at) {
  check(root);
  if (nodes_[root].value.size() != 1) {
    fail(std::string("backward: root must be scalar, got shape ") +
         nodes_[root].value.shape_str());
  }
  if (!nodes_[root].requires_grad) return;  // detached root

  std::vector<char> stop(nodes_.size(), 0);
  for (NodeId id : stop_at) {
    check(id);
    stop[id] = 1;
  }

  // The sweep runs over local buffers; persistent grads only accumulate the
  // result, so repeated backward calls add independent contributions.
  std::vector<Tensor> local(nodes_.size());
  auto grad_buf = [&](NodeId id) -> Tensor& {
    if (local[id].size() == 0) {
      local[id] = Tensor::zeros(nodes_[id].value.shape());
    }
    return local[id];
  };

  grad_buf(root)[0] += 1.0;

  for (NodeId i = root; i >= 0; --i) {
    const Node& n = nodes_[i];
    if (!n.requires_grad || local[i].size() == 0) continue;
    if (n.op == Op::Leaf) continue;
    if (stop[i] && i != root) continue;
    const Tensor& g = local[i];
    const Tensor& v = n.value;
    NodeId pa = n.parents[0];
    NodeId pb = n.n_parents > 1 ? n.parents[1] : -1;
    const Tensor& A = nodes_[pa].value;
    bool need_a = nodes_[pa].requires_grad;
    bool need_b = pb >= 0 && nodes_[pb].requires_grad;

    switch (n.op) {
      case Op::Matmul: {
        const Tensor& B = nodes_[pb].value;
        int nr = A.rows(), kk = A.cols(), mc = B.cols();
        if (need_a) {
          Tensor& ga = grad_buf(pa);
          for (int i2 = 0; i2 < nr; ++i2)
            for (int j = 0; j < mc; ++j) {
              double gv = g.at(i2, j);
              if (gv == 0.0) continue;
              for (int p = 0; p < kk; ++p) ga.at(i2, p) += gv * B.at(p, j);
            }
        }
        if (need_b) {
          Tensor& gb = grad_buf(pb);
          for (int i2 = 0; i2 < nr; ++i2)
            for (int p = 0; p < kk; ++p) {
              double av = A.at(i2, p);
              if (av == 0.0) continue;
              for (int j = 0; j < mc; ++j) gb.at(p, j) += av * g.at(i2, j);
            }
        }
        break;
      }
      case Op::Add: {
        const Tensor& B = nodes_[pb].value;
        if (need_a) {
          Tensor& ga = grad_buf(pa);
          for (std::size_t t = 0; t < g.size(); ++t) ga[t] += g[t];
        }
        if (need_b) {
          Tensor& gb = grad_buf(pb);
          if (A.same_shape(B)) {
            for (std::size_t t = 0; t < g.size(); ++t) gb[t] += g[t];
          } else {  // bias broadcast: column sums
            for (int r = 0; r < A.rows(); ++r)
              for (int c = 0; c < A.cols(); ++c) gb[c] += g.at(r, c);
          }
        }
        break;
      }
      case Op::Sub: {
        if (need_a) {
          Tensor& ga = grad_buf(pa);
          for (std::size_t t = 0; t < g.size(); ++t) ga[t] += g[t];
        }
        if (need_b) {
          Tensor& gb = grad_buf(pb);
          for (std::size_t t = 0; t < g.size(); ++t) gb[t] -= g[t];
        }
        break;
      }
      case Op::Mul: {
        const Tensor& B = nodes_[pb].value;
        if (need_a) {
          Tensor& ga = grad_buf(pa);
          for (std::size_t t = 0; t < g.size(); ++t) ga[t] += g[t] * B[t];
        }
        if (need_b) {
          Tensor& gb = grad_buf(pb);
          for (std::size_t t = 0; t < g.size(); ++t) gb[t] += g[t] * A[t];
        }
        break;
      }
      case Op::ScaleRows: {
        const Tensor& C = nodes_[pb].value;
        if (need_a) {
          Tensor& ga = grad_buf(pa);
          for (int r = 0; r < A.rows(); ++r)
            for (int c = 0; c < A.cols(); ++c) ga.at(r, c) += g.at(r, c) * C[r];
        }
        if (need_b) {
          Tensor& gc = grad_buf(pb);
          for (int r = 0; r < A.rows(); ++r) {
            double s = 0.0;
            for (int c = 0; c < A.cols(); ++c) s += g.at(r, c) * A.at(r, c);
            gc[r] += s;
          }
        }
        break;
      }
      case Op::ScaleAll: {
        const Tensor& S = nodes_[pb].value;
        if (need_a) {
          Tensor& ga = grad_buf(pa);
          for (std::size_t t = 0; t < g.size(); ++t) ga[t] += g[t] * S[0];
        }
        if (need_b) {
          Tensor& gs = grad_buf(pb);
          double s = 0.0;
          for (std::size_t t = 0; t < g.size(); ++t) s += g[t] * A[t];
          gs[0] += s;
        }
        break;
      }
      case Op::ScalarMul: {
        if (need_a) {
          Tensor& ga = grad_buf(pa);
          for (std::size_t t = 0; t < g.size(); ++t) ga[t] += g[t] * n.k;
        }
        break;
      }
      case Op::Relu: {
        if (need_a) {
          Tensor& ga = grad_buf(pa);
          for (std::size_t t = 0; t < g.size(); ++t)
            if (A[t] > 0.0) ga[t] += g[t];
        }
        break;
      }
      case Op::Sigmoid: {
        if (need_a) {
          Tensor& ga = grad_buf(pa);
          for (std::size_t t = 0; t < g.size(); ++t)
            ga[t] += g[t] * v[t] * (1.0 - v[t]);
        }
        break;
      }
      case Op::Tanh: {
        if (need_a) {
          Tensor& ga = grad_buf(pa);
          for (std::size_t t = 0; t < g.size(); ++t)
            ga[t] += g[t] * (1.0 - v[t] * v[t]);
        }
        break;
      }
      case Op::Exp: {
        if (need_a) {
          Tensor& ga = grad_buf(pa);
          for (std::size_t t = 0; t < g.size(); ++t) ga[t] += g[t] * v[t];
        }
        break;
      }
      case Op::Log: {
        if (need_a) {
          Tensor& ga = grad_buf(pa);
          for (std::size_t t = 0; t < g.size(); ++t)
            ga[t] += g[t] / std::max(A[t], kLogFloor);
        }
        break;
      }
      case Op::Abs: {
        if (need_a) {
          Tensor& ga = grad_buf(pa);
          for (std::size_t t = 0; t < g.size(); ++t) {
            if (A[t] > 0.0) ga[t] += g[t];
            else if (A[t] < 0.0) ga[t] -= g[t];
          }
        }
        break;
      }
      case Op::Sum: {
        if (need_a) {
          Tensor& ga = grad_buf(pa);
          for (std::size_t t = 0; t < ga.size(); ++t) ga[t] += g[0];
        }
        break;
      }
      case Op::Mean: {
        if (need_a) {
          Tensor& ga = grad_buf(pa);
          double s = g[0] / static_cast<double>(A.size());
          for (std::size_t t = 0; t < ga.size(); ++t) ga[t] += s;
        }
        break;
      }
      case Op::SoftmaxRows: {
        if (need_a) {
          Tensor& ga = grad_buf(pa);
          int nrows = v.rank() == 2 ? v.rows() : 1;
          int ncols = v.rank() == 2 ? v.cols() : v.shape()[0];
          for (int r = 0; r < nrows; ++r) {
            const double* y = v.data() + static_cast<std::size_t>(r) * ncols;
            const double* gr = g.data() + static_cast<std::size_t>(r) * ncols;
            double dot = 0.0;
            for (int c = 0; c < ncols; ++c) dot += gr[c] * y[c];
            double* out = ga.data() + static_cast<std::size_t>(r) * ncols;
            for (int c = 0; c < ncols; ++c) out[c] += y[c] * (gr[c] - dot);
          }
        }
        break;
      }
      case Op::ConcatRows: {
        const Tensor& B = nodes_[pb].value;
        if (need_a) {
          Tensor& ga = grad_buf(pa);
          for (std::size_t t = 0; t < A.size(); ++t) ga[t] += g[t];
        }
        if (need_b) {
          Tensor& gb = grad_buf(pb);
          for (std::size_t t = 0; t < B.size(); ++t) gb[t] += g[A.size() + t];
        }
        break;
      }
      case Op::ConcatCols: {
        const Tensor& B = nodes_[pb].value;
        int nr = A.rows(), ca = A.cols(), cb = B.cols();
        if (need_a) {
          Tensor& ga = grad_buf(pa);
          for (int r = 0; r < nr; ++r)
            for (int c = 0; c < ca; ++c) ga.at(r, c) += g.at(r, c);
        }
        if (need_b) {
          Tensor& gb = grad_buf(pb);
          for (int r = 0; r < nr; ++r)
            for (int c = 0; c < cb; ++c) gb.at(r, c) += g.at(r, ca + c);
        }
        break;
      }
      case Op::SliceRows: {
        if (need_a) {
          Tensor& ga = grad_buf(pa);
          int cols = A.cols();
          for (int r = n.a0; r < n.a1; ++r)
            for (int c = 0; c < cols; ++c) ga.at(r, c) += g.at(r - n.a0, c);
        }
        break;
      }
      case Op::SliceCols: {
        if (need_a) {
          Tensor& ga = grad_buf(pa);
          for (int r = 0; r < A.rows(); ++r)
            for (int c = n.a0; c < n.a1; ++c) ga.at(r, c) += g.at(r, c - n.a0);
        }
        break;
      }
      case Op::Leaf:
        break;
    }
  }

  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (local[i].size() == 0) continue;
    if (grads_[i].size() == 0) {
      grads_[i] = std::move(local[i]);
    } else {
      for (std::size_t k = 0; k < grads_[i].size(); ++k) {
        grads_[i][k] += local[i][k];
      }
    }
  }
}

double finite_diff_check(const std::function<NodeId(Tape&, NodeId)>& build,
                         const Tensor& params, double step) {
  if (step <= 0.0) throw std::invalid_argument("finite_diff_check: step <= 0");

  auto eval = [&](const Tensor& p) {
    Tape tape;
    NodeId leaf = tape.leaf(p, true);
    NodeId root = build(tape, leaf);
    double v = tape.value(root)[0];
    if (!std::isfinite(v)) {
      throw std::runtime_error("finite_diff_check: non-finite function value");
    }
    return v;
  };

  Tape tape;
  NodeId leaf = tape.leaf(params, true);
  NodeId root = build(tape, leaf);
  if (!std::isfinite(tape.value(root)[0])) {
    throw std::runtime_error("finite_diff_check: non-finite function value");
  }
  tape.backward(root);
  Tensor analytic = tape.grad(leaf);

  double max_err = 0.0;
  Tensor probe = params;
  for (std::size_t i = 0; i < params.size(); ++i) {
    double orig = probe[i];
    probe[i] = orig + step;
    double fp = eval(probe);
    probe[i] = orig - step;
    double fm = eval(probe);
    probe[i] = orig;
    double numeric = (fp - fm) / (2.0 * step);
    double err =
        std::fabs(analytic[i] - numeric) / std::max(1.0, std::fabs(analytic[i]));
    max_err = std::max(max_err, err);
  }
  return max_err;
}

}  // namespace mtl
