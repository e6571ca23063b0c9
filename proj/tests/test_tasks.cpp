// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mtl/tasks.hpp"

using namespace mtl;

namespace {

TaskSpec mse_spec() {
  TaskSpec s;
  s.name = "reg";
  return s;
}

TaskSpec ce_spec(int classes) {
  TaskSpec s;
  s.name = "cls";
  s.loss = LossKind::CrossEntropy;
  s.metric = MetricKind::Accuracy;
  s.higher_is_better = true;
  s.output_dim = classes;
  return s;
}

}  // namespace

TEST_CASE("mse of exact predictions is zero") {
  Tape t;
  Tensor y = Tensor::matrix(2, 1, {0.5, -1.0});
  NodeId pred = t.leaf(y);
  NodeId loss = compute_loss(t, mse_spec(), pred, y);
  CHECK(t.value(loss)[0] == 0.0);
}

TEST_CASE("cross entropy of uniform logits is ln 2") {
  Tape t;
  NodeId pred = t.leaf(Tensor::matrix(1, 2, {0.0, 0.0}));
  NodeId loss = compute_loss(t, ce_spec(2), pred, Tensor::matrix(1, 1, {0.0}));
  CHECK(t.value(loss)[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("l1 loss is the mean absolute error") {
  Tape t;
  TaskSpec s = mse_spec();
  s.loss = LossKind::L1;
  NodeId pred = t.leaf(Tensor::matrix(1, 2, {1.0, -1.0}));
  NodeId loss = compute_loss(t, s, pred, Tensor::matrix(1, 2, {0.0, 0.0}));
  CHECK(t.value(loss)[0] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("losses are nonnegative and zero only at exact match") {
  Tape t;
  Tensor y = Tensor::matrix(2, 1, {0.5, -1.0});
  Tensor off = y;
  off[0] += 0.25;
  for (LossKind k : {LossKind::Mse, LossKind::L1}) {
    TaskSpec s = mse_spec();
    s.loss = k;
    NodeId exact = compute_loss(t, s, t.leaf(y), y);
    NodeId moved = compute_loss(t, s, t.leaf(off), y);
    CHECK(t.value(exact)[0] == 0.0);
    CHECK(t.value(moved)[0] > 0.0);
  }
}

TEST_CASE("cross entropy is shift invariant per row") {
  Tape t;
  Tensor base = Tensor::matrix(2, 3, {0.1, 0.7, -0.3, 1.0, -1.0, 0.2});
  Tensor shifted = base;
  for (int j = 0; j < 3; ++j) shifted.at(0, j) += 5.0;
  for (int j = 0; j < 3; ++j) shifted.at(1, j) -= 11.0;
  Tensor tgt = Tensor::matrix(2, 1, {2.0, 0.0});
  NodeId a = compute_loss(t, ce_spec(3), t.leaf(base), tgt);
  NodeId b = compute_loss(t, ce_spec(3), t.leaf(shifted), tgt);
  CHECK(t.value(a)[0] == doctest::Approx(t.value(b)[0]).epsilon(1e-10));
}

TEST_CASE("accuracy with a perfect argmax is 1") {
  Tensor pred = Tensor::matrix(2, 3, {9, 0, 0, 0, 0, 9});
  Tensor tgt = Tensor::matrix(2, 1, {0.0, 2.0});
  CHECK(compute_metric(ce_spec(3), pred, tgt) == 1.0);
}

TEST_CASE("mae of a constant offset") {
  TaskSpec s = mse_spec();
  s.metric = MetricKind::Mae;
  Tensor pred = Tensor::matrix(2, 1, {3.0, -1.0});
  Tensor tgt = Tensor::matrix(2, 1, {1.0, -3.0});
  CHECK(compute_metric(s, pred, tgt) == doctest::Approx(2.0));
}

TEST_CASE("accuracy tie breaks toward the lowest index") {
  Tensor pred = Tensor::matrix(1, 2, {0.0, 0.0});
  CHECK(compute_metric(ce_spec(2), pred, Tensor::matrix(1, 1, {0.0})) == 1.0);
  CHECK(compute_metric(ce_spec(2), pred, Tensor::matrix(1, 1, {1.0})) == 0.0);
}

TEST_CASE("spec validation names the constraint") {
  TaskSpec s = ce_spec(1);
  CHECK_THROWS_WITH_AS(s.validate(),
                       doctest::Contains("cross_entropy requires output_dim"),
                       std::invalid_argument);
  TaskSpec a = mse_spec();
  a.metric = MetricKind::Accuracy;
  CHECK_THROWS_WITH_AS(a.validate(),
                       doctest::Contains("accuracy requires cross_entropy"),
                       std::invalid_argument);
}

TEST_CASE("shape mismatches and bad class indices are rejected") {
  Tape t;
  NodeId pred = t.leaf(Tensor::matrix(2, 1, {0.0, 0.0}));
  CHECK_THROWS_AS(
      compute_loss(t, mse_spec(), pred, Tensor::matrix(3, 1, {0, 0, 0})),
      std::invalid_argument);
  NodeId logits = t.leaf(Tensor::matrix(1, 2, {0.0, 0.0}));
  CHECK_THROWS_AS(
      compute_loss(t, ce_spec(2), logits, Tensor::matrix(1, 1, {2.0})),
      std::invalid_argument);
}

TEST_CASE("cross entropy gradient matches finite differences") {
  Tensor logits = Tensor::matrix(2, 3, {0.3, -0.4, 0.9, 0.0, 0.2, -1.0});
  Tensor tgt = Tensor::matrix(2, 1, {1.0, 2.0});
  auto build = [&](Tape& t, NodeId p) {
    return compute_loss(t, ce_spec(3), p, tgt);
  };
  CHECK(finite_diff_check(build, logits, 1e-4) < 1e-6);
}
