// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mtl/rng.hpp"
#include "mtl/tensor.hpp"

using namespace mtl;

TEST_CASE("relu forward matches definition") {
  Tape t;
  NodeId x = t.leaf(Tensor::vector({-1.0, 0.0, 2.0}));
  NodeId r = t.relu(x);
  CHECK(t.value(r)[0] == 0.0);
  CHECK(t.value(r)[1] == 0.0);
  CHECK(t.value(r)[2] == 2.0);
}

TEST_CASE("softmax of equal logits is uniform") {
  Tape t;
  NodeId x = t.leaf(Tensor::vector({0.0, 0.0}));
  NodeId s = t.softmax_rows(x);
  CHECK(t.value(s)[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(t.value(s)[1] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("matmul hand arithmetic") {
  Tape t;
  NodeId a = t.leaf(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  NodeId b = t.leaf(Tensor::matrix(2, 1, {1, 1}));
  NodeId c = t.matmul(a, b);
  CHECK(t.value(c).at(0, 0) == 3.0);
  CHECK(t.value(c).at(1, 0) == 7.0);
}

TEST_CASE("matmul shape mismatch names the op and shapes") {
  Tape t;
  NodeId a = t.leaf(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  NodeId b = t.leaf(Tensor::matrix(4, 1, {1, 1, 1, 1}));
  CHECK_THROWS_WITH_AS(t.matmul(a, b), doctest::Contains("matmul"),
                       std::invalid_argument);
}

TEST_CASE("backward of sum of squares") {
  Tape t;
  NodeId x = t.leaf(Tensor::vector({3.0}), true);
  NodeId root = t.sum(t.mul(x, x));
  t.backward(root);
  CHECK(t.grad(x)[0] == doctest::Approx(6.0).epsilon(1e-15));
}

TEST_CASE("backward of sigmoid at zero") {
  Tape t;
  NodeId x = t.leaf(Tensor::vector({0.0}), true);
  NodeId root = t.sum(t.sigmoid(x));
  t.backward(root);
  CHECK(t.grad(x)[0] == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("backward requires a scalar root") {
  Tape t;
  NodeId x = t.leaf(Tensor::vector({1.0, 2.0}), true);
  NodeId y = t.relu(x);
  CHECK_THROWS_AS(t.backward(y), std::invalid_argument);
}

TEST_CASE("detached root leaves all gradients zero") {
  Tape t;
  NodeId x = t.leaf(Tensor::vector({1.0, 2.0}), false);
  NodeId root = t.sum(t.mul(x, x));
  t.backward(root);
  CHECK(t.grad(x)[0] == 0.0);
  CHECK(t.grad(x)[1] == 0.0);
}

TEST_CASE("backward twice without reset accumulates exactly 2x") {
  Tape t;
  NodeId x = t.leaf(Tensor::vector({1.5, -0.5}), true);
  NodeId root = t.sum(t.mul(x, x));
  t.backward(root);
  Tensor once = t.grad(x);
  t.backward(root);
  Tensor twice = t.grad(x);
  for (std::size_t i = 0; i < once.size(); ++i) {
    CHECK(twice[i] == doctest::Approx(2.0 * once[i]).epsilon(1e-15));
  }
}

TEST_CASE("finite_diff_check: linear function has zero error") {
  auto build = [](Tape& t, NodeId p) { return t.sum(p); };
  Tensor x = Tensor::vector({0.1, -0.2, 0.3});
  CHECK(finite_diff_check(build, x, 1e-2) < 1e-12);
}

TEST_CASE("finite_diff_check: sum(exp(x)) at x=0") {
  auto build = [](Tape& t, NodeId p) { return t.sum(t.exp_(p)); };
  Tensor x = Tensor::vector({0.0});
  CHECK(finite_diff_check(build, x, 1e-4) < 1e-8);
}

TEST_CASE("finite_diff_check rejects non-positive step") {
  auto build = [](Tape& t, NodeId p) { return t.sum(p); };
  CHECK_THROWS_AS(finite_diff_check(build, Tensor::vector({1.0}), 0.0),
                  std::invalid_argument);
}

TEST_CASE("three-layer MLP gradients match finite differences") {
  Rng rng(99);
  int d = 4, h = 8;
  Tensor x = Tensor::zeros({16, d});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.normal();
  Tensor y = Tensor::zeros({16, 1});
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = rng.normal();

  // W1(4x8) b1(8) W2(8x8) b2(8) W3(8x1) b3(1), one leaf per piece; each
  // piece is swept with the central-difference oracle in turn.
  auto rand_tensor = [&](std::vector<int> shape) {
    Tensor m = Tensor::zeros(shape);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform(-0.7, 0.7);
    return m;
  };
  std::vector<Tensor> ps = {rand_tensor({d, h}), rand_tensor({h}),
                            rand_tensor({h, h}), rand_tensor({h}),
                            rand_tensor({h, 1}), rand_tensor({1})};

  double worst = 0.0;
  for (int pi = 0; pi < 6; ++pi) {
    auto build_one = [&](Tape& t, NodeId leaf) {
      std::vector<NodeId> leaves(6);
      for (int q = 0; q < 6; ++q) {
        leaves[q] = q == pi ? leaf : t.leaf(ps[q]);
      }
      NodeId xn = t.leaf(x);
      NodeId h1 = t.relu(t.add(t.matmul(xn, leaves[0]), leaves[1]));
      NodeId h2 = t.relu(t.add(t.matmul(h1, leaves[2]), leaves[3]));
      NodeId out = t.add(t.matmul(h2, leaves[4]), leaves[5]);
      NodeId diff = t.sub(out, t.leaf(y));
      return t.mean(t.mul(diff, diff));
    };
    worst = std::max(worst, finite_diff_check(build_one, ps[pi], 1e-4));
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("backward is linear in the root combination") {
  Rng rng(7);
  Tensor x = Tensor::zeros({6});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(-1.0, 1.0);
  double a = 1.7, b = -0.6;

  auto grad_of = [&](int which) {
    Tape t;
    NodeId xn = t.leaf(x, true);
    NodeId f = t.sum(t.sigmoid(xn));
    NodeId g = t.mean(t.mul(xn, xn));
    NodeId root;
    if (which == 0) {
      root = f;
    } else if (which == 1) {
      root = g;
    } else {
      root = t.add(t.scalar_mul(f, a), t.scalar_mul(g, b));
    }
    t.backward(root);
    return t.grad(xn);
  };
  Tensor gf = grad_of(0), gg = grad_of(1), gc = grad_of(2);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(gc[i] == doctest::Approx(a * gf[i] + b * gg[i]).epsilon(1e-12));
  }
}

TEST_CASE("identical op sequences are bit-identical") {
  auto run = [](uint64_t seed) {
    Rng rng(seed);
    Tensor x = Tensor::zeros({4, 3});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.normal();
    Tape t;
    NodeId xn = t.leaf(x, true);
    NodeId r = t.mean(t.sigmoid(t.matmul(xn, t.leaf(Tensor::matrix(
                                                 3, 2, {1, 2, 3, 4, 5, 6})))));
    t.backward(r);
    auto g = t.grad(xn);
    return std::make_pair(t.value(r)[0], g);
  };
  auto [v1, g1] = run(5);
  auto [v2, g2] = run(5);
  CHECK(v1 == v2);
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == g2[i]);
}

TEST_CASE("log clamps its floor and exp caps its input") {
  Tape t;
  NodeId z = t.log_(t.leaf(Tensor::vector({0.0})));
  CHECK(t.value(z)[0] == doctest::Approx(std::log(1e-12)));
  NodeId e = t.exp_(t.leaf(Tensor::vector({1e6})));
  CHECK(std::isfinite(t.value(e)[0]));
}

TEST_CASE("stop_at blocks propagation past a node") {
  Tape t;
  NodeId x = t.leaf(Tensor::vector({2.0}), true);
  NodeId mid = t.mul(x, x);      // x^2
  NodeId root = t.sum(t.mul(mid, mid));  // x^4
  std::vector<NodeId> stop = {mid};
  t.backward(root, stop);
  CHECK(t.grad(mid)[0] == doctest::Approx(2.0 * 4.0));  // d(m^2)/dm = 2m = 8
  CHECK(t.grad(x)[0] == 0.0);
}

TEST_CASE("slice and concat round-trip values") {
  Tape t;
  NodeId a = t.leaf(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  NodeId b = t.leaf(Tensor::matrix(2, 1, {9, 9}));
  NodeId cat = t.concat_cols(a, b);
  CHECK(t.value(cat).at(0, 2) == 9.0);
  NodeId back = t.slice_cols(cat, 0, 2);
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      CHECK(t.value(back).at(i, j) == t.value(a).at(i, j));
    }
  }
  NodeId rows = t.concat_rows(a, a);
  CHECK(t.value(rows).rows() == 4);
  CHECK(t.value(t.slice_rows(rows, 2, 4)).at(1, 1) == 4.0);
}
