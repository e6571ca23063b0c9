// SPDX-License-Identifier: Apache-2.0

#include "mtl/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "mtl/rng.hpp"
#include "mtl/tensor.hpp"
#include "mtl/weighting.hpp"

namespace mtl::verify {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

GradientBundle random_bundle(Rng& rng, int tasks, int dim,
                             GradMode mode = GradMode::ParamGrad) {
  GradientBundle b;
  b.tasks = tasks;
  b.dim = dim;
  b.mode = mode;
  b.grads.resize(static_cast<std::size_t>(tasks) * dim);
  for (double& v : b.grads) v = rng.normal();
  b.task_losses.resize(tasks);
  for (double& v : b.task_losses) v = 0.1 + rng.uniform01() * 2.0;
  return b;
}

Tensor random_tensor(Rng& rng, const std::vector<int>& shape, double lo,
                     double hi) {
  Tensor t = Tensor::zeros(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

/// Keeps relu/abs inputs away from their kink so central differences are
/// trustworthy.
Tensor kink_safe(Tensor t) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (std::fabs(t[i]) < 0.1) t[i] = t[i] < 0.0 ? t[i] - 0.1 : t[i] + 0.1;
  }
  return t;
}

}  // namespace

std::vector<PropertyResult> check_autodiff(uint64_t seed, int graphs_per_op) {
  struct OpCase {
    Op op;
    const char* name;
  };
  static const OpCase cases[] = {
      {Op::Matmul, "matmul"},       {Op::Add, "add"},
      {Op::Sub, "sub"},             {Op::Mul, "mul"},
      {Op::ScaleRows, "scale_rows"}, {Op::ScaleAll, "scale_all"},
      {Op::ScalarMul, "scalar_mul"}, {Op::Relu, "relu"},
      {Op::Sigmoid, "sigmoid"},     {Op::Tanh, "tanh"},
      {Op::Exp, "exp"},             {Op::Log, "log"},
      {Op::Abs, "abs"},             {Op::Sum, "sum"},
      {Op::Mean, "mean"},           {Op::SoftmaxRows, "softmax_rows"},
      {Op::ConcatRows, "concat_rows"}, {Op::ConcatCols, "concat_cols"},
      {Op::SliceRows, "slice_rows"}, {Op::SliceCols, "slice_cols"},
  };

  std::vector<PropertyResult> out;
  for (const OpCase& oc : cases) {
    Rng rng(derive_seed(seed, static_cast<uint64_t>(oc.op) + 17));
    PropertyResult res;
    res.name = std::string("gradcheck/") + oc.name;
    res.samples = graphs_per_op;
    double worst = 0.0;
    for (int g = 0; g < graphs_per_op; ++g) {
      int rows = 2 + rng.uniform_int(3);
      int cols = 2 + rng.uniform_int(3);
      Tensor params;
      std::function<NodeId(Tape&, NodeId)> build;

      switch (oc.op) {
        case Op::Matmul: {
          bool left = g % 2 == 0;
          int k = 1 + rng.uniform_int(3);
          Tensor c = random_tensor(rng, left ? std::vector<int>{cols, k}
                                             : std::vector<int>{k, rows},
                                   -1.5, 1.5);
          params = random_tensor(rng, {rows, cols}, -1.5, 1.5);
          build = [c, left](Tape& t, NodeId p) {
            NodeId cn = t.leaf(c);
            NodeId m = left ? t.matmul(p, cn) : t.matmul(cn, p);
            return t.mean(t.sigmoid(m));
          };
          break;
        }
        case Op::Add:
        case Op::Sub:
        case Op::Mul: {
          bool bias = oc.op == Op::Add && g % 3 == 0;
          Tensor c = bias ? random_tensor(rng, {cols}, -1.5, 1.5)
                          : random_tensor(rng, {rows, cols}, -1.5, 1.5);
          params = random_tensor(rng, {rows, cols}, -1.5, 1.5);
          Op op = oc.op;
          build = [c, op](Tape& t, NodeId p) {
            NodeId cn = t.leaf(c);
            NodeId r = t.apply(op, std::array<NodeId, 2>{p, cn});
            return t.mean(t.sigmoid(r));
          };
          break;
        }
        case Op::ScaleRows: {
          bool as_matrix = g % 2 == 0;
          if (as_matrix) {
            Tensor c = random_tensor(rng, {rows}, -1.5, 1.5);
            params = random_tensor(rng, {rows, cols}, -1.5, 1.5);
            build = [c](Tape& t, NodeId p) {
              return t.mean(t.sigmoid(t.scale_rows(p, t.leaf(c))));
            };
          } else {
            Tensor c = random_tensor(rng, {rows, cols}, -1.5, 1.5);
            params = random_tensor(rng, {rows}, -1.5, 1.5);
            build = [c](Tape& t, NodeId p) {
              return t.mean(t.sigmoid(t.scale_rows(t.leaf(c), p)));
            };
          }
          break;
        }
        case Op::ScaleAll: {
          bool as_matrix = g % 2 == 0;
          if (as_matrix) {
            Tensor c = random_tensor(rng, {1}, -1.5, 1.5);
            params = random_tensor(rng, {rows, cols}, -1.5, 1.5);
            build = [c](Tape& t, NodeId p) {
              return t.mean(t.sigmoid(t.scale_all(p, t.leaf(c))));
            };
          } else {
            Tensor c = random_tensor(rng, {rows, cols}, -1.5, 1.5);
            params = random_tensor(rng, {1}, -1.5, 1.5);
            build = [c](Tape& t, NodeId p) {
              return t.mean(t.sigmoid(t.scale_all(t.leaf(c), p)));
            };
          }
          break;
        }
        case Op::ScalarMul: {
          double k = rng.uniform(-2.0, 2.0);
          params = random_tensor(rng, {rows, cols}, -1.5, 1.5);
          build = [k](Tape& t, NodeId p) {
            return t.mean(t.sigmoid(t.scalar_mul(p, k)));
          };
          break;
        }
        case Op::Relu:
        case Op::Abs: {
          params = kink_safe(random_tensor(rng, {rows, cols}, -1.5, 1.5));
          Tensor c = random_tensor(rng, {rows, cols}, -1.5, 1.5);
          Op op = oc.op;
          build = [op, c](Tape& t, NodeId p) {
            NodeId r = t.apply(op, std::array<NodeId, 1>{p});
            return t.mean(t.mul(r, t.leaf(c)));
          };
          break;
        }
        case Op::Sigmoid:
        case Op::Tanh:
        case Op::Exp: {
          params = random_tensor(rng, {rows, cols}, -1.5, 1.5);
          Tensor c = random_tensor(rng, {rows, cols}, -1.5, 1.5);
          Op op = oc.op;
          build = [op, c](Tape& t, NodeId p) {
            NodeId r = t.apply(op, std::array<NodeId, 1>{p});
            return t.mean(t.mul(r, t.leaf(c)));
          };
          break;
        }
        case Op::Log: {
          params = random_tensor(rng, {rows, cols}, 0.5, 3.0);
          Tensor c = random_tensor(rng, {rows, cols}, -1.5, 1.5);
          build = [c](Tape& t, NodeId p) {
            return t.mean(t.mul(t.log_(p), t.leaf(c)));
          };
          break;
        }
        case Op::Sum:
        case Op::Mean: {
          params = random_tensor(rng, {rows, cols}, -1.5, 1.5);
          Op op = oc.op;
          build = [op](Tape& t, NodeId p) {
            return t.apply(op, std::array<NodeId, 1>{t.sigmoid(p)});
          };
          break;
        }
        case Op::SoftmaxRows: {
          params = random_tensor(rng, {rows, cols}, -2.0, 2.0);
          Tensor c = random_tensor(rng, {rows, cols}, -1.5, 1.5);
          build = [c](Tape& t, NodeId p) {
            return t.mean(t.mul(t.softmax_rows(p), t.leaf(c)));
          };
          break;
        }
        case Op::ConcatRows:
        case Op::ConcatCols: {
          bool first = g % 2 == 0;
          Tensor c = random_tensor(rng, {rows, cols}, -1.5, 1.5);
          params = random_tensor(rng, {rows, cols}, -1.5, 1.5);
          Op op = oc.op;
          build = [op, c, first](Tape& t, NodeId p) {
            NodeId cn = t.leaf(c);
            NodeId r = first ? t.apply(op, std::array<NodeId, 2>{p, cn})
                             : t.apply(op, std::array<NodeId, 2>{cn, p});
            return t.mean(t.sigmoid(r));
          };
          break;
        }
        case Op::SliceRows: {
          params = random_tensor(rng, {rows, cols}, -1.5, 1.5);
          int r0 = rng.uniform_int(rows - 1);
          int r1 = r0 + 1 + rng.uniform_int(rows - r0 - 1) + 1;
          r1 = std::min(r1, rows);
          build = [r0, r1](Tape& t, NodeId p) {
            return t.mean(t.sigmoid(t.slice_rows(p, r0, r1)));
          };
          break;
        }
        case Op::SliceCols: {
          params = random_tensor(rng, {rows, cols}, -1.5, 1.5);
          int c0 = rng.uniform_int(cols - 1);
          int c1 = c0 + 1 + rng.uniform_int(cols - c0 - 1) + 1;
          c1 = std::min(c1, cols);
          build = [c0, c1](Tape& t, NodeId p) {
            return t.mean(t.sigmoid(t.slice_cols(p, c0, c1)));
          };
          break;
        }
        case Op::Leaf:
          continue;
      }
      worst = std::max(worst, finite_diff_check(build, params, 1e-4));
    }
    res.max_error = worst;
    res.pass = worst < 1e-5;
    out.push_back(std::move(res));
  }
  return out;
}

PropertyResult check_mgda_grid(uint64_t seed, int bundles, double grid_step) {
  Rng rng(derive_seed(seed, 21));
  PropertyResult res{"mgda/grid_oracle", bundles, 0.0, false};
  double worst = -1e300;
  for (int i = 0; i < bundles; ++i) {
    int dim = 1 + rng.uniform_int(8);
    GradientBundle b = random_bundle(rng, 2, dim);
    MinNormResult mn = min_norm_point(b);
    double solver_sq = dot(mn.point, mn.point);

    double grid_min = 1e300;
    std::vector<double> d(dim);
    for (double g = 0.0; g <= 1.0 + 1e-12; g += grid_step) {
      for (int k = 0; k < dim; ++k) {
        d[k] = g * b.row(0)[k] + (1.0 - g) * b.row(1)[k];
      }
      grid_min = std::min(grid_min, dot(d, d));
    }
    worst = std::max(worst, solver_sq - grid_min);
  }
  res.max_error = worst;
  res.pass = worst <= 1e-6;
  return res;
}

PropertyResult check_pcgrad_postcondition(uint64_t seed, int bundles) {
  Rng rng(derive_seed(seed, 22));
  PropertyResult res{"pcgrad/postcondition", bundles, 0.0, false};
  double worst = 0.0;
  for (int i = 0; i < bundles; ++i) {
    int tasks = 2 + rng.uniform_int(3);
    int dim = 2 + rng.uniform_int(7);
    GradientBundle b = random_bundle(rng, tasks, dim);
    PcgradOutcome pc = pcgrad_adjust(b, rng);
    // last projection target per row
    std::vector<int> last(tasks, -1);
    for (const auto& [pi, pj] : pc.projections) last[pi] = pj;
    for (int t = 0; t < tasks; ++t) {
      if (last[t] < 0) continue;
      std::span<const double> gi{
          pc.adjusted.data() + static_cast<std::size_t>(t) * dim,
          static_cast<std::size_t>(dim)};
      double d = dot(gi, b.row(last[t]));
      worst = std::max(worst, -d);
    }
  }
  res.max_error = worst;
  res.pass = worst <= 1e-8;
  return res;
}

PropertyResult check_imtl_spread(uint64_t seed, int bundles) {
  Rng rng(derive_seed(seed, 23));
  PropertyResult res{"imtl/equal_projection", bundles, 0.0, false};
  double worst = 0.0;
  bool fallback_ok = true;
  for (int i = 0; i < bundles; ++i) {
    int tasks = 2 + rng.uniform_int(3);
    int dim = tasks + 1 + rng.uniform_int(6);
    GradientBundle b = random_bundle(rng, tasks, dim);
    WeightingState st = WeightingState::make(WeightingKind::IMTL, tasks, seed);
    AggregationResult r = imtl_g(b, st);
    if (r.diagnostics.count("imtl_fallback")) continue;  // degenerate draw
    double lo = 1e300, hi = -1e300;
    for (int t = 0; t < tasks; ++t) {
      auto row = b.row(t);
      double p = std::fabs(dot(r.direction, row) / norm2(row));
      lo = std::min(lo, p);
      hi = std::max(hi, p);
    }
    worst = std::max(worst, hi - lo);
  }
  // Degenerate input must take the EW fallback and set the flag.
  {
    GradientBundle b;
    b.tasks = 2;
    b.dim = 3;
    b.grads = {1.0, 2.0, 3.0, 2.0, 4.0, 6.0};  // parallel rows
    b.task_losses = {1.0, 1.0};
    WeightingState st = WeightingState::make(WeightingKind::IMTL, 2, seed);
    AggregationResult r = imtl_g(b, st);
    if (!r.diagnostics.count("imtl_fallback")) fallback_ok = false;
    for (int k = 0; k < 3; ++k) {
      double expect = 0.5 * (b.grads[k] + b.grads[3 + k]);
      if (std::fabs(r.direction[k] - expect) > 1e-12) fallback_ok = false;
    }
  }
  res.max_error = worst;
  res.pass = worst <= 1e-8 && fallback_ok;
  return res;
}

PropertyResult check_gradvac_postcosine(uint64_t seed, int bundles) {
  Rng rng(derive_seed(seed, 24));
  PropertyResult res{"gradvac/post_cosine", bundles, 0.0, false};
  double worst = 0.0;
  long long fired_total = 0;
  for (int i = 0; i < bundles; ++i) {
    int tasks = 2 + rng.uniform_int(3);
    int dim = 2 + rng.uniform_int(7);
    GradientBundle b = random_bundle(rng, tasks, dim);

    WeightingState st = WeightingState::make(WeightingKind::GradVac, tasks,
                                             derive_seed(seed, 1000 + i));
    for (int a = 0; a < tasks; ++a) {
      for (int c = 0; c < tasks; ++c) {
        if (a != c) st.ema_at(a, c) = rng.uniform(-0.9, 0.9);
      }
    }

    // Each firing adjustment reports the row snapshot; the cosine against
    // the original target row is recomputed here.
    GradvacOutcome out = gradvac_adjust(b, st);
    for (const auto& f : out.fires) {
      auto gj = b.row(f.j);
      double post =
          dot(f.row_after, gj) / (norm2(f.row_after) * norm2(gj));
      worst = std::max(worst, std::fabs(post - f.target));
      ++fired_total;
    }
  }
  res.samples = fired_total;
  res.max_error = worst;
  res.pass = fired_total > 0 && worst <= 1e-9;
  return res;
}

PropertyResult check_cagrad_monotone(uint64_t seed, int bundles) {
  Rng rng(derive_seed(seed, 25));
  PropertyResult res{"cagrad/monotone_objective", bundles, 0.0, false};
  double worst = 0.0;
  for (int i = 0; i < bundles; ++i) {
    int tasks = 2 + rng.uniform_int(3);
    int dim = 2 + rng.uniform_int(7);
    GradientBundle b = random_bundle(rng, tasks, dim);
    double c = rng.uniform(0.0, 1.0);
    CagradInner inner = cagrad_inner_solve(b, c);
    for (std::size_t k = 1; k < inner.objective_trace.size(); ++k) {
      worst = std::max(worst,
                       inner.objective_trace[k] - inner.objective_trace[k - 1]);
    }
  }
  res.max_error = std::max(worst, 0.0);
  res.pass = worst <= 0.0;
  return res;
}

PropertyResult check_cagrad_c0(uint64_t seed, int bundles) {
  Rng rng(derive_seed(seed, 26));
  PropertyResult res{"cagrad/c0_equals_ew", bundles, 0.0, false};
  double worst = 0.0;
  for (int i = 0; i < bundles; ++i) {
    int tasks = 2 + rng.uniform_int(3);
    int dim = 2 + rng.uniform_int(7);
    GradientBundle b = random_bundle(rng, tasks, dim);
    WeightingHyperparams hp;
    hp.cagrad_c = 0.0;
    WeightingState st =
        WeightingState::make(WeightingKind::CAGrad, tasks, seed, hp);
    AggregationResult ca = cagrad(b, st);
    AggregationResult e = ew(b);
    for (int k = 0; k < dim; ++k) {
      worst = std::max(worst, std::fabs(ca.direction[k] - e.direction[k]));
    }
  }
  res.max_error = worst;
  res.pass = worst <= 1e-10;
  return res;
}

PropertyResult check_simplex_projection(uint64_t seed, int points,
                                        double grid_step) {
  Rng rng(derive_seed(seed, 27));
  PropertyResult res{"simplex/brute_force_grid", points, 0.0, false};
  double worst = 0.0;
  for (int i = 0; i < points; ++i) {
    int tasks = 2 + (i % 2);  // alternate T=2 and T=3
    std::vector<double> v(tasks);
    for (double& x : v) x = rng.uniform(-2.0, 2.0);
    std::vector<double> proj = project_to_simplex(v);

    auto dist2 = [&](const std::vector<double>& w) {
      double s = 0.0;
      for (int k = 0; k < tasks; ++k) s += (w[k] - v[k]) * (w[k] - v[k]);
      return s;
    };
    std::vector<double> best;
    double best_d = 1e300;
    if (tasks == 2) {
      for (double a = 0.0; a <= 1.0 + 1e-12; a += grid_step) {
        std::vector<double> w = {a, 1.0 - a};
        double d = dist2(w);
        if (d < best_d) {
          best_d = d;
          best = w;
        }
      }
    } else {
      for (double a = 0.0; a <= 1.0 + 1e-12; a += grid_step) {
        for (double bb = 0.0; bb <= 1.0 - a + 1e-12; bb += grid_step) {
          std::vector<double> w = {a, bb, 1.0 - a - bb};
          double d = dist2(w);
          if (d < best_d) {
            best_d = d;
            best = w;
          }
        }
      }
    }
    double diff = 0.0;
    for (int k = 0; k < tasks; ++k) {
      diff += (proj[k] - best[k]) * (proj[k] - best[k]);
    }
    worst = std::max(worst, std::sqrt(diff));
  }
  res.max_error = worst;
  res.pass = worst <= 2e-3;
  return res;
}

std::vector<PropertyResult> run_all(uint64_t seed) {
  std::vector<PropertyResult> out = check_autodiff(seed);
  out.push_back(check_mgda_grid(seed));
  out.push_back(check_pcgrad_postcondition(seed));
  out.push_back(check_imtl_spread(seed));
  out.push_back(check_gradvac_postcosine(seed));
  out.push_back(check_cagrad_monotone(seed));
  out.push_back(check_cagrad_c0(seed));
  out.push_back(check_simplex_projection(seed));
  return out;
}

bool all_pass(const std::vector<PropertyResult>& results) {
  return std::all_of(results.begin(), results.end(),
                     [](const PropertyResult& r) { return r.pass; });
}

std::string format_lines(const std::vector<PropertyResult>& results) {
  std::ostringstream os;
  for (const PropertyResult& r : results) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-28s samples=%-6lld max_error=%-12.3e %s\n",
                  r.name.c_str(), r.samples, r.max_error,
                  r.pass ? "PASS" : "FAIL");
    os << buf;
  }
  return os.str();
}

}  // namespace mtl::verify
