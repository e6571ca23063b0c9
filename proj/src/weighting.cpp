// SPDX-License-Identifier: Apache-2.0

#include "mtl/weighting.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mtl {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

void axpy(double a, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

/// direction = sum_t weights[t] * rows[t]; also fills per-task slices.
AggregationResult weighted_result(const GradientBundle& b,
                                  std::vector<double> weights) {
  AggregationResult r;
  r.direction.assign(b.dim, 0.0);
  r.per_task_directions.assign(static_cast<std::size_t>(b.tasks) * b.dim, 0.0);
  for (int t = 0; t < b.tasks; ++t) {
    auto row = b.row(t);
    std::span<double> slice{r.per_task_directions.data() +
                                static_cast<std::size_t>(t) * b.dim,
                            static_cast<std::size_t>(b.dim)};
    axpy(weights[t], row, slice);
    axpy(weights[t], row, r.direction);
  }
  r.applied_weights = std::move(weights);
  return r;
}

AggregationResult elementwise_result(const GradientBundle& b,
                                     std::vector<double> per_task) {
  AggregationResult r;
  r.elementwise = true;
  r.per_task_directions = std::move(per_task);
  r.direction.assign(b.dim, 0.0);
  for (int t = 0; t < b.tasks; ++t) {
    axpy(1.0, r.task_direction(t, b.dim), r.direction);
  }
  return r;
}

constexpr double kNormFloor = 1e-12;

}  // namespace

const char* weighting_name(WeightingKind k) {
  switch (k) {
    case WeightingKind::EW: return "EW";
    case WeightingKind::GradNorm: return "GradNorm";
    case WeightingKind::UW: return "UW";
    case WeightingKind::MGDA: return "MGDA";
    case WeightingKind::DWA: return "DWA";
    case WeightingKind::GLS: return "GLS";
    case WeightingKind::PCGrad: return "PCGrad";
    case WeightingKind::GradDrop: return "GradDrop";
    case WeightingKind::IMTL: return "IMTL";
    case WeightingKind::GradVac: return "GradVac";
    case WeightingKind::CAGrad: return "CAGrad";
    case WeightingKind::RLW: return "RLW";
  }
  return "?";
}

WeightingKind weighting_from(const std::string& s) {
  static const std::pair<const char*, WeightingKind> table[] = {
      {"EW", WeightingKind::EW},           {"GradNorm", WeightingKind::GradNorm},
      {"UW", WeightingKind::UW},           {"MGDA", WeightingKind::MGDA},
      {"DWA", WeightingKind::DWA},         {"GLS", WeightingKind::GLS},
      {"PCGrad", WeightingKind::PCGrad},   {"GradDrop", WeightingKind::GradDrop},
      {"IMTL", WeightingKind::IMTL},       {"GradVac", WeightingKind::GradVac},
      {"CAGrad", WeightingKind::CAGrad},   {"RLW", WeightingKind::RLW},
  };
  for (const auto& [name, kind] : table) {
    if (s == name) return kind;
  }
  throw std::invalid_argument(
      "unknown weighting '" + s +
      "' (expected EW|GradNorm|UW|MGDA|DWA|GLS|PCGrad|GradDrop|IMTL|GradVac|"
      "CAGrad|RLW)");
}

const char* grad_mode_name(GradMode m) {
  return m == GradMode::ParamGrad ? "param" : "rep";
}

const char* mgda_norm_name(MgdaNorm m) {
  switch (m) {
    case MgdaNorm::None: return "none";
    case MgdaNorm::L2: return "l2";
    case MgdaNorm::Loss: return "loss";
    case MgdaNorm::LossPlus: return "loss+";
  }
  return "?";
}

MgdaNorm mgda_norm_from(const std::string& s) {
  if (s == "none") return MgdaNorm::None;
  if (s == "l2") return MgdaNorm::L2;
  if (s == "loss") return MgdaNorm::Loss;
  if (s == "loss+") return MgdaNorm::LossPlus;
  throw std::invalid_argument("unknown mgda norm '" + s +
                              "' (expected none|l2|loss|loss+)");
}

const char* cagrad_rescale_name(CagradRescale m) {
  return m == CagradRescale::None ? "none" : "1/(1+c^2)";
}

CagradRescale cagrad_rescale_from(const std::string& s) {
  if (s == "none") return CagradRescale::None;
  if (s == "1/(1+c^2)" || s == "sq") return CagradRescale::OnePlusC2;
  throw std::invalid_argument("unknown cagrad rescale '" + s +
                              "' (expected none|sq)");
}

bool is_loss_weighting(WeightingKind k) {
  switch (k) {
    case WeightingKind::EW:
    case WeightingKind::UW:
    case WeightingKind::DWA:
    case WeightingKind::GLS:
    case WeightingKind::RLW:
      return true;
    default:
      return false;
  }
}

void GradientBundle::validate() const {
  if (tasks < 1 || dim < 1) {
    throw std::invalid_argument("GradientBundle: tasks and dim must be >= 1");
  }
  if (grads.size() != static_cast<std::size_t>(tasks) * dim) {
    throw std::invalid_argument("GradientBundle: grads size mismatch");
  }
  for (double v : grads) {
    if (!std::isfinite(v)) {
      throw std::runtime_error("GradientBundle: non-finite gradient entry");
    }
  }
}

WeightingState WeightingState::make(WeightingKind strategy, int tasks,
                                    uint64_t seed,
                                    const WeightingHyperparams& hyper) {
  WeightingState s;
  s.strategy = strategy;
  s.tasks = tasks;
  s.hyper = hyper;
  s.rng = Rng(seed);
  s.gradnorm_weights.assign(tasks, 1.0);
  s.ema_cosine.assign(static_cast<std::size_t>(tasks) * tasks, 0.0);
  if (strategy == WeightingKind::UW) {
    for (int t = 0; t < tasks; ++t) {
      Parameter p;
      p.name = "uw_log_var_" + std::to_string(t);
      p.value = Tensor::scalar(0.0);
      p.grad = Tensor::scalar(0.0);
      s.uw_log_vars.push_back(std::move(p));
    }
  }
  return s;
}

void WeightingState::push_epoch_losses(std::vector<double> mean_losses) {
  loss_history.push_back(std::move(mean_losses));
  while (loss_history.size() > 2) loss_history.pop_front();
}

// --- loss-side pieces -----------------------------------------------------

NodeId uw_combined_loss(Tape& tape, std::span<const NodeId> losses,
                        WeightingState& state,
                        std::vector<NodeId>& uw_leaves) {
  NodeId total = -1;
  for (std::size_t t = 0; t < losses.size(); ++t) {
    Parameter& s = state.uw_log_vars[t];
    NodeId s_leaf = tape.leaf(s.value, true);
    uw_leaves.push_back(s_leaf);
    NodeId weight = tape.exp_(tape.scalar_mul(s_leaf, -1.0));
    NodeId term = tape.scalar_mul(tape.mul(weight, losses[t]), 0.5);
    term = tape.add(term, tape.scalar_mul(s_leaf, 0.5));
    total = total < 0 ? term : tape.add(total, term);
  }
  return total;
}

NodeId gls_combined_loss(Tape& tape, std::span<const NodeId> losses) {
  NodeId acc = -1;
  for (NodeId l : losses) {
    NodeId lg = tape.log_(l);  // log clamps at its floor for non-positive losses
    acc = acc < 0 ? lg : tape.add(acc, lg);
  }
  return tape.exp_(tape.scalar_mul(acc, 1.0 / static_cast<double>(losses.size())));
}

std::vector<double> dwa_weights(const WeightingState& state) {
  int tasks = state.tasks;
  if (state.loss_history.size() < 2) return std::vector<double>(tasks, 1.0);
  const auto& prev2 = state.loss_history[0];
  const auto& prev1 = state.loss_history[1];
  std::vector<double> ratio(tasks);
  for (int t = 0; t < tasks; ++t) {
    ratio[t] = prev2[t] != 0.0 ? prev1[t] / prev2[t] : 1.0;
  }
  double mx = *std::max_element(ratio.begin(), ratio.end());
  std::vector<double> w(tasks);
  double denom = 0.0;
  for (int t = 0; t < tasks; ++t) {
    w[t] = std::exp((ratio[t] - mx) / state.hyper.dwa_tau);
    denom += w[t];
  }
  for (int t = 0; t < tasks; ++t) w[t] *= tasks / denom;
  return w;
}

std::vector<double> rlw_weights_from_draws(std::span<const double> draws) {
  double mx = *std::max_element(draws.begin(), draws.end());
  std::vector<double> w(draws.size());
  double denom = 0.0;
  for (std::size_t t = 0; t < draws.size(); ++t) {
    w[t] = std::exp(draws[t] - mx);
    denom += w[t];
  }
  for (double& v : w) v /= denom;
  return w;
}

std::vector<double> rlw_weights(WeightingState& state, int tasks) {
  std::vector<double> draws(tasks);
  for (double& d : draws) d = state.rng.normal();
  return rlw_weights_from_draws(draws);
}

// --- gradient-side strategies ----------------------------------------------

AggregationResult ew(const GradientBundle& bundle) {
  return weighted_result(
      bundle, std::vector<double>(bundle.tasks, 1.0 / bundle.tasks));
}

AggregationResult gradnorm_step(const GradientBundle& bundle,
                                WeightingState& state) {
  int tasks = bundle.tasks;
  if (state.initial_losses.empty()) {
    state.initial_losses = bundle.task_losses;
    for (double& l : state.initial_losses) {
      if (l <= 0.0) l = 1e-8;
    }
  }
  std::vector<double>& w = state.gradnorm_weights;

  std::vector<double> norms(tasks);
  for (int t = 0; t < tasks; ++t) norms[t] = norm2(bundle.row(t));

  // Inverse training rates, normalized to mean 1.
  std::vector<double> rate(tasks);
  double mean_rate = 0.0;
  for (int t = 0; t < tasks; ++t) {
    rate[t] = bundle.task_losses[t] / state.initial_losses[t];
    mean_rate += rate[t];
  }
  mean_rate /= tasks;
  double mean_g = 0.0;
  for (int t = 0; t < tasks; ++t) mean_g += w[t] * norms[t];
  mean_g /= tasks;

  // One descent step on sum_t |w_t ||g_t|| - target_t| with targets constant.
  for (int t = 0; t < tasks; ++t) {
    double rel = mean_rate > 0.0 ? rate[t] / mean_rate : 1.0;
    double target = mean_g * std::pow(rel, state.hyper.gradnorm_alpha);
    double diff = w[t] * norms[t] - target;
    double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
    w[t] -= state.hyper.gradnorm_weight_lr * sign * norms[t];
  }
  double wsum = std::accumulate(w.begin(), w.end(), 0.0);
  if (std::fabs(wsum) < kNormFloor) {
    std::fill(w.begin(), w.end(), 1.0);
    wsum = tasks;
  }
  for (double& v : w) v *= tasks / wsum;

  return weighted_result(bundle, w);
}

namespace {

/// Applies MGDA's optional row pre-normalization.
GradientBundle mgda_normalized(const GradientBundle& bundle, MgdaNorm mode) {
  if (mode == MgdaNorm::None) return bundle;
  GradientBundle out = bundle;
  for (int t = 0; t < out.tasks; ++t) {
    auto row = out.row(t);
    double denom = 1.0;
    double n = norm2(row);
    double l = t < static_cast<int>(out.task_losses.size())
                   ? std::max(out.task_losses[t], kNormFloor)
                   : 1.0;
    switch (mode) {
      case MgdaNorm::L2: denom = std::max(n, kNormFloor); break;
      case MgdaNorm::Loss: denom = l; break;
      case MgdaNorm::LossPlus: denom = std::max(l * n, kNormFloor); break;
      case MgdaNorm::None: break;
    }
    for (double& v : row) v /= denom;
  }
  return out;
}

}  // namespace

MinNormResult min_norm_point(const GradientBundle& bundle, int max_iters,
                             double tol) {
  int tasks = bundle.tasks, dim = bundle.dim;
  MinNormResult res;
  res.coefficients.assign(tasks, 1.0 / tasks);
  res.point.assign(dim, 0.0);
  for (int t = 0; t < tasks; ++t) {
    axpy(res.coefficients[t], bundle.row(t), res.point);
  }
  double sq = dot(res.point, res.point);
  res.sq_norm_trace.push_back(sq);

  for (int it = 0; it < max_iters; ++it) {
    // Vertex minimizing the linearization <g_t, d>.
    int best = 0;
    double best_val = dot(bundle.row(0), res.point);
    for (int t = 1; t < tasks; ++t) {
      double v = dot(bundle.row(t), res.point);
      if (v < best_val) {
        best_val = v;
        best = t;
      }
    }
    // Exact line search between d and g_best for ||(1-u) d + u g||^2.
    auto g = bundle.row(best);
    std::vector<double> diff(dim);
    for (int i = 0; i < dim; ++i) diff[i] = res.point[i] - g[i];
    double denom = dot(diff, diff);
    if (denom < kNormFloor) break;
    double u = dot(res.point, diff) / denom;
    u = std::clamp(u, 0.0, 1.0);
    if (u == 0.0) break;
    for (int t = 0; t < tasks; ++t) res.coefficients[t] *= (1.0 - u);
    res.coefficients[best] += u;
    for (int i = 0; i < dim; ++i) res.point[i] -= u * diff[i];
    double new_sq = dot(res.point, res.point);
    res.sq_norm_trace.push_back(new_sq);
    if (sq - new_sq < tol) {
      sq = new_sq;
      break;
    }
    sq = new_sq;
  }
  res.degenerate = std::sqrt(sq) < kNormFloor;
  return res;
}

AggregationResult mgda(const GradientBundle& bundle, WeightingState& state) {
  GradientBundle work = mgda_normalized(bundle, state.hyper.mgda_norm);
  MinNormResult mn = min_norm_point(work);
  AggregationResult r = weighted_result(work, mn.coefficients);
  r.diagnostics["min_norm_sq"] = dot(r.direction, r.direction);
  r.diagnostics["fw_iters"] =
      static_cast<double>(mn.sq_norm_trace.size() - 1);
  if (mn.degenerate) {
    r.diagnostics["degenerate"] = 1.0;
    state.bump("mgda_zero_direction");
  }
  return r;
}

PcgradOutcome pcgrad_adjust(const GradientBundle& bundle, Rng& rng) {
  int tasks = bundle.tasks, dim = bundle.dim;
  PcgradOutcome out;
  out.adjusted = bundle.grads;
  for (int i = 0; i < tasks; ++i) {
    std::span<double> gi{out.adjusted.data() + static_cast<std::size_t>(i) * dim,
                         static_cast<std::size_t>(dim)};
    std::vector<int> order;
    for (int j = 0; j < tasks; ++j) {
      if (j != i) order.push_back(j);
    }
    rng.shuffle(order);
    for (int j : order) {
      auto gj = bundle.row(j);  // original rows are the projection targets
      double nj = dot(gj, gj);
      if (nj < kNormFloor) continue;
      double d = dot(gi, gj);
      if (d < 0.0) {
        axpy(-d / nj, gj, gi);
        out.projections.emplace_back(i, j);
      }
    }
  }
  return out;
}

AggregationResult pcgrad(const GradientBundle& bundle, WeightingState& state) {
  PcgradOutcome pc = pcgrad_adjust(bundle, state.rng);
  AggregationResult r = elementwise_result(bundle, std::move(pc.adjusted));
  r.diagnostics["projections"] = static_cast<double>(pc.projections.size());
  return r;
}

AggregationResult graddrop_with_uniforms(const GradientBundle& bundle,
                                         std::span<const double> uniforms) {
  int tasks = bundle.tasks, dim = bundle.dim;
  std::vector<double> masked(static_cast<std::size_t>(tasks) * dim, 0.0);
  for (int k = 0; k < dim; ++k) {
    double s = 0.0, a = 0.0;
    for (int t = 0; t < tasks; ++t) {
      double g = bundle.row(t)[k];
      s += g;
      a += std::fabs(g);
    }
    double p = a > 0.0 ? 0.5 * (1.0 + s / a) : 0.5;
    double u = uniforms[k];
    for (int t = 0; t < tasks; ++t) {
      double g = bundle.row(t)[k];
      bool keep = (g > 0.0 && p > u) || (g < 0.0 && p < u);
      if (keep) {
        masked[static_cast<std::size_t>(t) * dim + k] = g;
      }
    }
  }
  return elementwise_result(bundle, std::move(masked));
}

AggregationResult graddrop(const GradientBundle& bundle,
                           WeightingState& state) {
  if (bundle.mode != GradMode::RepGrad) {
    throw std::invalid_argument(
        "GradDrop requires rep-grad mode: elementwise sign voting needs a "
        "common activation layout");
  }
  std::vector<double> uniforms(bundle.dim);
  for (double& u : uniforms) u = state.rng.uniform01_open();
  return graddrop_with_uniforms(bundle, uniforms);
}

namespace {

/// Gaussian elimination with partial pivoting; returns false when singular.
bool solve_linear(std::vector<double> a, std::vector<double> b, int n,
                  std::vector<double>* x) {
  for (int col = 0; col < n; ++col) {
    int piv = col;
    for (int r = col + 1; r < n; ++r) {
      if (std::fabs(a[r * n + col]) > std::fabs(a[piv * n + col])) piv = r;
    }
    if (std::fabs(a[piv * n + col]) < 1e-10) return false;
    if (piv != col) {
      for (int c = 0; c < n; ++c) std::swap(a[col * n + c], a[piv * n + c]);
      std::swap(b[col], b[piv]);
    }
    for (int r = col + 1; r < n; ++r) {
      double f = a[r * n + col] / a[col * n + col];
      if (f == 0.0) continue;
      for (int c = col; c < n; ++c) a[r * n + c] -= f * a[col * n + c];
      b[r] -= f * b[col];
    }
  }
  x->assign(n, 0.0);
  for (int r = n - 1; r >= 0; --r) {
    double s = b[r];
    for (int c = r + 1; c < n; ++c) s -= a[r * n + c] * (*x)[c];
    (*x)[r] = s / a[r * n + r];
  }
  return true;
}

}  // namespace

AggregationResult imtl_g(const GradientBundle& bundle, WeightingState& state) {
  int tasks = bundle.tasks, dim = bundle.dim;
  if (tasks == 1) {
    return weighted_result(bundle, {1.0});
  }

  std::vector<double> norms(tasks);
  bool zero_row = false;
  for (int t = 0; t < tasks; ++t) {
    norms[t] = norm2(bundle.row(t));
    if (norms[t] < kNormFloor) zero_row = true;
  }

  auto fallback = [&](const char* event) {
    AggregationResult r = ew(bundle);
    r.diagnostics["imtl_fallback"] = 1.0;
    state.bump(event);
    return r;
  };
  if (zero_row) return fallback("imtl_zero_norm_fallback");

  // Unit rows u_t; unknowns alpha_2..alpha_T with alpha_1 = 1 - sum.
  std::vector<double> units(static_cast<std::size_t>(tasks) * dim);
  for (int t = 0; t < tasks; ++t) {
    auto row = bundle.row(t);
    for (int i = 0; i < dim; ++i) units[t * dim + i] = row[i] / norms[t];
  }
  auto unit = [&](int t) {
    return std::span<const double>{units.data() + static_cast<std::size_t>(t) * dim,
                                   static_cast<std::size_t>(dim)};
  };

  int n = tasks - 1;
  std::vector<double> m(static_cast<std::size_t>(n) * n), rhs(n);
  std::vector<double> a_row(dim);
  for (int tp = 1; tp < tasks; ++tp) {
    for (int i = 0; i < dim; ++i) a_row[i] = units[i] - unit(tp)[i];  // u_1 - u_tp
    rhs[tp - 1] = -dot(bundle.row(0), a_row);
    for (int t = 1; t < tasks; ++t) {
      std::vector<double> gdiff(dim);
      auto gt = bundle.row(t);
      auto g1 = bundle.row(0);
      for (int i = 0; i < dim; ++i) gdiff[i] = gt[i] - g1[i];
      m[(tp - 1) * n + (t - 1)] = dot(gdiff, a_row);
    }
  }

  std::vector<double> alpha_tail;
  if (!solve_linear(m, rhs, n, &alpha_tail)) {
    return fallback("imtl_singular_fallback");
  }
  std::vector<double> alpha(tasks);
  double tail = std::accumulate(alpha_tail.begin(), alpha_tail.end(), 0.0);
  alpha[0] = 1.0 - tail;
  for (int t = 1; t < tasks; ++t) alpha[t] = alpha_tail[t - 1];

  AggregationResult r = weighted_result(bundle, alpha);
  double lo = dot(r.direction, unit(0)), hi = lo;
  for (int t = 1; t < tasks; ++t) {
    double p = dot(r.direction, unit(t));
    lo = std::min(lo, p);
    hi = std::max(hi, p);
  }
  r.diagnostics["projection_spread"] = hi - lo;
  return r;
}

GradvacOutcome gradvac_adjust(const GradientBundle& bundle,
                              WeightingState& state) {
  int tasks = bundle.tasks, dim = bundle.dim;
  double beta = state.hyper.gradvac_beta;
  GradvacOutcome out;
  out.adjusted = bundle.grads;

  for (int i = 0; i < tasks; ++i) {
    std::span<double> gi{out.adjusted.data() + static_cast<std::size_t>(i) * dim,
                         static_cast<std::size_t>(dim)};
    for (int j = 0; j < tasks; ++j) {
      if (j == i) continue;
      auto gj = bundle.row(j);  // original rows are the alignment targets
      double ni = norm2(gi), nj = norm2(gj);
      if (ni < kNormFloor || nj < kNormFloor) continue;
      double c = dot(gi, gj) / (ni * nj);
      c = std::clamp(c, -1.0, 1.0);
      double target = state.ema_at(i, j);
      double root = std::sqrt(std::max(0.0, 1.0 - target * target));
      if (c < target && root > kNormFloor) {
        double a = ni *
                   (target * std::sqrt(std::max(0.0, 1.0 - c * c)) - c * root) /
                   (nj * root);
        axpy(a, gj, gi);
        GradvacOutcome::Fire f;
        f.i = i;
        f.j = j;
        f.target = target;
        f.row_after.assign(gi.begin(), gi.end());
        out.fires.push_back(std::move(f));
      }
      // EMA tracks the observed (pre-adjustment) cosine for every pair.
      state.ema_at(i, j) = (1.0 - beta) * target + beta * c;
    }
  }
  return out;
}

AggregationResult gradvac(const GradientBundle& bundle, WeightingState& state) {
  GradvacOutcome out = gradvac_adjust(bundle, state);
  int fired = static_cast<int>(out.fires.size());
  AggregationResult r = elementwise_result(bundle, std::move(out.adjusted));
  r.diagnostics["adjustments"] = static_cast<double>(fired);
  return r;
}

std::vector<double> project_to_simplex(std::vector<double> v) {
  int n = static_cast<int>(v.size());
  std::vector<double> u = v;
  std::sort(u.begin(), u.end(), std::greater<>());
  double cum = 0.0, theta = 0.0;
  for (int k = 0; k < n; ++k) {
    cum += u[k];
    double t = (cum - 1.0) / (k + 1);
    if (u[k] - t > 0.0) theta = t;
  }
  for (double& x : v) x = std::max(x - theta, 0.0);
  return v;
}

CagradInner cagrad_inner_solve(const GradientBundle& bundle, double c,
                               int max_iters, double step, double tol) {
  int tasks = bundle.tasks, dim = bundle.dim;
  std::vector<double> g0(dim, 0.0);
  for (int t = 0; t < tasks; ++t) axpy(1.0 / tasks, bundle.row(t), g0);
  double g0_norm = norm2(g0);

  auto gw_of = [&](const std::vector<double>& w) {
    std::vector<double> gw(dim, 0.0);
    for (int t = 0; t < tasks; ++t) axpy(w[t], bundle.row(t), gw);
    return gw;
  };
  auto objective = [&](const std::vector<double>& w) {
    std::vector<double> gw = gw_of(w);
    return dot(gw, g0) + c * g0_norm * norm2(gw);
  };

  CagradInner res;
  res.weights.assign(tasks, 1.0 / tasks);
  double f = objective(res.weights);
  res.objective_trace.push_back(f);

  for (int it = 0; it < max_iters; ++it) {
    std::vector<double> gw = gw_of(res.weights);
    double gw_norm = norm2(gw);
    std::vector<double> grad(tasks);
    for (int t = 0; t < tasks; ++t) {
      grad[t] = dot(bundle.row(t), g0);
      if (gw_norm > kNormFloor) {
        grad[t] += c * g0_norm * dot(bundle.row(t), gw) / gw_norm;
      }
    }
    // Backtracking keeps the objective non-increasing under the fixed
    // nominal step.
    double s = step;
    std::vector<double> cand;
    double fc = f;
    bool accepted = false;
    while (s > 1e-12) {
      cand = res.weights;
      for (int t = 0; t < tasks; ++t) cand[t] -= s * grad[t];
      cand = project_to_simplex(std::move(cand));
      fc = objective(cand);
      if (fc <= f) {
        accepted = true;
        break;
      }
      s *= 0.5;
    }
    if (!accepted) break;
    double improvement = f - fc;
    res.weights = std::move(cand);
    f = fc;
    res.objective_trace.push_back(f);
    if (improvement < tol) break;
  }
  return res;
}

AggregationResult cagrad(const GradientBundle& bundle, WeightingState& state) {
  int tasks = bundle.tasks, dim = bundle.dim;
  double c = state.hyper.cagrad_c;

  std::vector<double> g0(dim, 0.0);
  for (int t = 0; t < tasks; ++t) axpy(1.0 / tasks, bundle.row(t), g0);
  double g0_norm = norm2(g0);

  double rescale = state.hyper.cagrad_rescale == CagradRescale::OnePlusC2
                       ? 1.0 / (1.0 + c * c)
                       : 1.0;

  AggregationResult r;
  if (g0_norm < kNormFloor) {
    r = weighted_result(bundle, std::vector<double>(tasks, 0.0));
    r.diagnostics["degenerate"] = 1.0;
    state.bump("cagrad_zero_mean");
    return r;
  }

  CagradInner inner = cagrad_inner_solve(bundle, c);
  std::vector<double> gw(dim, 0.0);
  for (int t = 0; t < tasks; ++t) axpy(inner.weights[t], bundle.row(t), gw);
  double gw_norm = norm2(gw);

  std::vector<double> coeff(tasks, 1.0 / tasks);
  if (c > 0.0 && gw_norm >= kNormFloor) {
    double lambda = c * g0_norm / gw_norm;
    for (int t = 0; t < tasks; ++t) coeff[t] += lambda * inner.weights[t];
  } else if (c > 0.0) {
    r = weighted_result(bundle, coeff);
    for (double& v : r.direction) v *= rescale;
    for (double& v : r.per_task_directions) v *= rescale;
    for (double& v : r.applied_weights) v *= rescale;
    r.diagnostics["degenerate"] = 1.0;
    state.bump("cagrad_zero_gw");
    return r;
  }
  for (double& v : coeff) v *= rescale;
  r = weighted_result(bundle, coeff);
  r.diagnostics["inner_iters"] =
      static_cast<double>(inner.objective_trace.size() - 1);
  return r;
}

// --- dispatcher -------------------------------------------------------------

AggregationResult aggregate(const GradientBundle& bundle,
                            WeightingState& state) {
  bundle.validate();
  if (state.tasks != bundle.tasks) {
    throw std::invalid_argument("aggregate: state was built for " +
                                std::to_string(state.tasks) +
                                " tasks, bundle has " +
                                std::to_string(bundle.tasks));
  }
  AggregationResult r;
  if (bundle.tasks == 1) {
    // A single task degenerates to plain descent for every strategy.
    r = weighted_result(bundle, {1.0});
    state.step += 1;
    return r;
  }
  switch (state.strategy) {
    case WeightingKind::EW:
      r = ew(bundle);
      break;
    case WeightingKind::UW: {
      // Loss path carries the exact 1/2 exp(-s) L + s/2 objective; as a
      // bundle aggregation the per-task weight is exp(-s_t) so a fresh
      // state degenerates to plain descent.
      std::vector<double> w(bundle.tasks, 1.0);
      for (int t = 0; t < bundle.tasks &&
                      t < static_cast<int>(state.uw_log_vars.size()); ++t) {
        w[t] = std::exp(-state.uw_log_vars[t].value[0]);
      }
      r = weighted_result(bundle, std::move(w));
      break;
    }
    case WeightingKind::DWA:
      r = weighted_result(bundle, dwa_weights(state));
      break;
    case WeightingKind::GLS: {
      std::vector<double> w(bundle.tasks);
      double acc = 0.0;
      for (int t = 0; t < bundle.tasks; ++t) {
        acc += std::log(std::max(bundle.task_losses[t], 1e-12));
      }
      double total = std::exp(acc / bundle.tasks);
      for (int t = 0; t < bundle.tasks; ++t) {
        w[t] = total / (bundle.tasks * std::max(bundle.task_losses[t], 1e-12));
      }
      r = weighted_result(bundle, std::move(w));
      break;
    }
    case WeightingKind::RLW:
      r = weighted_result(bundle, rlw_weights(state, bundle.tasks));
      break;
    case WeightingKind::GradNorm:
      r = gradnorm_step(bundle, state);
      break;
    case WeightingKind::MGDA:
      r = mgda(bundle, state);
      break;
    case WeightingKind::PCGrad:
      r = pcgrad(bundle, state);
      break;
    case WeightingKind::GradDrop:
      r = graddrop(bundle, state);
      break;
    case WeightingKind::IMTL:
      r = imtl_g(bundle, state);
      break;
    case WeightingKind::GradVac:
      r = gradvac(bundle, state);
      break;
    case WeightingKind::CAGrad:
      r = cagrad(bundle, state);
      break;
  }
  state.step += 1;
  for (double v : r.direction) {
    if (!std::isfinite(v)) {
      throw std::runtime_error("aggregate: non-finite direction");
    }
  }
  return r;
}

}  // namespace mtl
