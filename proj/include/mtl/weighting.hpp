// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <deque>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mtl/rng.hpp"
#include "mtl/tensor.hpp"

namespace mtl {

enum class WeightingKind {
  EW,
  GradNorm,
  UW,
  MGDA,
  DWA,
  GLS,
  PCGrad,
  GradDrop,
  IMTL,
  GradVac,
  CAGrad,
  RLW,
};

enum class GradMode { ParamGrad, RepGrad };
enum class MgdaNorm { None, L2, Loss, LossPlus };
enum class CagradRescale { None, OnePlusC2 };

constexpr int kWeightingCount = 12;
const char* weighting_name(WeightingKind k);
WeightingKind weighting_from(const std::string& s);
const char* grad_mode_name(GradMode m);
const char* mgda_norm_name(MgdaNorm m);
MgdaNorm mgda_norm_from(const std::string& s);
const char* cagrad_rescale_name(CagradRescale m);
CagradRescale cagrad_rescale_from(const std::string& s);

/// True for strategies that combine task losses into one scalar and take a
/// single backward pass (EW, UW, DWA, GLS, RLW); the rest balance gradients.
bool is_loss_weighting(WeightingKind k);

/// Per-task gradients over the shared parameters (param-grad mode) or the
/// shared representation (rep-grad mode), one row per task.
struct GradientBundle {
  int tasks = 0;
  int dim = 0;
  std::vector<double> grads;  // row-major tasks x dim
  GradMode mode = GradMode::ParamGrad;
  std::vector<double> task_losses;  // detached values

  std::span<const double> row(int t) const {
    return {grads.data() + static_cast<std::size_t>(t) * dim,
            static_cast<std::size_t>(dim)};
  }
  std::span<double> row(int t) {
    return {grads.data() + static_cast<std::size_t>(t) * dim,
            static_cast<std::size_t>(dim)};
  }
  void validate() const;  // finite rows, consistent sizes
};

struct WeightingHyperparams {
  double gradnorm_alpha = 1.5;
  double gradnorm_weight_lr = 0.025;
  double dwa_tau = 2.0;
  double gradvac_beta = 0.01;
  double cagrad_c = 0.4;
  MgdaNorm mgda_norm = MgdaNorm::None;
  CagradRescale cagrad_rescale = CagradRescale::OnePlusC2;
};

/// Keeps named tensors whose gradients flow through the tape (UW's
/// log-variances); the trainer registers them with the main optimizer.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

/// All persistent per-strategy buffers plus the strategy's RNG.
struct WeightingState {
  WeightingKind strategy = WeightingKind::EW;
  int tasks = 0;
  long long step = 0;
  WeightingHyperparams hyper;

  std::deque<std::vector<double>> loss_history;  // up to 2 epoch means, oldest first
  std::vector<double> initial_losses;            // GradNorm L_t(0)
  std::vector<double> gradnorm_weights;          // w, renormalized to sum T
  std::vector<Parameter> uw_log_vars;            // s_t = log sigma_t^2
  std::vector<double> ema_cosine;                // T x T, GradVac targets
  Rng rng{0};

  std::map<std::string, long long> degenerate_events;

  static WeightingState make(WeightingKind strategy, int tasks, uint64_t seed,
                             const WeightingHyperparams& hyper = {});
  void push_epoch_losses(std::vector<double> mean_losses);
  void bump(const std::string& event) { ++degenerate_events[event]; }
  double ema_at(int i, int j) const { return ema_cosine[i * tasks + j]; }
  double& ema_at(int i, int j) { return ema_cosine[i * tasks + j]; }
};

struct AggregationResult {
  std::vector<double> direction;             // D
  std::vector<double> per_task_directions;   // tasks x D, sums to direction
  std::vector<double> applied_weights;       // empty when elementwise
  bool elementwise = false;
  std::map<std::string, double> diagnostics;

  std::span<const double> task_direction(int t, int dim) const {
    return {per_task_directions.data() + static_cast<std::size_t>(t) * dim,
            static_cast<std::size_t>(dim)};
  }
};

/// Dispatches on state.strategy, advances state.step, and merges any
/// degenerate events into the state counters.
AggregationResult aggregate(const GradientBundle& bundle,
                            WeightingState& state);

// --- loss-side strategy pieces (live tape nodes) -------------------------

/// Sum_t (1/2 exp(-s_t) L_t + 1/2 s_t) with s_t bound as trainable leaves.
/// Leaf ids for the s parameters are appended to uw_leaves.
NodeId uw_combined_loss(Tape& tape, std::span<const NodeId> losses,
                        WeightingState& state, std::vector<NodeId>& uw_leaves);

/// Geometric mean of positive losses, exp(mean(log L_t)).
NodeId gls_combined_loss(Tape& tape, std::span<const NodeId> losses);

/// T * softmax(r_t / tau) from the two stored epochs; all ones with less
/// than two epochs of history.
std::vector<double> dwa_weights(const WeightingState& state);

/// Softmax of T independent standard normal draws.
std::vector<double> rlw_weights(WeightingState& state, int tasks);
std::vector<double> rlw_weights_from_draws(std::span<const double> draws);

// --- gradient-side strategies --------------------------------------------

AggregationResult ew(const GradientBundle& bundle);
AggregationResult gradnorm_step(const GradientBundle& bundle,
                                WeightingState& state);
AggregationResult mgda(const GradientBundle& bundle, WeightingState& state);
AggregationResult pcgrad(const GradientBundle& bundle, WeightingState& state);
AggregationResult graddrop(const GradientBundle& bundle,
                           WeightingState& state);
AggregationResult imtl_g(const GradientBundle& bundle, WeightingState& state);
AggregationResult gradvac(const GradientBundle& bundle, WeightingState& state);
AggregationResult cagrad(const GradientBundle& bundle, WeightingState& state);

// --- exposed internals (property checks drive these directly) ------------

/// Euclidean projection onto {w >= 0, sum w = 1} by sort-and-threshold.
std::vector<double> project_to_simplex(std::vector<double> v);

struct MinNormResult {
  std::vector<double> coefficients;     // on the simplex
  std::vector<double> point;            // min-norm element
  std::vector<double> sq_norm_trace;    // per accepted iterate
  bool degenerate = false;
};
/// Frank-Wolfe min-norm point of the convex hull of the rows.
MinNormResult min_norm_point(const GradientBundle& bundle, int max_iters = 250,
                             double tol = 1e-6);

struct PcgradOutcome {
  std::vector<double> adjusted;                // tasks x dim
  std::vector<std::pair<int, int>> projections;  // (i, j) in firing order
};
PcgradOutcome pcgrad_adjust(const GradientBundle& bundle, Rng& rng);

struct GradvacOutcome {
  std::vector<double> adjusted;  // tasks x dim
  struct Fire {
    int i = 0, j = 0;
    double target = 0.0;             // EMA cosine the pair was pulled toward
    std::vector<double> row_after;   // row i right after this adjustment
  };
  std::vector<Fire> fires;
};
GradvacOutcome gradvac_adjust(const GradientBundle& bundle,
                              WeightingState& state);

struct CagradInner {
  std::vector<double> weights;          // argmin on the simplex
  std::vector<double> objective_trace;  // accepted iterates, non-increasing
};
CagradInner cagrad_inner_solve(const GradientBundle& bundle, double c,
                               int max_iters = 200, double step = 0.1,
                               double tol = 1e-8);

/// GradDrop with injected uniforms (one per element); the aggregate path
/// draws them from the state RNG.
AggregationResult graddrop_with_uniforms(const GradientBundle& bundle,
                                         std::span<const double> uniforms);

}  // namespace mtl
