// SPDX-License-Identifier: Apache-2.0

#include "mtl/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "mtl/jsonio.hpp"
#include "mtl/report.hpp"

namespace mtl {

const char* optimizer_name(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::Sgd: return "sgd";
    case OptimizerKind::SgdMomentum: return "sgd_momentum";
    case OptimizerKind::Adam: return "adam";
  }
  return "?";
}

OptimizerKind optimizer_from(const std::string& s) {
  if (s == "sgd") return OptimizerKind::Sgd;
  if (s == "sgd_momentum") return OptimizerKind::SgdMomentum;
  if (s == "adam") return OptimizerKind::Adam;
  throw std::invalid_argument("unknown optimizer '" + s +
                              "' (expected sgd|sgd_momentum|adam)");
}

void TrainConfig::validate() const {
  if (batch_size < 1) {
    throw std::invalid_argument("config: batch_size must be >= 1");
  }
  if (epochs < 0) throw std::invalid_argument("config: epochs must be >= 0");
  if (optim.lr <= 0.0) throw std::invalid_argument("config: lr must be > 0");
  if (val_fraction < 0.0 || val_fraction >= 1.0) {
    throw std::invalid_argument("config: val_fraction must be in [0, 1)");
  }
  if (weighting == WeightingKind::GradDrop && mode != GradMode::RepGrad) {
    throw std::invalid_argument(
        "config: GradDrop requires --mode rep (elementwise sign voting needs "
        "a common activation layout)");
  }
  if (mode == GradMode::RepGrad && multi_input) {
    throw std::invalid_argument(
        "config: rep-grad mode requires the single-input setting");
  }
  if (arch.kind == ArchKind::CrossStitch && multi_input) {
    throw std::invalid_argument(
        "config: CrossStitch requires the single-input setting (stitching "
        "needs aligned activations)");
  }
}

// --- optimizer ---------------------------------------------------------------

Optimizer::Optimizer(const OptimConfig& cfg, std::vector<Parameter*> params)
    : cfg_(cfg), params_(std::move(params)) {
  for (Parameter* p : params_) {
    m_.push_back(Tensor::zeros(p->value.shape()));
    v_.push_back(Tensor::zeros(p->value.shape()));
  }
}

void Optimizer::zero_grad() {
  for (Parameter* p : params_) {
    std::fill(p->grad.data(), p->grad.data() + p->grad.size(), 0.0);
  }
}

void Optimizer::step() {
  ++t_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    switch (cfg_.kind) {
      case OptimizerKind::Sgd:
        for (std::size_t j = 0; j < p.value.size(); ++j) {
          p.value[j] -= cfg_.lr * p.grad[j];
        }
        break;
      case OptimizerKind::SgdMomentum:
        for (std::size_t j = 0; j < p.value.size(); ++j) {
          m_[i][j] = cfg_.momentum * m_[i][j] + p.grad[j];
          p.value[j] -= cfg_.lr * m_[i][j];
        }
        break;
      case OptimizerKind::Adam: {
        double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t j = 0; j < p.value.size(); ++j) {
          double g = p.grad[j];
          m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g;
          v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g * g;
          double mh = m_[i][j] / bc1;
          double vh = v_[i][j] / bc2;
          p.value[j] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
        }
        break;
      }
    }
  }
}

// --- gradient acquisition ------------------------------------------------

GradientBundle collect_task_gradients(Tape& tape, const ForwardPass& fp,
                                      MultiTaskModel& model,
                                      std::span<const NodeId> losses,
                                      GradMode mode,
                                      std::vector<std::vector<Tensor>>* stash) {
  int tasks = model.task_count();
  GradientBundle bundle;
  bundle.tasks = tasks;
  bundle.mode = mode;
  for (NodeId l : losses) bundle.task_losses.push_back(tape.value(l)[0]);
  if (stash) stash->assign(tasks, {});

  std::vector<Parameter*> shared = model.shared_params();
  std::vector<NodeId> stop;
  if (mode == GradMode::RepGrad) {
    for (NodeId r : fp.reps) {
      if (std::find(stop.begin(), stop.end(), r) == stop.end()) {
        stop.push_back(r);
      }
    }
    const Tensor& rep0 = tape.value(fp.reps[0]);
    bundle.dim = static_cast<int>(rep0.size());
    for (NodeId r : fp.reps) {
      if (tape.value(r).size() != rep0.size()) {
        throw std::runtime_error(
            "rep-grad: task representations differ in size");
      }
    }
  } else {
    long long d = 0;
    for (Parameter* p : shared) d += static_cast<long long>(p->value.size());
    bundle.dim = static_cast<int>(d);
  }
  bundle.grads.assign(static_cast<std::size_t>(bundle.tasks) * bundle.dim, 0.0);

  for (int t = 0; t < tasks; ++t) {
    tape.zero_grads();
    if (mode == GradMode::RepGrad) {
      tape.backward(losses[t], stop);
      Tensor g = tape.grad(fp.reps[t]);
      std::copy(g.data(), g.data() + g.size(), bundle.row(t).data());
    } else {
      tape.backward(losses[t]);
      double* out = bundle.row(t).data();
      for (Parameter* p : shared) {
        Tensor g = tape.grad(fp.leaf_of(p));
        out = std::copy(g.data(), g.data() + g.size(), out);
      }
    }
    if (stash) {
      for (Parameter* p : model.task_params(t)) {
        (*stash)[t].push_back(tape.grad(fp.leaf_of(p)));
      }
    }
  }
  return bundle;
}

// --- one training step -----------------------------------------------------

namespace {

StepRecord abort_step(std::string why, std::vector<double> losses) {
  StepRecord r;
  r.ok = false;
  r.failure = std::move(why);
  r.task_losses = std::move(losses);
  return r;
}

}  // namespace

StepRecord train_step(MultiTaskModel& model, const StepBatch& batch,
                      const std::vector<TaskSpec>& specs,
                      WeightingState& state, const TrainConfig& cfg,
                      Optimizer& opt) {
  int tasks = model.task_count();
  Tape tape;
  ForwardPass fp = cfg.multi_input ? model.forward_multi(tape, batch.inputs)
                                   : model.forward(tape, batch.inputs[0]);

  std::vector<NodeId> losses(tasks);
  std::vector<double> loss_vals(tasks);
  for (int t = 0; t < tasks; ++t) {
    losses[t] = compute_loss(tape, specs[t], fp.outputs[t], batch.targets[t]);
    loss_vals[t] = tape.value(losses[t])[0];
    if (!std::isfinite(loss_vals[t])) {
      return abort_step("non-finite loss for " + specs[t].name,
                        std::move(loss_vals));
    }
  }

  StepRecord rec;
  rec.task_losses = loss_vals;
  rec.total_loss = std::accumulate(loss_vals.begin(), loss_vals.end(), 0.0);

  auto pull_bound_grads = [&]() {
    for (std::size_t i = 0; i < fp.bound_params.size(); ++i) {
      fp.bound_params[i]->grad = tape.grad(fp.bound_leaves[i]);
    }
  };

  if (is_loss_weighting(cfg.weighting)) {
    NodeId combined = -1;
    std::vector<NodeId> uw_leaves;
    switch (cfg.weighting) {
      case WeightingKind::EW: {
        NodeId acc = losses[0];
        for (int t = 1; t < tasks; ++t) acc = tape.add(acc, losses[t]);
        combined = tape.scalar_mul(acc, 1.0 / tasks);
        rec.applied_weights.assign(tasks, 1.0 / tasks);
        break;
      }
      case WeightingKind::UW: {
        combined = uw_combined_loss(tape, losses, state, uw_leaves);
        for (int t = 0; t < tasks; ++t) {
          rec.applied_weights.push_back(
              0.5 * std::exp(-state.uw_log_vars[t].value[0]));
        }
        break;
      }
      case WeightingKind::DWA: {
        std::vector<double> w = dwa_weights(state);
        for (int t = 0; t < tasks; ++t) {
          NodeId term = tape.scalar_mul(losses[t], w[t]);
          combined = combined < 0 ? term : tape.add(combined, term);
        }
        rec.applied_weights = std::move(w);
        break;
      }
      case WeightingKind::GLS: {
        combined = gls_combined_loss(tape, losses);
        double total = tape.value(combined)[0];
        for (int t = 0; t < tasks; ++t) {
          rec.applied_weights.push_back(
              total / (tasks * std::max(loss_vals[t], 1e-12)));
        }
        break;
      }
      case WeightingKind::RLW: {
        std::vector<double> w = rlw_weights(state, tasks);
        for (int t = 0; t < tasks; ++t) {
          NodeId term = tape.scalar_mul(losses[t], w[t]);
          combined = combined < 0 ? term : tape.add(combined, term);
        }
        rec.applied_weights = std::move(w);
        break;
      }
      default:
        break;
    }
    if (fp.aux_loss >= 0) combined = tape.add(combined, fp.aux_loss);
    state.step += 1;
    tape.zero_grads();
    tape.backward(combined);
    pull_bound_grads();
    for (std::size_t i = 0; i < uw_leaves.size(); ++i) {
      state.uw_log_vars[i].grad = tape.grad(uw_leaves[i]);
    }
  } else {
    std::vector<std::vector<Tensor>> stash;
    GradientBundle bundle =
        collect_task_gradients(tape, fp, model, losses, cfg.mode, &stash);
    AggregationResult agg = aggregate(bundle, state);
    for (double v : agg.direction) {
      if (!std::isfinite(v)) {
        return abort_step("non-finite aggregated direction",
                          std::move(loss_vals));
      }
    }
    rec.applied_weights = agg.applied_weights;
    rec.elementwise = agg.elementwise;

    if (cfg.mode == GradMode::ParamGrad) {
      // Shared parameters take the aggregated direction; task heads keep
      // their plain per-task gradients.
      const double* src = agg.direction.data();
      for (Parameter* p : model.shared_params()) {
        std::copy(src, src + p->value.size(), p->grad.data());
        src += p->value.size();
      }
    } else {
      // One backward from sum_t <slice_t, rep_t> carries the aggregated
      // representation gradient into the shared parameters.
      NodeId surrogate = -1;
      for (int t = 0; t < model.task_count(); ++t) {
        const Tensor& rep = tape.value(fp.reps[t]);
        Tensor g = Tensor::zeros(rep.shape());
        auto slice = agg.task_direction(t, bundle.dim);
        std::copy(slice.begin(), slice.end(), g.data());
        NodeId term = tape.sum(tape.mul(fp.reps[t], tape.leaf(std::move(g))));
        surrogate = surrogate < 0 ? term : tape.add(surrogate, term);
      }
      tape.zero_grads();
      tape.backward(surrogate);
      pull_bound_grads();
    }
    for (int t = 0; t < model.task_count(); ++t) {
      std::vector<Parameter*> tp = model.task_params(t);
      for (std::size_t i = 0; i < tp.size(); ++i) tp[i]->grad = stash[t][i];
    }
  }

  opt.step();
  return rec;
}

// --- experiment loop -----------------------------------------------------

namespace {

std::vector<Tensor> gather_rows(const Tensor& src,
                                const std::vector<int>& idx) {
  int d = src.cols();
  Tensor out = Tensor::zeros({static_cast<int>(idx.size()), d});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    for (int j = 0; j < d; ++j) {
      out.at(static_cast<int>(i), j) = src.at(idx[i], j);
    }
  }
  return {out};
}

std::vector<std::vector<int>> chunk_indices(const std::vector<int>& idx,
                                            int bs) {
  std::vector<std::vector<int>> out;
  for (std::size_t i = 0; i < idx.size(); i += bs) {
    std::size_t j = std::min(idx.size(), i + static_cast<std::size_t>(bs));
    out.emplace_back(idx.begin() + i, idx.begin() + j);
  }
  return out;
}

std::vector<double> evaluate(MultiTaskModel& model, const MultiTaskDataset& ds,
                             const std::vector<TaskSpec>& specs,
                             const std::vector<std::vector<int>>& val_idx,
                             int batch_size, bool multi_input) {
  int tasks = model.task_count();
  std::vector<double> acc(tasks, 0.0), weight(tasks, 0.0);

  if (!multi_input) {
    for (const auto& chunk : chunk_indices(val_idx[0], batch_size)) {
      Tensor x = gather_rows(ds.tasks[0].inputs, chunk)[0];
      Tape tape;
      ForwardPass fp = model.forward(tape, x);
      for (int t = 0; t < tasks; ++t) {
        Tensor y = Tensor::zeros({static_cast<int>(chunk.size()),
                                  ds.tasks[t].targets.cols()});
        for (std::size_t i = 0; i < chunk.size(); ++i) {
          for (int j = 0; j < y.cols(); ++j) {
            y.at(static_cast<int>(i), j) = ds.tasks[t].targets.at(chunk[i], j);
          }
        }
        double m = compute_metric(specs[t], tape.value(fp.outputs[t]), y);
        acc[t] += m * chunk.size();
        weight[t] += chunk.size();
      }
    }
  } else {
    for (int t = 0; t < tasks; ++t) {
      for (const auto& chunk : chunk_indices(val_idx[t], batch_size)) {
        Tensor x = gather_rows(ds.tasks[t].inputs, chunk)[0];
        Tape tape;
        ForwardPass fp = model.forward_multi(
            tape, std::vector<Tensor>(static_cast<std::size_t>(tasks), x));
        Tensor y = Tensor::zeros({static_cast<int>(chunk.size()),
                                  ds.tasks[t].targets.cols()});
        for (std::size_t i = 0; i < chunk.size(); ++i) {
          for (int j = 0; j < y.cols(); ++j) {
            y.at(static_cast<int>(i), j) = ds.tasks[t].targets.at(chunk[i], j);
          }
        }
        double m = compute_metric(specs[t], tape.value(fp.outputs[t]), y);
        acc[t] += m * chunk.size();
        weight[t] += chunk.size();
      }
    }
  }
  for (int t = 0; t < tasks; ++t) acc[t] /= std::max(weight[t], 1.0);
  return acc;
}

}  // namespace

long long count_parameters(const MultiTaskModel& model) {
  return model.count_parameters();
}

RunReport run_experiment(const TrainConfig& cfg, const MultiTaskDataset& ds) {
  cfg.validate();
  if (ds.task_count() < 1) {
    throw std::invalid_argument("run: dataset has no tasks");
  }
  if (ds.single_input == cfg.multi_input) {
    throw std::invalid_argument(
        ds.single_input
            ? "run: single-input dataset requires multi_input=false"
            : "run: multi-input dataset requires multi_input=true");
  }
  int tasks = ds.task_count();
  std::vector<TaskSpec> specs;
  for (const TaskData& td : ds.tasks) {
    td.spec.validate();
    specs.push_back(td.spec);
    if (td.samples() < 5) {
      throw std::invalid_argument("run: task '" + td.spec.name +
                                  "' needs at least 5 samples");
    }
  }

  ArchSpec arch = cfg.arch;
  arch.input_dim = ds.input_dim();
  arch.task_head_dims.clear();
  for (const TaskSpec& s : specs) arch.task_head_dims.push_back(s.output_dim);
  arch.validate(tasks);

  auto model = MultiTaskModel::build(arch, tasks, derive_seed(cfg.seed, 1));
  WeightingState state = WeightingState::make(
      cfg.weighting, tasks, derive_seed(cfg.seed, 2), cfg.hyper);

  // 80/20 train/validation split from a seeded permutation; single-input
  // tasks share one split.
  std::vector<std::vector<int>> train_idx(tasks), val_idx(tasks);
  for (int t = 0; t < tasks; ++t) {
    if (ds.single_input && t > 0) {
      train_idx[t] = train_idx[0];
      val_idx[t] = val_idx[0];
      continue;
    }
    int n = ds.tasks[t].samples();
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(derive_seed(cfg.seed, 4 + t));
    rng.shuffle(perm);
    int val_n = std::max(
        1, static_cast<int>(std::floor(cfg.val_fraction * n + 0.5)));
    val_n = std::min(val_n, n - 1);
    val_idx[t].assign(perm.begin(), perm.begin() + val_n);
    train_idx[t].assign(perm.begin() + val_n, perm.end());
  }

  std::vector<Parameter*> opt_params = model->all_params();
  for (Parameter& p : state.uw_log_vars) opt_params.push_back(&p);
  Optimizer opt(cfg.optim, std::move(opt_params));

  RunReport rep;
  rep.config_json = train_config_to_json(cfg, ds.provenance_json);
  for (const TaskSpec& s : specs) rep.task_names.push_back(s.name);
  rep.param_count = model->count_parameters();
  rep.trace_csv = cfg.trace_weights ? "step,epoch,task,weight\n" : "";

  auto t0 = std::chrono::steady_clock::now();
  rep.initial_val_metrics =
      evaluate(*model, ds, specs, val_idx, cfg.batch_size, cfg.multi_input);

  long long global_step = 0;
  for (int epoch = 0; epoch < cfg.epochs && !rep.aborted; ++epoch) {
    EpochBatches batches(ds, train_idx, cfg.batch_size,
                         derive_seed(cfg.seed, 1000 + epoch));
    std::vector<double> loss_acc(tasks, 0.0), loss_w(tasks, 0.0);
    for (int s = 0; s < batches.steps(); ++s) {
      StepBatch sb = batches.get(s);
      StepRecord sr = train_step(*model, sb, specs, state, cfg, opt);
      if (global_step == 0) rep.step0_total_loss = sr.total_loss;
      if (!sr.ok) {
        rep.aborted = true;
        rep.abort_reason = sr.failure;
        break;
      }
      for (int t = 0; t < tasks; ++t) {
        loss_acc[t] += sr.task_losses[t] * sb.sizes[t];
        loss_w[t] += sb.sizes[t];
      }
      if (cfg.trace_weights) {
        for (int t = 0; t < tasks; ++t) {
          rep.trace_csv += std::to_string(global_step) + "," +
                           std::to_string(epoch) + "," + specs[t].name + ",";
          rep.trace_csv += sr.elementwise
                               ? std::string("elementwise")
                               : JsonWriter::format_double(
                                     sr.applied_weights.empty()
                                         ? 1.0
                                         : sr.applied_weights[t]);
          rep.trace_csv += "\n";
        }
      }
      ++global_step;
    }
    if (rep.aborted) break;

    std::vector<TaskEpochRecord> er(tasks);
    std::vector<double> mean_losses(tasks);
    std::vector<double> val =
        evaluate(*model, ds, specs, val_idx, cfg.batch_size, cfg.multi_input);
    for (int t = 0; t < tasks; ++t) {
      mean_losses[t] = loss_acc[t] / std::max(loss_w[t], 1.0);
      er[t].train_loss = mean_losses[t];
      er[t].val_metric = val[t];
    }
    rep.epochs.push_back(std::move(er));
    state.push_epoch_losses(std::move(mean_losses));
  }

  rep.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  rep.degenerate_events = state.degenerate_events;
  return rep;
}

}  // namespace mtl
