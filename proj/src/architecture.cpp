// SPDX-License-Identifier: Apache-2.0

#include "mtl/architecture.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace mtl {

const char* arch_name(ArchKind k) {
  switch (k) {
    case ArchKind::HPS: return "HPS";
    case ArchKind::CrossStitch: return "CrossStitch";
    case ArchKind::MMoE: return "MMoE";
    case ArchKind::MTAN: return "MTAN";
    case ArchKind::CGC: return "CGC";
    case ArchKind::PLE: return "PLE";
    case ArchKind::DSelectK: return "DSelectK";
  }
  return "?";
}

ArchKind arch_from(const std::string& s) {
  static const std::pair<const char*, ArchKind> table[] = {
      {"HPS", ArchKind::HPS},         {"CrossStitch", ArchKind::CrossStitch},
      {"MMoE", ArchKind::MMoE},       {"MTAN", ArchKind::MTAN},
      {"CGC", ArchKind::CGC},         {"PLE", ArchKind::PLE},
      {"DSelectK", ArchKind::DSelectK},
  };
  for (const auto& [name, kind] : table) {
    if (s == name) return kind;
  }
  throw std::invalid_argument(
      "unknown architecture '" + s +
      "' (expected HPS|CrossStitch|MMoE|MTAN|CGC|PLE|DSelectK)");
}

namespace {

bool is_pow2(int v) { return v > 0 && (v & (v - 1)) == 0; }

int next_pow2(int v) {
  int p = 1;
  while (p < v) p <<= 1;
  return p;
}

}  // namespace

void ArchSpec::validate(int tasks) const {
  auto bad = [](const std::string& msg) {
    throw std::invalid_argument("ArchSpec: " + msg);
  };
  if (tasks < 1) bad("task count must be >= 1");
  if (input_dim < 1) bad("input_dim must be >= 1");
  if (rep_dim < 1) bad("rep_dim must be >= 1");
  for (int h : hidden_dims) {
    if (h < 1) bad("hidden_dims entries must be >= 1");
  }
  if (static_cast<int>(task_head_dims.size()) != tasks) {
    bad("task_head_dims must have one entry per task");
  }
  for (int h : task_head_dims) {
    if (h < 1) bad("task_head_dims entries must be >= 1");
  }
  switch (kind) {
    case ArchKind::MMoE:
      if (num_shared_experts < 1) bad("MMoE needs num_shared_experts >= 1");
      break;
    case ArchKind::CGC:
      if (num_shared_experts < 1) bad("CGC needs num_shared_experts >= 1");
      if (num_task_experts < 0) bad("CGC needs num_task_experts >= 0");
      break;
    case ArchKind::PLE:
      if (num_shared_experts < 1) bad("PLE needs num_shared_experts >= 1");
      if (num_task_experts < 0) bad("PLE needs num_task_experts >= 0");
      if (num_levels < 1) bad("PLE needs num_levels >= 1");
      break;
    case ArchKind::DSelectK: {
      if (num_shared_experts < 1) bad("DSelectK needs num_shared_experts >= 1");
      int k_eff = next_pow2(num_shared_experts);
      if (!is_pow2(k_eff)) bad("DSelectK expert count not a power of 2 after padding");
      if (top_k < 1 || top_k > k_eff) {
        bad("DSelectK needs 1 <= top_k <= padded expert count");
      }
      if (gamma <= 0.0) bad("DSelectK needs gamma > 0");
      break;
    }
    default:
      break;
  }
}

NodeId ForwardPass::leaf_of(const Parameter* p) const {
  for (std::size_t i = 0; i < bound_params.size(); ++i) {
    if (bound_params[i] == p) return bound_leaves[i];
  }
  throw std::invalid_argument("ForwardPass: parameter was not bound");
}

// --- parameter bookkeeping --------------------------------------------------

namespace {

// Parameters live in per-pool vectors that grow during construction, so
// model structure holds indices instead of pointers.
struct PRef {
  int pool = -1;  // -1 shared, otherwise task index
  int idx = -1;
};

struct DenseRefs {
  PRef w, b;
  int in = 0, out = 0;
};

struct MlpRefs {
  std::vector<DenseRefs> layers;
};

enum class Init { Xavier, Zero };

}  // namespace

struct PassBuilder {
  Tape& tape;
  MultiTaskModel& model;
  ForwardPass& fp;
  std::map<const Parameter*, NodeId> cache;

  Parameter& resolve(PRef r) {
    return r.pool < 0 ? model.shared_[r.idx] : model.task_[r.pool][r.idx];
  }

  NodeId bind(PRef r) {
    Parameter& p = resolve(r);
    auto it = cache.find(&p);
    if (it != cache.end()) return it->second;
    NodeId id = tape.leaf(p.value, true);
    cache.emplace(&p, id);
    fp.bound_params.push_back(&p);
    fp.bound_leaves.push_back(id);
    return id;
  }

  NodeId dense(NodeId x, const DenseRefs& d) {
    return tape.add(tape.matmul(x, bind(d.w)), bind(d.b));
  }

  /// Hidden layers take relu; the last layer stays linear.
  NodeId mlp(NodeId x, const MlpRefs& m) {
    NodeId h = x;
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
      h = dense(h, m.layers[l]);
      if (l + 1 < m.layers.size()) h = tape.relu(h);
    }
    return h;
  }
};

namespace {

/// Construction-time factory; the creation order is fixed so that a seed
/// fully determines every parameter.
class ParamFactory {
 public:
  ParamFactory(std::vector<Parameter>& shared,
               std::vector<std::vector<Parameter>>& task, Rng& rng)
      : shared_(shared), task_(task), rng_(rng) {}

  PRef add(int pool, const std::string& name, std::vector<int> shape,
           Init init, int fan_in = 0, int fan_out = 0) {
    Parameter p;
    p.name = name;
    p.value = Tensor::zeros(shape);
    p.grad = Tensor::zeros(shape);
    if (init == Init::Xavier) {
      double bound = std::sqrt(6.0 / (fan_in + fan_out));
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        p.value[i] = rng_.uniform(-bound, bound);
      }
    }
    if (pool < 0) {
      shared_.push_back(std::move(p));
      return {-1, static_cast<int>(shared_.size()) - 1};
    }
    task_[pool].push_back(std::move(p));
    return {pool, static_cast<int>(task_[pool].size()) - 1};
  }

  DenseRefs dense(int pool, const std::string& name, int in, int out,
                  Init w_init = Init::Xavier) {
    DenseRefs d;
    d.in = in;
    d.out = out;
    d.w = add(pool, name + ".w", {in, out}, w_init, in, out);
    d.b = add(pool, name + ".b", {out}, Init::Zero);
    return d;
  }

  MlpRefs mlp(int pool, const std::string& name, int in,
              const std::vector<int>& hidden, int out) {
    MlpRefs m;
    int prev = in;
    for (std::size_t l = 0; l < hidden.size(); ++l) {
      m.layers.push_back(
          dense(pool, name + ".l" + std::to_string(l), prev, hidden[l]));
      prev = hidden[l];
    }
    m.layers.push_back(
        dense(pool, name + ".l" + std::to_string(hidden.size()), prev, out));
    return m;
  }

 private:
  std::vector<Parameter>& shared_;
  std::vector<std::vector<Parameter>>& task_;
  Rng& rng_;
};

std::vector<DenseRefs> make_heads(ParamFactory& f, const ArchSpec& spec,
                                  int tasks) {
  std::vector<DenseRefs> heads;
  for (int t = 0; t < tasks; ++t) {
    heads.push_back(f.dense(t, "head" + std::to_string(t), spec.rep_dim,
                            spec.task_head_dims[t]));
  }
  return heads;
}

}  // namespace

// --- shared base helpers ------------------------------------------------

std::vector<Parameter*> MultiTaskModel::shared_params() {
  std::vector<Parameter*> out;
  for (auto& p : shared_) out.push_back(&p);
  return out;
}

std::vector<Parameter*> MultiTaskModel::task_params(int t) {
  std::vector<Parameter*> out;
  for (auto& p : task_[t]) out.push_back(&p);
  return out;
}

std::vector<Parameter*> MultiTaskModel::all_params() {
  std::vector<Parameter*> out = shared_params();
  for (int t = 0; t < tasks_; ++t) {
    for (auto& p : task_[t]) out.push_back(&p);
  }
  return out;
}

long long MultiTaskModel::count_parameters() const {
  long long n = 0;
  for (const auto& p : shared_) n += static_cast<long long>(p.value.size());
  for (const auto& pool : task_) {
    for (const auto& p : pool) n += static_cast<long long>(p.value.size());
  }
  return n;
}

ForwardPass MultiTaskModel::forward_multi(Tape& tape,
                                          const std::vector<Tensor>& xs) {
  (void)tape;
  (void)xs;
  throw std::invalid_argument(std::string(arch_name(spec_.kind)) +
                              ": multi-input forward not supported");
}

// --- HPS ---------------------------------------------------------------

namespace {

class HpsModel final : public MultiTaskModel {
 public:
  HpsModel(const ArchSpec& spec, int tasks, uint64_t seed)
      : MultiTaskModel(spec, tasks) {
    task_.resize(tasks);
    Rng rng(seed);
    ParamFactory f(shared_, task_, rng);
    backbone_ = f.mlp(-1, "backbone", spec.input_dim, spec.hidden_dims,
                      spec.rep_dim);
    heads_ = make_heads(f, spec, tasks);
  }

  ForwardPass forward(Tape& tape, const Tensor& x) override {
    return run(tape, std::vector<NodeId>(tasks_, tape.leaf(x)));
  }

  ForwardPass forward_multi(Tape& tape, const std::vector<Tensor>& xs) override {
    std::vector<NodeId> nodes;
    for (const Tensor& x : xs) nodes.push_back(tape.leaf(x));
    return run(tape, nodes);
  }

 private:
  ForwardPass run(Tape& tape, const std::vector<NodeId>& x_nodes) {
    ForwardPass fp;
    PassBuilder b{tape, *this, fp, {}};
    std::map<NodeId, NodeId> rep_memo;
    for (int t = 0; t < tasks_; ++t) {
      NodeId x = x_nodes[t];
      auto it = rep_memo.find(x);
      NodeId rep = it != rep_memo.end() ? it->second : b.mlp(x, backbone_);
      rep_memo.emplace(x, rep);
      fp.reps.push_back(rep);
      fp.outputs.push_back(b.dense(rep, heads_[t]));
    }
    return fp;
  }

  MlpRefs backbone_;
  std::vector<DenseRefs> heads_;
};

// --- Cross-stitch --------------------------------------------------------

// Per-task towers mixed by a learnable T x T stitch matrix after every
// layer. Every tower influences every task through the stitches, so towers
// and stitch units are all task-shared.
class CrossStitchModel final : public MultiTaskModel {
 public:
  CrossStitchModel(const ArchSpec& spec, int tasks, uint64_t seed)
      : MultiTaskModel(spec, tasks) {
    task_.resize(tasks);
    Rng rng(seed);
    ParamFactory f(shared_, task_, rng);
    for (int t = 0; t < tasks; ++t) {
      towers_.push_back(f.mlp(-1, "tower" + std::to_string(t), spec.input_dim,
                              spec.hidden_dims, spec.rep_dim));
    }
    int layers = static_cast<int>(spec.hidden_dims.size()) + 1;
    for (int l = 0; l < layers; ++l) {
      PRef s = f.add(-1, "stitch" + std::to_string(l), {tasks, tasks},
                     Init::Zero);
      // diag 0.9, off-diag 0.1/(T-1); a single tower keeps identity
      Parameter& p = shared_[s.idx];
      for (int i = 0; i < tasks; ++i) {
        for (int j = 0; j < tasks; ++j) {
          p.value.at(i, j) =
              i == j ? (tasks == 1 ? 1.0 : 0.9) : 0.1 / (tasks - 1);
        }
      }
      stitches_.push_back(s);
    }
    heads_ = make_heads(f, spec, tasks);
  }

  ForwardPass forward(Tape& tape, const Tensor& x) override {
    ForwardPass fp;
    PassBuilder b{tape, *this, fp, {}};
    NodeId xin = tape.leaf(x);
    std::vector<NodeId> act(tasks_, xin);
    int layers = static_cast<int>(spec_.hidden_dims.size()) + 1;
    for (int l = 0; l < layers; ++l) {
      std::vector<NodeId> z(tasks_);
      for (int t = 0; t < tasks_; ++t) {
        z[t] = b.dense(act[t], towers_[t].layers[l]);
        if (l + 1 < layers) z[t] = tape.relu(z[t]);
      }
      NodeId s = b.bind(stitches_[l]);
      for (int i = 0; i < tasks_; ++i) {
        NodeId mixed = -1;
        for (int j = 0; j < tasks_; ++j) {
          NodeId sij = tape.slice_cols(tape.slice_rows(s, i, i + 1), j, j + 1);
          NodeId term = tape.scale_all(z[j], sij);
          mixed = mixed < 0 ? term : tape.add(mixed, term);
        }
        act[i] = mixed;
      }
    }
    for (int t = 0; t < tasks_; ++t) {
      fp.reps.push_back(act[t]);
      fp.outputs.push_back(b.dense(act[t], heads_[t]));
    }
    return fp;
  }

 private:
  std::vector<MlpRefs> towers_;
  std::vector<PRef> stitches_;
  std::vector<DenseRefs> heads_;
};

// --- MMoE ----------------------------------------------------------------

class MmoeModel final : public MultiTaskModel {
 public:
  MmoeModel(const ArchSpec& spec, int tasks, uint64_t seed)
      : MultiTaskModel(spec, tasks) {
    task_.resize(tasks);
    Rng rng(seed);
    ParamFactory f(shared_, task_, rng);
    for (int k = 0; k < spec.num_shared_experts; ++k) {
      experts_.push_back(f.mlp(-1, "expert" + std::to_string(k),
                               spec.input_dim, spec.hidden_dims, spec.rep_dim));
    }
    for (int t = 0; t < tasks; ++t) {
      gates_.push_back(f.dense(t, "gate" + std::to_string(t), spec.input_dim,
                               spec.num_shared_experts, Init::Zero));
    }
    heads_ = make_heads(f, spec, tasks);
  }

  ForwardPass forward(Tape& tape, const Tensor& x) override {
    return run(tape, std::vector<NodeId>(tasks_, tape.leaf(x)));
  }

  ForwardPass forward_multi(Tape& tape, const std::vector<Tensor>& xs) override {
    std::vector<NodeId> nodes;
    for (const Tensor& x : xs) nodes.push_back(tape.leaf(x));
    return run(tape, nodes);
  }

 private:
  ForwardPass run(Tape& tape, const std::vector<NodeId>& x_nodes) {
    ForwardPass fp;
    PassBuilder b{tape, *this, fp, {}};
    int K = spec_.num_shared_experts;
    std::map<NodeId, std::vector<NodeId>> expert_memo;
    for (int t = 0; t < tasks_; ++t) {
      NodeId x = x_nodes[t];
      auto it = expert_memo.find(x);
      if (it == expert_memo.end()) {
        std::vector<NodeId> outs;
        for (int k = 0; k < K; ++k) outs.push_back(b.mlp(x, experts_[k]));
        it = expert_memo.emplace(x, std::move(outs)).first;
      }
      NodeId gate = tape.softmax_rows(b.dense(x, gates_[t]));
      NodeId rep = -1;
      for (int k = 0; k < K; ++k) {
        NodeId term =
            tape.scale_rows(it->second[k], tape.slice_cols(gate, k, k + 1));
        rep = rep < 0 ? term : tape.add(rep, term);
      }
      fp.reps.push_back(rep);
      fp.outputs.push_back(b.dense(rep, heads_[t]));
    }
    return fp;
  }

  std::vector<MlpRefs> experts_;
  std::vector<DenseRefs> gates_;
  std::vector<DenseRefs> heads_;
};

// --- MTAN (dense adaptation) ----------------------------------------------

// Sigmoid attention masks over the shared hidden activations; the task path
// re-projects masked features to the next layer's width. The shared
// representation is the backbone's final activation.
class MtanModel final : public MultiTaskModel {
 public:
  MtanModel(const ArchSpec& spec, int tasks, uint64_t seed)
      : MultiTaskModel(spec, tasks) {
    task_.resize(tasks);
    Rng rng(seed);
    ParamFactory f(shared_, task_, rng);
    dims_ = spec.hidden_dims;
    dims_.push_back(spec.rep_dim);
    backbone_ = f.mlp(-1, "backbone", spec.input_dim, spec.hidden_dims,
                      spec.rep_dim);
    int layers = static_cast<int>(dims_.size());
    attn_.resize(tasks);
    trans_.resize(tasks);
    for (int t = 0; t < tasks; ++t) {
      for (int l = 0; l < layers; ++l) {
        int nl = dims_[l];
        int in = l == 0 ? nl : 2 * nl;
        attn_[t].push_back(f.dense(
            t, "attn" + std::to_string(t) + "_" + std::to_string(l), in, nl));
        int out = l + 1 < layers ? dims_[l + 1] : dims_[l];
        trans_[t].push_back(f.dense(
            t, "trans" + std::to_string(t) + "_" + std::to_string(l), nl, out));
      }
    }
    heads_ = make_heads(f, spec, tasks);
  }

  ForwardPass forward(Tape& tape, const Tensor& x) override {
    return run(tape, std::vector<NodeId>(tasks_, tape.leaf(x)));
  }

  ForwardPass forward_multi(Tape& tape, const std::vector<Tensor>& xs) override {
    std::vector<NodeId> nodes;
    for (const Tensor& x : xs) nodes.push_back(tape.leaf(x));
    return run(tape, nodes);
  }

 private:
  ForwardPass run(Tape& tape, const std::vector<NodeId>& x_nodes) {
    ForwardPass fp;
    PassBuilder b{tape, *this, fp, {}};
    int layers = static_cast<int>(dims_.size());

    // Backbone activations per distinct input.
    std::map<NodeId, std::vector<NodeId>> h_memo;
    for (int t = 0; t < tasks_; ++t) {
      NodeId x = x_nodes[t];
      if (h_memo.count(x)) continue;
      std::vector<NodeId> hs;
      NodeId h = x;
      for (int l = 0; l < layers; ++l) {
        h = b.dense(h, backbone_.layers[l]);
        if (l + 1 < layers) h = tape.relu(h);
        hs.push_back(h);
      }
      h_memo.emplace(x, std::move(hs));
    }

    for (int t = 0; t < tasks_; ++t) {
      const std::vector<NodeId>& hs = h_memo[x_nodes[t]];
      NodeId f_prev = -1;
      for (int l = 0; l < layers; ++l) {
        NodeId attn_in = l == 0 ? hs[l] : tape.concat_cols(hs[l], f_prev);
        NodeId mask = tape.sigmoid(b.dense(attn_in, attn_[t][l]));
        NodeId masked = tape.mul(mask, hs[l]);
        NodeId ft = b.dense(masked, trans_[t][l]);
        if (l + 1 < layers) ft = tape.relu(ft);
        f_prev = ft;
      }
      fp.reps.push_back(hs[layers - 1]);
      fp.outputs.push_back(b.dense(f_prev, heads_[t]));
    }
    return fp;
  }

  std::vector<int> dims_;
  MlpRefs backbone_;
  std::vector<std::vector<DenseRefs>> attn_;
  std::vector<std::vector<DenseRefs>> trans_;
  std::vector<DenseRefs> heads_;
};

// --- CGC / PLE -------------------------------------------------------------

// Stacked gate-control levels. CGC is the single-level case. At levels below
// the last, a shared gate mixes every expert to feed the next level's shared
// path, which makes those task experts (and, with 3+ levels, early task
// gates) reach other tasks' outputs; such parameters are kept in the shared
// pool so that psi_t holds exactly the parameters that only influence task t.
class PleModel final : public MultiTaskModel {
 public:
  PleModel(const ArchSpec& spec, int tasks, uint64_t seed, int levels)
      : MultiTaskModel(spec, tasks), levels_(levels) {
    task_.resize(tasks);
    Rng rng(seed);
    ParamFactory f(shared_, task_, rng);
    shared_experts_.resize(levels_);
    task_experts_.resize(levels_);
    task_gates_.resize(levels_);
    shared_gates_.resize(levels_);
    int ks = spec.num_shared_experts, kt = spec.num_task_experts;
    for (int l = 0; l < levels_; ++l) {
      int in = l == 0 ? spec.input_dim : spec.rep_dim;
      bool last = l + 1 == levels_;
      std::string lv = "lv" + std::to_string(l);
      for (int k = 0; k < ks; ++k) {
        shared_experts_[l].push_back(f.mlp(-1, lv + ".sexp" + std::to_string(k),
                                           in, spec.hidden_dims, spec.rep_dim));
      }
      task_experts_[l].resize(tasks);
      for (int t = 0; t < tasks; ++t) {
        int pool = last ? t : -1;
        for (int k = 0; k < kt; ++k) {
          task_experts_[l][t].push_back(
              f.mlp(pool, lv + ".texp" + std::to_string(t) + "_" +
                              std::to_string(k),
                    in, spec.hidden_dims, spec.rep_dim));
        }
      }
      for (int t = 0; t < tasks; ++t) {
        int pool = l >= levels_ - 2 ? t : -1;
        task_gates_[l].push_back(f.dense(pool,
                                         lv + ".gate" + std::to_string(t), in,
                                         ks + kt, Init::Zero));
      }
      if (!last) {
        shared_gates_[l] = f.dense(-1, lv + ".sgate", in, ks + tasks * kt,
                                   Init::Zero);
      }
    }
    heads_ = make_heads(f, spec, tasks);
  }

  ForwardPass forward(Tape& tape, const Tensor& x) override {
    return run(tape, std::vector<NodeId>(tasks_, tape.leaf(x)));
  }

  ForwardPass forward_multi(Tape& tape, const std::vector<Tensor>& xs) override {
    std::vector<NodeId> nodes;
    for (const Tensor& x : xs) nodes.push_back(tape.leaf(x));
    return run(tape, nodes);
  }

 private:
  static NodeId gate_mix(Tape& tape, NodeId gate,
                         const std::vector<NodeId>& expert_outs) {
    NodeId rep = -1;
    for (std::size_t k = 0; k < expert_outs.size(); ++k) {
      NodeId term = tape.scale_rows(
          expert_outs[k],
          tape.slice_cols(gate, static_cast<int>(k), static_cast<int>(k) + 1));
      rep = rep < 0 ? term : tape.add(rep, term);
    }
    return rep;
  }

  ForwardPass run(Tape& tape, const std::vector<NodeId>& x_nodes) {
    ForwardPass fp;
    PassBuilder b{tape, *this, fp, {}};
    int ks = spec_.num_shared_experts, kt = spec_.num_task_experts;

    // Task paths are per (task, own input); the shared path is keyed by the
    // input node so single-input builds it once.
    std::map<NodeId, NodeId> s_path;
    std::vector<NodeId> p_path(tasks_);
    for (int t = 0; t < tasks_; ++t) {
      p_path[t] = x_nodes[t];
      s_path.emplace(x_nodes[t], x_nodes[t]);
    }

    for (int l = 0; l < levels_; ++l) {
      bool last = l + 1 == levels_;
      std::map<NodeId, std::vector<NodeId>> sexp_memo;
      auto shared_outs = [&](NodeId sin) -> const std::vector<NodeId>& {
        auto it = sexp_memo.find(sin);
        if (it == sexp_memo.end()) {
          std::vector<NodeId> outs;
          for (int k = 0; k < ks; ++k) {
            outs.push_back(b.mlp(sin, shared_experts_[l][k]));
          }
          it = sexp_memo.emplace(sin, std::move(outs)).first;
        }
        return it->second;
      };

      std::vector<std::vector<NodeId>> texp_outs(tasks_);
      for (int t = 0; t < tasks_; ++t) {
        for (int k = 0; k < kt; ++k) {
          texp_outs[t].push_back(b.mlp(p_path[t], task_experts_[l][t][k]));
        }
      }

      std::vector<NodeId> p_new(tasks_);
      for (int t = 0; t < tasks_; ++t) {
        NodeId sin = s_path[x_nodes[t]];
        std::vector<NodeId> pool = shared_outs(sin);
        for (NodeId e : texp_outs[t]) pool.push_back(e);
        NodeId gate = tape.softmax_rows(b.dense(p_path[t], task_gates_[l][t]));
        p_new[t] = gate_mix(tape, gate, pool);
      }

      if (!last) {
        std::map<NodeId, NodeId> s_new;
        for (int t = 0; t < tasks_; ++t) {
          NodeId xin = x_nodes[t];
          NodeId sin = s_path[xin];
          if (s_new.count(xin)) continue;
          std::vector<NodeId> pool = shared_outs(sin);
          for (int u = 0; u < tasks_; ++u) {
            // The shared gate mixes all experts; in multi-input mode each
            // task's shared path evaluates them on its own batch.
            if (x_nodes[u] == xin) {
              for (NodeId e : texp_outs[u]) pool.push_back(e);
            } else {
              for (int k = 0; k < kt; ++k) {
                pool.push_back(b.mlp(s_path[xin], task_experts_[l][u][k]));
              }
            }
          }
          NodeId gate = tape.softmax_rows(b.dense(sin, shared_gates_[l]));
          s_new.emplace(xin, gate_mix(tape, gate, pool));
        }
        s_path = std::move(s_new);
      }
      p_path = std::move(p_new);
    }

    for (int t = 0; t < tasks_; ++t) {
      fp.reps.push_back(p_path[t]);
      fp.outputs.push_back(b.dense(p_path[t], heads_[t]));
    }
    return fp;
  }

  int levels_;
  std::vector<std::vector<MlpRefs>> shared_experts_;            // [level][k]
  std::vector<std::vector<std::vector<MlpRefs>>> task_experts_;  // [level][t][k]
  std::vector<std::vector<DenseRefs>> task_gates_;               // [level][t]
  std::vector<DenseRefs> shared_gates_;                          // [level]
  std::vector<DenseRefs> heads_;
};

// --- DSelect-k ---------------------------------------------------------------

class DselectkModel final : public MultiTaskModel {
 public:
  DselectkModel(const ArchSpec& spec, int tasks, uint64_t seed)
      : MultiTaskModel(spec, tasks) {
    k_eff_ = next_pow2(spec.num_shared_experts);
    bits_ = 0;
    while ((1 << bits_) < k_eff_) ++bits_;
    task_.resize(tasks);
    Rng rng(seed);
    ParamFactory f(shared_, task_, rng);
    for (int k = 0; k < k_eff_; ++k) {
      experts_.push_back(f.mlp(-1, "expert" + std::to_string(k),
                               spec.input_dim, spec.hidden_dims, spec.rep_dim));
    }
    for (int t = 0; t < tasks; ++t) {
      if (bits_ > 0) {
        z_layers_.push_back(f.dense(t, "zsel" + std::to_string(t),
                                    spec.input_dim, spec.top_k * bits_,
                                    Init::Zero));
      }
      w_layers_.push_back(f.dense(t, "wslot" + std::to_string(t),
                                  spec.input_dim, spec.top_k, Init::Zero));
    }
    heads_ = make_heads(f, spec, tasks);
  }

  ForwardPass forward(Tape& tape, const Tensor& x) override {
    return run(tape, std::vector<NodeId>(tasks_, tape.leaf(x)));
  }

  ForwardPass forward_multi(Tape& tape, const std::vector<Tensor>& xs) override {
    std::vector<NodeId> nodes;
    for (const Tensor& x : xs) nodes.push_back(tape.leaf(x));
    return run(tape, nodes);
  }

 private:
  /// Smooth-step on the tape: the cubic evaluated on the input clamped to
  /// [-gamma/2, gamma/2], exactly 0 / 1 at the band edges.
  NodeId smooth_step_node(Tape& tape, NodeId t) {
    double g = spec_.gamma;
    const Tensor& v = tape.value(t);
    NodeId half_g = tape.leaf(Tensor::filled(v.shape(), g / 2.0));
    NodeId lo = tape.relu(tape.add(t, half_g));          // t + g/2, floored at 0
    NodeId hi = tape.relu(tape.sub(t, half_g));          // overshoot above g/2
    NodeId clamped = tape.sub(tape.sub(lo, hi), half_g);  // in [-g/2, g/2]
    NodeId u2 = tape.mul(clamped, clamped);
    NodeId u3 = tape.mul(u2, clamped);
    NodeId s = tape.add(tape.scalar_mul(u3, -2.0 / (g * g * g)),
                        tape.scalar_mul(clamped, 3.0 / (2.0 * g)));
    return tape.add(s, tape.leaf(Tensor::filled(v.shape(), 0.5)));
  }

  ForwardPass run(Tape& tape, const std::vector<NodeId>& x_nodes) {
    ForwardPass fp;
    PassBuilder b{tape, *this, fp, {}};
    std::map<NodeId, std::vector<NodeId>> expert_memo;
    NodeId reg_acc = -1;

    for (int t = 0; t < tasks_; ++t) {
      NodeId x = x_nodes[t];
      auto it = expert_memo.find(x);
      if (it == expert_memo.end()) {
        std::vector<NodeId> outs;
        for (int k = 0; k < k_eff_; ++k) outs.push_back(b.mlp(x, experts_[k]));
        it = expert_memo.emplace(x, std::move(outs)).first;
      }
      NodeId z = bits_ > 0 ? b.dense(x, z_layers_[t]) : -1;  // n x (slots*bits)
      NodeId wsm = tape.softmax_rows(b.dense(x, w_layers_[t]));  // n x slots

      // Per-slot per-bit smooth-step selections.
      std::vector<std::vector<NodeId>> sel(spec_.top_k);
      for (int m = 0; m < spec_.top_k; ++m) {
        for (int bit = 0; bit < bits_; ++bit) {
          NodeId col = tape.slice_cols(z, m * bits_ + bit, m * bits_ + bit + 1);
          NodeId s = smooth_step_node(tape, col);
          sel[m].push_back(s);
          if (spec_.dselectk_reg_coeff > 0.0) {
            // Binary entropy of each selection pushes gates toward hard
            // top-k choices.
            NodeId one = tape.leaf(Tensor::filled(tape.value(s).shape(), 1.0));
            NodeId ent = tape.sub(
                tape.scalar_mul(tape.mul(s, tape.log_(s)), -1.0),
                tape.mul(tape.sub(one, s), tape.log_(tape.sub(one, s))));
            NodeId m_ent = tape.mean(ent);
            reg_acc = reg_acc < 0 ? m_ent : tape.add(reg_acc, m_ent);
          }
        }
      }

      NodeId rep = -1;
      for (int k = 0; k < k_eff_; ++k) {
        NodeId gate_k = -1;
        for (int m = 0; m < spec_.top_k; ++m) {
          NodeId prob = -1;
          for (int bit = 0; bit < bits_; ++bit) {
            NodeId s = sel[m][bit];
            NodeId factor;
            if ((k >> bit) & 1) {
              factor = s;
            } else {
              NodeId one = tape.leaf(Tensor::filled(tape.value(s).shape(), 1.0));
              factor = tape.sub(one, s);
            }
            prob = prob < 0 ? factor : tape.mul(prob, factor);
          }
          NodeId slot_w = tape.slice_cols(wsm, m, m + 1);
          NodeId term = prob < 0 ? slot_w : tape.mul(slot_w, prob);
          gate_k = gate_k < 0 ? term : tape.add(gate_k, term);
        }
        NodeId scaled = tape.scale_rows(it->second[k], gate_k);
        rep = rep < 0 ? scaled : tape.add(rep, scaled);
      }
      fp.reps.push_back(rep);
      fp.outputs.push_back(b.dense(rep, heads_[t]));
    }
    if (reg_acc >= 0) {
      fp.aux_loss = tape.scalar_mul(reg_acc, spec_.dselectk_reg_coeff);
    }
    return fp;
  }

  int k_eff_ = 0;
  int bits_ = 0;
  std::vector<MlpRefs> experts_;
  std::vector<DenseRefs> z_layers_;
  std::vector<DenseRefs> w_layers_;
  std::vector<DenseRefs> heads_;
};

}  // namespace

std::unique_ptr<MultiTaskModel> MultiTaskModel::build(const ArchSpec& spec,
                                                      int tasks,
                                                      uint64_t seed) {
  spec.validate(tasks);
  switch (spec.kind) {
    case ArchKind::HPS:
      return std::make_unique<HpsModel>(spec, tasks, seed);
    case ArchKind::CrossStitch:
      return std::make_unique<CrossStitchModel>(spec, tasks, seed);
    case ArchKind::MMoE:
      return std::make_unique<MmoeModel>(spec, tasks, seed);
    case ArchKind::MTAN:
      return std::make_unique<MtanModel>(spec, tasks, seed);
    case ArchKind::CGC:
      return std::make_unique<PleModel>(spec, tasks, seed, 1);
    case ArchKind::PLE:
      return std::make_unique<PleModel>(spec, tasks, seed, spec.num_levels);
    case ArchKind::DSelectK:
      return std::make_unique<DselectkModel>(spec, tasks, seed);
  }
  throw std::invalid_argument("build: unknown architecture kind");
}

double smooth_step(double t, double gamma) {
  if (t <= -gamma / 2.0) return 0.0;
  if (t >= gamma / 2.0) return 1.0;
  double g3 = gamma * gamma * gamma;
  return -2.0 / g3 * t * t * t + 3.0 / (2.0 * gamma) * t + 0.5;
}

std::vector<double> dselectk_gate(const std::vector<std::vector<double>>& z,
                                  const std::vector<double>& w_slots, int K,
                                  double gamma) {
  if (!is_pow2(K)) {
    throw std::invalid_argument("dselectk_gate: K must be a power of 2");
  }
  if (gamma <= 0.0) throw std::invalid_argument("dselectk_gate: gamma <= 0");
  int bits = 0;
  while ((1 << bits) < K) ++bits;
  int slots = static_cast<int>(w_slots.size());

  double mx = *std::max_element(w_slots.begin(), w_slots.end());
  std::vector<double> sw(slots);
  double denom = 0.0;
  for (int m = 0; m < slots; ++m) {
    sw[m] = std::exp(w_slots[m] - mx);
    denom += sw[m];
  }
  for (double& v : sw) v /= denom;

  std::vector<double> gate(K, 0.0);
  for (int m = 0; m < slots; ++m) {
    for (int k = 0; k < K; ++k) {
      double p = 1.0;
      for (int bit = 0; bit < bits; ++bit) {
        double s = smooth_step(z[m][bit], gamma);
        p *= ((k >> bit) & 1) ? s : 1.0 - s;
      }
      gate[k] += sw[m] * p;
    }
  }
  return gate;
}

}  // namespace mtl
