// SPDX-License-Identifier: Apache-2.0

#include "mtl/report.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "mtl/jsonio.hpp"

namespace mtl {

std::string train_config_to_json(const TrainConfig& cfg,
                                 const std::string& data_provenance) {
  JsonWriter w;
  w.begin_object();
  w.key("weighting");
  w.value(std::string_view(weighting_name(cfg.weighting)));
  w.key("arch");
  w.value(std::string_view(arch_name(cfg.arch.kind)));
  w.key("mode");
  w.value(std::string_view(grad_mode_name(cfg.mode)));
  w.key("multi_input");
  w.value(cfg.multi_input);
  w.key("seed");
  w.value(static_cast<unsigned long long>(cfg.seed));
  w.key("epochs");
  w.value(cfg.epochs);
  w.key("batch_size");
  w.value(cfg.batch_size);
  w.key("optimizer");
  w.begin_object();
  w.key("kind");
  w.value(std::string_view(optimizer_name(cfg.optim.kind)));
  w.key("lr");
  w.value(cfg.optim.lr);
  w.key("momentum");
  w.value(cfg.optim.momentum);
  w.key("beta1");
  w.value(cfg.optim.beta1);
  w.key("beta2");
  w.value(cfg.optim.beta2);
  w.key("eps");
  w.value(cfg.optim.eps);
  w.end_object();
  w.key("arch_params");
  w.begin_object();
  w.key("hidden_dims");
  w.begin_array();
  for (int h : cfg.arch.hidden_dims) w.value(h);
  w.end_array();
  w.key("rep_dim");
  w.value(cfg.arch.rep_dim);
  w.key("experts");
  w.value(cfg.arch.num_shared_experts);
  w.key("task_experts");
  w.value(cfg.arch.num_task_experts);
  w.key("levels");
  w.value(cfg.arch.num_levels);
  w.key("top_k");
  w.value(cfg.arch.top_k);
  w.key("gamma");
  w.value(cfg.arch.gamma);
  w.key("reg_coeff");
  w.value(cfg.arch.dselectk_reg_coeff);
  w.end_object();
  w.key("hyper");
  w.begin_object();
  w.key("alpha");
  w.value(cfg.hyper.gradnorm_alpha);
  w.key("weight_lr");
  w.value(cfg.hyper.gradnorm_weight_lr);
  w.key("tau");
  w.value(cfg.hyper.dwa_tau);
  w.key("beta");
  w.value(cfg.hyper.gradvac_beta);
  w.key("c");
  w.value(cfg.hyper.cagrad_c);
  w.key("mgda_norm");
  w.value(std::string_view(mgda_norm_name(cfg.hyper.mgda_norm)));
  w.key("cagrad_rescale");
  w.value(std::string_view(cagrad_rescale_name(cfg.hyper.cagrad_rescale)));
  w.end_object();
  w.key("val_fraction");
  w.value(cfg.val_fraction);
  w.key("trace_path");
  w.value(std::string_view(cfg.trace_path));
  w.key("omit_timing");
  w.value(cfg.omit_timing);
  w.key("data");
  w.raw(data_provenance.empty() ? "null" : data_provenance);
  w.end_object();
  return w.str();
}

namespace {

void reject_unknown(const nlohmann::json& j,
                    std::initializer_list<const char*> known,
                    const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) {
      if (it.key() == k) ok = true;
    }
    if (!ok) {
      throw std::invalid_argument("config: unknown key '" + it.key() +
                                  "' in " + where);
    }
  }
}

}  // namespace

TrainConfig train_config_from_json(const std::string& json) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json);
  } catch (const std::exception& e) {
    throw std::invalid_argument(std::string("config: bad JSON: ") + e.what());
  }
  reject_unknown(j,
                 {"weighting", "arch", "mode", "multi_input", "seed", "epochs",
                  "batch_size", "optimizer", "arch_params", "hyper",
                  "val_fraction", "trace_path", "omit_timing", "data"},
                 "config");
  TrainConfig c;
  if (j.contains("weighting")) c.weighting = weighting_from(j["weighting"]);
  if (j.contains("arch")) c.arch.kind = arch_from(j["arch"]);
  if (j.contains("mode")) {
    std::string m = j["mode"];
    if (m == "param") {
      c.mode = GradMode::ParamGrad;
    } else if (m == "rep") {
      c.mode = GradMode::RepGrad;
    } else {
      throw std::invalid_argument("config: unknown mode '" + m +
                                  "' (expected param|rep)");
    }
  }
  c.multi_input = j.value("multi_input", c.multi_input);
  c.seed = j.value("seed", c.seed);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  if (j.contains("optimizer")) {
    const auto& o = j["optimizer"];
    reject_unknown(o, {"kind", "lr", "momentum", "beta1", "beta2", "eps"},
                   "optimizer");
    if (o.contains("kind")) c.optim.kind = optimizer_from(o["kind"]);
    c.optim.lr = o.value("lr", c.optim.lr);
    c.optim.momentum = o.value("momentum", c.optim.momentum);
    c.optim.beta1 = o.value("beta1", c.optim.beta1);
    c.optim.beta2 = o.value("beta2", c.optim.beta2);
    c.optim.eps = o.value("eps", c.optim.eps);
  }
  if (j.contains("arch_params")) {
    const auto& a = j["arch_params"];
    reject_unknown(a,
                   {"hidden_dims", "rep_dim", "experts", "task_experts",
                    "levels", "top_k", "gamma", "reg_coeff"},
                   "arch_params");
    if (a.contains("hidden_dims")) {
      c.arch.hidden_dims = a["hidden_dims"].get<std::vector<int>>();
    }
    c.arch.rep_dim = a.value("rep_dim", c.arch.rep_dim);
    c.arch.num_shared_experts = a.value("experts", c.arch.num_shared_experts);
    c.arch.num_task_experts = a.value("task_experts", c.arch.num_task_experts);
    c.arch.num_levels = a.value("levels", c.arch.num_levels);
    c.arch.top_k = a.value("top_k", c.arch.top_k);
    c.arch.gamma = a.value("gamma", c.arch.gamma);
    c.arch.dselectk_reg_coeff = a.value("reg_coeff", c.arch.dselectk_reg_coeff);
  }
  if (j.contains("hyper")) {
    const auto& h = j["hyper"];
    reject_unknown(
        h, {"alpha", "weight_lr", "tau", "beta", "c", "mgda_norm",
            "cagrad_rescale"},
        "hyper");
    c.hyper.gradnorm_alpha = h.value("alpha", c.hyper.gradnorm_alpha);
    c.hyper.gradnorm_weight_lr =
        h.value("weight_lr", c.hyper.gradnorm_weight_lr);
    c.hyper.dwa_tau = h.value("tau", c.hyper.dwa_tau);
    c.hyper.gradvac_beta = h.value("beta", c.hyper.gradvac_beta);
    c.hyper.cagrad_c = h.value("c", c.hyper.cagrad_c);
    if (h.contains("mgda_norm")) {
      c.hyper.mgda_norm = mgda_norm_from(h["mgda_norm"]);
    }
    if (h.contains("cagrad_rescale")) {
      c.hyper.cagrad_rescale = cagrad_rescale_from(h["cagrad_rescale"]);
    }
  }
  c.val_fraction = j.value("val_fraction", c.val_fraction);
  if (j.contains("trace_path")) {
    c.trace_path = j["trace_path"].get<std::string>();
    c.trace_weights = !c.trace_path.empty();
  }
  c.omit_timing = j.value("omit_timing", c.omit_timing);
  return c;
}

std::string emit_report(const RunReport& rep, bool omit_timing) {
  JsonWriter w;
  w.begin_object();
  w.key("config");
  w.raw(rep.config_json.empty() ? "null" : rep.config_json);
  w.key("param_count");
  w.value(rep.param_count);
  w.key("initial");
  w.begin_array();
  for (std::size_t t = 0; t < rep.task_names.size(); ++t) {
    w.begin_object();
    w.key("name");
    w.value(std::string_view(rep.task_names[t]));
    w.key("val_metric");
    w.value(t < rep.initial_val_metrics.size() ? rep.initial_val_metrics[t]
                                               : 0.0);
    w.end_object();
  }
  w.end_array();
  w.key("epochs");
  w.begin_array();
  for (std::size_t e = 0; e < rep.epochs.size(); ++e) {
    w.begin_object();
    w.key("epoch");
    w.value(static_cast<long long>(e));
    w.key("per_task");
    w.begin_array();
    for (std::size_t t = 0; t < rep.epochs[e].size(); ++t) {
      w.begin_object();
      w.key("name");
      w.value(std::string_view(rep.task_names[t]));
      w.key("train_loss");
      w.value(rep.epochs[e][t].train_loss);
      w.key("val_metric");
      w.value(rep.epochs[e][t].val_metric);
      w.end_object();
    }
    w.end_array();
    w.end_object();
  }
  w.end_array();
  w.key("step0_total_loss");
  w.value(rep.step0_total_loss);
  if (!rep.trace_csv.empty()) {
    // path echoed from the config; content travels separately as CSV
    nlohmann::json cfg = nlohmann::json::parse(
        rep.config_json.empty() ? "{}" : rep.config_json);
    std::string path = cfg.value("trace_path", std::string());
    if (!path.empty()) {
      w.key("weights_trace_path");
      w.value(std::string_view(path));
    }
  }
  w.key("wall_seconds");
  w.value(omit_timing ? 0.0 : rep.wall_seconds);
  w.key("aborted");
  w.value(rep.aborted);
  if (rep.aborted) {
    w.key("abort_reason");
    w.value(std::string_view(rep.abort_reason));
  }
  w.key("degenerate_events");
  w.begin_object();
  for (const auto& [k, v] : rep.degenerate_events) {
    w.key(k);
    w.value(v);
  }
  w.end_object();
  w.end_object();
  return w.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << content;
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace mtl
