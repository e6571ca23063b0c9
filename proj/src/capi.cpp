// SPDX-License-Identifier: Apache-2.0

#include "mtlc.h"

#include <cstring>
#include <exception>
#include <new>
#include <string>

#include "mtl/data.hpp"
#include "mtl/report.hpp"
#include "mtl/sweep.hpp"
#include "mtl/trainer.hpp"
#include "mtl/verify.hpp"

struct mtlc_dataset {
  mtl::MultiTaskDataset ds;
};

namespace {

char* dup_string(const std::string& s) {
  char* out = new (std::nothrow) char[s.size() + 1];
  if (!out) return nullptr;
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void set_err(char** err, const std::string& msg) {
  if (err) *err = dup_string(msg);
}

/// Maps exceptions at the boundary: invalid_argument is a validation
/// failure, filesystem/runtime issues are IO or runtime.
template <typename F>
mtlc_status guarded(char** err, F&& f) {
  try {
    return f();
  } catch (const std::invalid_argument& e) {
    set_err(err, e.what());
    return MTLC_ERR_VALIDATION;
  } catch (const std::exception& e) {
    set_err(err, e.what());
    return MTLC_ERR_RUNTIME;
  }
}

}  // namespace

extern "C" {

const char* mtlc_version(void) { return "1.0.0"; }

mtlc_status mtlc_dataset_generate(const char* gen_json, mtlc_dataset** out,
                                  char** err) {
  if (!out) return MTLC_ERR_VALIDATION;
  *out = nullptr;
  return guarded(err, [&]() {
    std::string json = gen_json && *gen_json ? gen_json : "{}";
    mtl::GenConfig cfg = mtl::GenConfig::from_json(json);
    auto* h = new mtlc_dataset{mtl::generate(cfg)};
    *out = h;
    return MTLC_OK;
  });
}

mtlc_status mtlc_dataset_load(const char* dir, mtlc_dataset** out, char** err) {
  if (!out || !dir) return MTLC_ERR_VALIDATION;
  *out = nullptr;
  try {
    auto* h = new mtlc_dataset{mtl::load_csv(dir)};
    *out = h;
    return MTLC_OK;
  } catch (const std::exception& e) {
    set_err(err, e.what());
    return MTLC_ERR_IO;
  }
}

mtlc_status mtlc_dataset_save(const mtlc_dataset* ds, const char* dir,
                              char** err) {
  if (!ds || !dir) return MTLC_ERR_VALIDATION;
  try {
    mtl::save_csv(ds->ds, dir);
    return MTLC_OK;
  } catch (const std::exception& e) {
    set_err(err, e.what());
    return MTLC_ERR_IO;
  }
}

int mtlc_dataset_task_count(const mtlc_dataset* ds) {
  return ds ? ds->ds.task_count() : 0;
}

void mtlc_dataset_free(mtlc_dataset* ds) { delete ds; }

mtlc_status mtlc_run(const mtlc_dataset* ds, const char* config_json,
                     char** report_json, char** trace_csv, char** err) {
  if (!ds || !report_json) return MTLC_ERR_VALIDATION;
  *report_json = nullptr;
  if (trace_csv) *trace_csv = nullptr;
  return guarded(err, [&]() {
    std::string json = config_json && *config_json ? config_json : "{}";
    mtl::TrainConfig cfg = mtl::train_config_from_json(json);
    mtl::RunReport rep = mtl::run_experiment(cfg, ds->ds);
    *report_json = dup_string(mtl::emit_report(rep, cfg.omit_timing));
    if (trace_csv && !rep.trace_csv.empty()) {
      *trace_csv = dup_string(rep.trace_csv);
    }
    if (rep.aborted) {
      set_err(err, "run aborted: " + rep.abort_reason);
      return MTLC_ERR_RUNTIME;
    }
    return MTLC_OK;
  });
}

mtlc_status mtlc_default_config(char** config_json) {
  if (!config_json) return MTLC_ERR_VALIDATION;
  mtl::TrainConfig cfg;
  *config_json = dup_string(mtl::train_config_to_json(cfg, "null"));
  return MTLC_OK;
}

mtlc_status mtlc_sweep_list(char** combos_json) {
  if (!combos_json) return MTLC_ERR_VALIDATION;
  *combos_json = dup_string(mtl::sweep_combos_json());
  return MTLC_OK;
}

mtlc_status mtlc_verify(unsigned long long seed, char** summary, char** err) {
  return guarded(err, [&]() {
    auto results = mtl::verify::run_all(seed);
    if (summary) *summary = dup_string(mtl::verify::format_lines(results));
    return mtl::verify::all_pass(results) ? MTLC_OK : MTLC_ERR_VERIFY;
  });
}

void mtlc_string_free(char* s) { delete[] s; }

}  // extern "C"
