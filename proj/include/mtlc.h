/* SPDX-License-Identifier: Apache-2.0
 *
 * C API for the multi-task learning engine. All functions are
 * thread-compatible: distinct handles may be used concurrently, a single
 * handle must not be shared by writers. Strings returned through out
 * parameters are owned by the caller and released with mtlc_string_free.
 */
#ifndef MTLC_H
#define MTLC_H

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mtlc_status {
  MTLC_OK = 0,
  MTLC_ERR_VALIDATION = 1, /* bad config, bad flags, constraint violations */
  MTLC_ERR_RUNTIME = 2,    /* run aborted (non-finite loss or direction) */
  MTLC_ERR_VERIFY = 3,     /* a verification property failed */
  MTLC_ERR_IO = 4          /* unreadable/unwritable paths, bad files */
} mtlc_status;

/* Opaque dataset handle. Immutable once created; safe to share across
 * concurrent runs. */
typedef struct mtlc_dataset mtlc_dataset;

const char* mtlc_version(void);

/* Generates a synthetic multi-task dataset from a JSON description, e.g.
 * {"tasks":2,"dim":16,"samples":320,"seed":0,"conflict":0.5,
 *  "multi_input":false,"teacher":"linear"}. */
mtlc_status mtlc_dataset_generate(const char* gen_json, mtlc_dataset** out,
                                  char** err);

/* Loads / saves the CSV exchange format (per-task CSV files plus
 * manifest.json). */
mtlc_status mtlc_dataset_load(const char* dir, mtlc_dataset** out, char** err);
mtlc_status mtlc_dataset_save(const mtlc_dataset* ds, const char* dir,
                              char** err);

int mtlc_dataset_task_count(const mtlc_dataset* ds);
void mtlc_dataset_free(mtlc_dataset* ds);

/* Runs one experiment. config_json uses the documented config schema; empty
 * or "{}" takes all defaults. On success *report_json holds the run report;
 * when the run aborts (NaN guard) the partial report is still returned
 * together with MTLC_ERR_RUNTIME. *trace_csv (optional, may be NULL) gets
 * the per-step applied-weights trace when the config requests one. */
mtlc_status mtlc_run(const mtlc_dataset* ds, const char* config_json,
                     char** report_json, char** trace_csv, char** err);

/* Canonical JSON of every run option with its default value. */
mtlc_status mtlc_default_config(char** config_json);

/* The canonical weighting x architecture combination list (84 entries). */
mtlc_status mtlc_sweep_list(char** combos_json);

/* Runs the verification suites (gradient checks, solver oracles,
 * post-conditions, projection brute force). *summary gets one line per
 * property. Returns MTLC_ERR_VERIFY when any property fails. */
mtlc_status mtlc_verify(unsigned long long seed, char** summary, char** err);

void mtlc_string_free(char* s);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* MTLC_H */
