// SPDX-License-Identifier: Apache-2.0
//
// CLI front end. All engine work goes through the C API in mtlc.h.

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "mtlc.h"

#include "cli_args.hpp"

namespace {

namespace fs = std::filesystem;
using mtlcli::CliConfig;

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitVerify = 3;

int status_to_exit(mtlc_status s) {
  switch (s) {
    case MTLC_OK: return kExitOk;
    case MTLC_ERR_VALIDATION: return kExitValidation;
    case MTLC_ERR_RUNTIME: return kExitRuntime;
    case MTLC_ERR_VERIFY: return kExitVerify;
    case MTLC_ERR_IO: return kExitValidation;
  }
  return kExitValidation;
}

std::string take_string(char* s) {
  if (!s) return {};
  std::string out = s;
  mtlc_string_free(s);
  return out;
}

bool write_file(const std::string& path, const std::string& content,
                std::string* err) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    *err = "cannot write " + path;
    return false;
  }
  out << content;
  if (!out) {
    *err = "write failed: " + path;
    return false;
  }
  return true;
}

struct DatasetHandle {
  mtlc_dataset* ds = nullptr;
  ~DatasetHandle() { mtlc_dataset_free(ds); }
};

int acquire_dataset(const CliConfig& c, DatasetHandle& h) {
  char* err = nullptr;
  mtlc_status st;
  if (!c.data_path.empty()) {
    st = mtlc_dataset_load(c.data_path.c_str(), &h.ds, &err);
  } else {
    st = mtlc_dataset_generate(mtlcli::to_gen_json(c).c_str(), &h.ds, &err);
  }
  if (st != MTLC_OK) {
    std::cerr << "error: " << take_string(err) << "\n";
    return status_to_exit(st);
  }
  return kExitOk;
}

int cmd_run(const CliConfig& c) {
  DatasetHandle ds;
  if (int rc = acquire_dataset(c, ds); rc != kExitOk) return rc;

  char *report = nullptr, *trace = nullptr, *err = nullptr;
  mtlc_status st = mtlc_run(ds.ds, mtlcli::to_train_config_json(c).c_str(),
                            &report, &trace, &err);
  std::string report_s = take_string(report);
  std::string trace_s = take_string(trace);
  std::string err_s = take_string(err);

  if (st == MTLC_ERR_VALIDATION) {
    std::cerr << "error: " << err_s << "\n";
    return kExitValidation;
  }

  std::string werr;
  if (!c.out_path.empty()) {
    if (!write_file(c.out_path, report_s + "\n", &werr)) {
      std::cerr << "error: " << werr << "\n";
      return kExitValidation;
    }
  } else {
    std::cout << report_s << "\n";
  }
  if (!c.trace_path.empty() && !trace_s.empty()) {
    if (!write_file(c.trace_path, trace_s, &werr)) {
      std::cerr << "error: " << werr << "\n";
      return kExitValidation;
    }
  }

  if (st == MTLC_ERR_RUNTIME) {
    std::cerr << "error: " << err_s << "\n";
    return kExitRuntime;
  }
  if (!c.out_path.empty()) {
    auto j = nlohmann::json::parse(report_s);
    std::cout << "run complete: " << j["epochs"].size() << " epochs, "
              << j["param_count"].get<long long>() << " parameters, report at "
              << c.out_path << "\n";
  }
  return kExitOk;
}

int cmd_gen_data(const CliConfig& c) {
  DatasetHandle ds;
  char* err = nullptr;
  mtlc_status st =
      mtlc_dataset_generate(mtlcli::to_gen_json(c).c_str(), &ds.ds, &err);
  if (st != MTLC_OK) {
    std::cerr << "error: " << take_string(err) << "\n";
    return status_to_exit(st);
  }
  st = mtlc_dataset_save(ds.ds, c.out_path.c_str(), &err);
  if (st != MTLC_OK) {
    std::cerr << "error: " << take_string(err) << "\n";
    return status_to_exit(st);
  }
  std::cout << "wrote " << mtlc_dataset_task_count(ds.ds)
            << " task datasets to " << c.out_path << "\n";
  return kExitOk;
}

int cmd_verify(const CliConfig& c) {
  char *summary = nullptr, *err = nullptr;
  mtlc_status st = mtlc_verify(c.seed, &summary, &err);
  std::cout << take_string(summary);
  std::string err_s = take_string(err);
  if (st == MTLC_OK) {
    std::cout << "verify: all properties PASS\n";
    return kExitOk;
  }
  if (!err_s.empty()) std::cerr << "error: " << err_s << "\n";
  std::cout << "verify: FAIL\n";
  return kExitVerify;
}

struct ComboRow {
  std::string weighting, arch, mode;
  bool aborted = true;
  std::vector<double> final_losses;
  double wall_seconds = 0.0;
  double step0_total = 0.0;
  double final_total = 0.0;
};

int cmd_sweep(const CliConfig& c) {
  std::error_code ec;
  fs::create_directories(c.out_path, ec);

  char* combos_raw = nullptr;
  mtlc_sweep_list(&combos_raw);
  auto combos = nlohmann::json::parse(take_string(combos_raw));

  DatasetHandle ds;
  if (int rc = acquire_dataset(c, ds); rc != kExitOk) return rc;

  const int n = static_cast<int>(combos.size());
  std::vector<ComboRow> rows(n);
  std::atomic<int> cursor{0};
  std::atomic<bool> any_aborted{false};
  std::mutex io_mutex;

  auto worker = [&]() {
    for (;;) {
      int i = cursor.fetch_add(1);
      if (i >= n) return;
      const auto& combo = combos[i];
      CliConfig cc = c;
      cc.weighting = combo["weighting"].get<std::string>();
      cc.arch = combo["arch"].get<std::string>();
      cc.mode = combo["mode"].get<std::string>();
      cc.trace_path.clear();

      char *report = nullptr, *trace = nullptr, *err = nullptr;
      mtlc_status st = mtlc_run(ds.ds, mtlcli::to_train_config_json(cc).c_str(),
                                &report, &trace, &err);
      std::string report_s = take_string(report);
      take_string(trace);
      std::string err_s = take_string(err);

      ComboRow& row = rows[i];
      row.weighting = cc.weighting;
      row.arch = cc.arch;
      row.mode = cc.mode;

      if (!report_s.empty()) {
        char name[128];
        std::snprintf(name, sizeof name, "%03d_%s_%s.json", i,
                      cc.weighting.c_str(), cc.arch.c_str());
        std::string werr;
        std::lock_guard<std::mutex> lock(io_mutex);
        if (!write_file((fs::path(c.out_path) / name).string(),
                        report_s + "\n", &werr)) {
          std::cerr << "error: " << werr << "\n";
        }
      }
      if (st != MTLC_OK || report_s.empty()) {
        any_aborted = true;
        std::lock_guard<std::mutex> lock(io_mutex);
        std::cerr << "combo " << i << " (" << cc.weighting << " x " << cc.arch
                  << ") failed: " << err_s << "\n";
        continue;
      }
      auto j = nlohmann::json::parse(report_s);
      row.aborted = j.value("aborted", true);
      row.wall_seconds = j.value("wall_seconds", 0.0);
      row.step0_total = j.value("step0_total_loss", 0.0);
      if (!j["epochs"].empty()) {
        for (const auto& pt : j["epochs"].back()["per_task"]) {
          double l = pt["train_loss"].get<double>();
          row.final_losses.push_back(l);
          row.final_total += l;
        }
      }
      if (row.aborted) any_aborted = true;
      std::lock_guard<std::mutex> lock(io_mutex);
      std::printf("[%3d/%d] %-9s x %-11s %s  loss %.4f -> %.4f\n", i + 1, n,
                  cc.weighting.c_str(), cc.arch.c_str(),
                  row.aborted ? "ABORTED" : "ok", row.step0_total,
                  row.final_total);
      std::fflush(stdout);
    }
  };

  int jobs = std::max(1, c.jobs);
  std::vector<std::thread> pool;
  for (int k = 0; k < jobs; ++k) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  int tasks = mtlc_dataset_task_count(ds.ds);
  std::string csv = "combo,weighting,arch,mode,aborted";
  for (int t = 0; t < tasks; ++t) {
    csv += ",final_train_loss_task" + std::to_string(t);
  }
  csv += ",wall_seconds\n";
  for (int i = 0; i < n; ++i) {
    const ComboRow& r = rows[i];
    csv += std::to_string(i) + "," + r.weighting + "," + r.arch + "," + r.mode +
           "," + (r.aborted ? "true" : "false");
    for (int t = 0; t < tasks; ++t) {
      char buf[48];
      std::snprintf(buf, sizeof buf, ",%.17g",
                    t < static_cast<int>(r.final_losses.size())
                        ? r.final_losses[t]
                        : 0.0);
      csv += buf;
    }
    char buf[48];
    std::snprintf(buf, sizeof buf, ",%.17g\n",
                  c.omit_timing ? 0.0 : r.wall_seconds);
    csv += buf;
  }
  std::string werr;
  if (!write_file((fs::path(c.out_path) / "summary.csv").string(), csv,
                  &werr)) {
    std::cerr << "error: " << werr << "\n";
    return kExitValidation;
  }
  std::cout << "sweep complete: " << n << " combinations, summary at "
            << (fs::path(c.out_path) / "summary.csv").string() << "\n";
  return any_aborted ? kExitRuntime : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  mtlcli::ParseOutcome parsed = mtlcli::parse_args(args);
  if (parsed.exit_early) {
    std::cout << parsed.error;
    return parsed.exit_code;
  }
  if (!parsed.ok) {
    std::cerr << "error: " << parsed.error << "\n";
    return kExitValidation;
  }
  switch (parsed.config.command) {
    case mtlcli::Command::Run: return cmd_run(parsed.config);
    case mtlcli::Command::Sweep: return cmd_sweep(parsed.config);
    case mtlcli::Command::GenData: return cmd_gen_data(parsed.config);
    case mtlcli::Command::Verify: return cmd_verify(parsed.config);
    case mtlcli::Command::None: break;
  }
  return kExitValidation;
}
