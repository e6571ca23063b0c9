// SPDX-License-Identifier: Apache-2.0

#include "mtl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace mtl {

namespace {

constexpr uint64_t kTaskSeedStream = 100;
constexpr uint64_t kTeacherStream = 7;
constexpr uint64_t kNoiseStream = 8;
constexpr uint64_t kInputStream = 9;

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

const char* teacher_name(TeacherKind k) {
  return k == TeacherKind::Linear ? "linear" : "mlp";
}

TeacherKind teacher_from(const std::string& s) {
  if (s == "linear") return TeacherKind::Linear;
  if (s == "mlp") return TeacherKind::Mlp;
  throw std::invalid_argument("unknown teacher '" + s +
                              "' (expected linear|mlp)");
}

std::string GenConfig::to_json() const {
  nlohmann::ordered_json j;
  j["tasks"] = tasks;
  j["dim"] = dim;
  j["samples"] = samples;
  if (!samples_per_task.empty()) j["samples_per_task"] = samples_per_task;
  j["seed"] = seed;
  j["multi_input"] = multi_input;
  j["teacher"] = teacher_name(teacher);
  j["conflict"] = conflict;
  j["noise_std"] = noise_std;
  j["classification"] = classification;
  j["classes"] = classes;
  return j.dump();
}

GenConfig GenConfig::from_json(const std::string& json) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json);
  } catch (const std::exception& e) {
    throw std::invalid_argument(std::string("generator config: bad JSON: ") +
                                e.what());
  }
  GenConfig c;
  static const char* known[] = {"tasks",     "dim",        "samples",
                                "samples_per_task", "seed", "multi_input",
                                "teacher",   "conflict",   "noise_std",
                                "classification",   "classes"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) {
      if (it.key() == k) ok = true;
    }
    if (!ok) {
      throw std::invalid_argument("generator config: unknown key '" +
                                  it.key() + "'");
    }
  }
  c.tasks = j.value("tasks", c.tasks);
  c.dim = j.value("dim", c.dim);
  c.samples = j.value("samples", c.samples);
  if (j.contains("samples_per_task")) {
    c.samples_per_task = j["samples_per_task"].get<std::vector<int>>();
  }
  c.seed = j.value("seed", c.seed);
  c.multi_input = j.value("multi_input", c.multi_input);
  if (j.contains("teacher")) c.teacher = teacher_from(j["teacher"]);
  c.conflict = j.value("conflict", c.conflict);
  c.noise_std = j.value("noise_std", c.noise_std);
  c.classification = j.value("classification", c.classification);
  c.classes = j.value("classes", c.classes);
  if (c.tasks < 1 || c.dim < 1 || c.samples < 1) {
    throw std::invalid_argument("generator config: tasks, dim, samples must be >= 1");
  }
  if (c.classification && c.classes < 2) {
    throw std::invalid_argument("generator config: classes must be >= 2");
  }
  return c;
}

std::vector<std::vector<double>> conflict_teachers(int tasks, int dim,
                                                   double conflict, Rng& rng) {
  if (dim < tasks + 1) {
    throw std::invalid_argument(
        "conflict teacher construction needs dim >= tasks + 1");
  }
  // Orthonormal frame q_0..q_tasks via Gram-Schmidt on Gaussian draws.
  int frame = tasks + 1;
  std::vector<std::vector<double>> q(frame, std::vector<double>(dim));
  for (int v = 0; v < frame; ++v) {
    for (;;) {
      for (int i = 0; i < dim; ++i) q[v][i] = rng.normal();
      for (int u = 0; u < v; ++u) {
        double d = 0.0;
        for (int i = 0; i < dim; ++i) d += q[v][i] * q[u][i];
        for (int i = 0; i < dim; ++i) q[v][i] -= d * q[u][i];
      }
      double n = 0.0;
      for (int i = 0; i < dim; ++i) n += q[v][i] * q[v][i];
      if (n > 1e-12) {
        n = std::sqrt(n);
        for (int i = 0; i < dim; ++i) q[v][i] /= n;
        break;
      }
    }
  }

  // Regular-simplex directions s_t in span(q_1..q_tasks) have pairwise
  // cosine -1/(T-1); blending with the common axis q_0 tunes the cosine:
  // cos = a^2 + (1 - a^2) * (-1/(T-1)) with a^2 = ((T-1) c + 1) / T.
  double target = 1.0 - 2.0 * conflict;
  if (tasks > 1) {
    double feasible_min = -1.0 / (tasks - 1);
    target = std::clamp(target, feasible_min, 1.0);
  }
  double a2 = tasks > 1 ? ((tasks - 1) * target + 1.0) / tasks : 1.0;
  a2 = std::clamp(a2, 0.0, 1.0);
  double a = std::sqrt(a2), b = std::sqrt(1.0 - a2);

  std::vector<std::vector<double>> w(tasks, std::vector<double>(dim, 0.0));
  double simplex_norm = std::sqrt(1.0 - 1.0 / tasks);
  for (int t = 0; t < tasks; ++t) {
    // centered basis vector e_t - 1/T in coordinates over q_1..q_tasks
    for (int u = 0; u < tasks; ++u) {
      double coord = (u == t ? 1.0 : 0.0) - 1.0 / tasks;
      if (tasks > 1) coord /= simplex_norm;
      for (int i = 0; i < dim; ++i) w[t][i] += b * coord * q[u + 1][i];
    }
    for (int i = 0; i < dim; ++i) w[t][i] += a * q[0][i];
    double n = 0.0;
    for (int i = 0; i < dim; ++i) n += w[t][i] * w[t][i];
    n = std::sqrt(n);
    for (int i = 0; i < dim; ++i) w[t][i] /= n;
  }
  return w;
}

namespace {

Tensor gaussian_matrix(int rows, int cols, Rng& rng) {
  Tensor m = Tensor::zeros({rows, cols});
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.normal();
  return m;
}

/// Hidden features for the mlp teacher: tanh(X W0 / sqrt(d)).
Tensor teacher_features(const Tensor& x, const GenConfig& cfg, Rng& rng,
                        int hidden) {
  if (cfg.teacher == TeacherKind::Linear) return x;
  int d = x.cols();
  Tensor w0 = gaussian_matrix(d, hidden, rng);
  Tensor h = Tensor::zeros({x.rows(), hidden});
  double scale = 1.0 / std::sqrt(static_cast<double>(d));
  for (int i = 0; i < x.rows(); ++i) {
    for (int j = 0; j < hidden; ++j) {
      double s = 0.0;
      for (int k = 0; k < d; ++k) s += x.at(i, k) * w0.at(k, j);
      h.at(i, j) = std::tanh(s * scale);
    }
  }
  return h;
}

TaskData make_task(const GenConfig& cfg, int t, const Tensor& x,
                   const Tensor& features,
                   const std::vector<std::vector<double>>& teachers,
                   Rng& noise_rng, Rng& class_rng) {
  TaskData td;
  td.spec.name = "task" + std::to_string(t);
  td.inputs = x;
  int n = x.rows();
  if (cfg.classification) {
    td.spec.loss = LossKind::CrossEntropy;
    td.spec.metric = MetricKind::Accuracy;
    td.spec.higher_is_better = true;
    td.spec.output_dim = cfg.classes;
    // argmax over per-class linear teachers (independent of `conflict`)
    int fd = features.cols();
    std::vector<std::vector<double>> cls(cfg.classes,
                                         std::vector<double>(fd));
    for (int c = 0; c < cfg.classes; ++c) {
      for (int i = 0; i < fd; ++i) cls[c][i] = class_rng.normal();
    }
    td.targets = Tensor::zeros({n, 1});
    for (int i = 0; i < n; ++i) {
      int arg = 0;
      double best = -1e300;
      for (int c = 0; c < cfg.classes; ++c) {
        double s = 0.0;
        for (int k = 0; k < fd; ++k) s += features.at(i, k) * cls[c][k];
        if (s > best) {
          best = s;
          arg = c;
        }
      }
      td.targets.at(i, 0) = arg;
    }
  } else {
    td.spec.loss = LossKind::Mse;
    td.spec.metric = MetricKind::Mse;
    td.spec.higher_is_better = false;
    td.spec.output_dim = 1;
    td.targets = Tensor::zeros({n, 1});
    const std::vector<double>& w = teachers[t];
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      for (int k = 0; k < features.cols(); ++k) s += features.at(i, k) * w[k];
      td.targets.at(i, 0) = s + cfg.noise_std * noise_rng.normal();
    }
  }
  return td;
}

}  // namespace

MultiTaskDataset gen_single_input(const GenConfig& cfg) {
  MultiTaskDataset ds;
  ds.single_input = true;
  ds.provenance_json = cfg.to_json();

  Rng input_rng(derive_seed(cfg.seed, kInputStream));
  Tensor x = gaussian_matrix(cfg.samples, cfg.dim, input_rng);

  Rng teacher_rng(derive_seed(cfg.seed, kTeacherStream));
  int hidden = cfg.teacher == TeacherKind::Mlp
                   ? std::max(cfg.tasks + 1, 8)
                   : cfg.dim;
  Tensor features = teacher_features(x, cfg, teacher_rng, hidden);
  std::vector<std::vector<double>> teachers;
  if (!cfg.classification) {
    teachers = conflict_teachers(cfg.tasks, features.cols(), cfg.conflict,
                                 teacher_rng);
  }

  for (int t = 0; t < cfg.tasks; ++t) {
    Rng noise_rng(derive_seed(cfg.seed, kNoiseStream + 1000 + t));
    Rng class_rng(derive_seed(cfg.seed, kNoiseStream + 2000 + t));
    ds.tasks.push_back(
        make_task(cfg, t, x, features, teachers, noise_rng, class_rng));
  }
  return ds;
}

MultiTaskDataset gen_multi_input(const GenConfig& cfg) {
  MultiTaskDataset ds;
  ds.single_input = false;
  ds.provenance_json = cfg.to_json();

  Rng teacher_rng(derive_seed(cfg.seed, kTeacherStream + 1));
  std::vector<std::vector<double>> teachers;
  Rng mlp_rng(derive_seed(cfg.seed, kTeacherStream));  // shared mlp projection

  for (int t = 0; t < cfg.tasks; ++t) {
    uint64_t task_seed = derive_seed(cfg.seed, kTaskSeedStream + t);
    Rng input_rng(derive_seed(task_seed, kInputStream));
    int n = !cfg.samples_per_task.empty()
                ? cfg.samples_per_task[t % cfg.samples_per_task.size()]
                : cfg.samples;
    Tensor x = gaussian_matrix(n, cfg.dim, input_rng);
    // One derived generator per task keeps the teacher projection shared
    // while the first task fixes the teacher family.
    Rng feat_rng = mlp_rng;
    int hidden = cfg.teacher == TeacherKind::Mlp
                     ? std::max(cfg.tasks + 1, 8)
                     : cfg.dim;
    Tensor features = teacher_features(x, cfg, feat_rng, hidden);
    if (!cfg.classification && teachers.empty()) {
      teachers = conflict_teachers(cfg.tasks, features.cols(), cfg.conflict,
                                   teacher_rng);
    }
    Rng noise_rng(derive_seed(task_seed, kNoiseStream));
    Rng class_rng(derive_seed(task_seed, kNoiseStream + 1));
    ds.tasks.push_back(
        make_task(cfg, t, x, features, teachers, noise_rng, class_rng));
  }
  return ds;
}

MultiTaskDataset generate(const GenConfig& cfg) {
  return cfg.multi_input ? gen_multi_input(cfg) : gen_single_input(cfg);
}

// --- CSV exchange ----------------------------------------------------------

void save_csv(const MultiTaskDataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);

  nlohmann::ordered_json manifest;
  manifest["single_input"] = ds.single_input;
  manifest["input_dim"] = ds.input_dim();
  manifest["tasks"] = nlohmann::ordered_json::array();

  for (const TaskData& td : ds.tasks) {
    std::string file = td.spec.name + ".csv";
    nlohmann::ordered_json tj;
    tj["name"] = td.spec.name;
    tj["loss"] = loss_kind_name(td.spec.loss);
    tj["metric"] = metric_kind_name(td.spec.metric);
    tj["higher_is_better"] = td.spec.higher_is_better;
    tj["output_dim"] = td.spec.output_dim;
    tj["classification"] = td.spec.loss == LossKind::CrossEntropy;
    tj["samples"] = td.samples();
    tj["file"] = file;
    manifest["tasks"].push_back(tj);

    std::ofstream out(fs::path(dir) / file);
    if (!out) throw std::runtime_error("save_csv: cannot write " + file);
    int d = td.inputs.cols();
    for (int j = 0; j < d; ++j) out << "x" << j << ",";
    if (td.spec.loss == LossKind::CrossEntropy) {
      out << "y\n";
    } else {
      for (int j = 0; j < td.spec.output_dim; ++j) {
        out << "y" << j << (j + 1 < td.spec.output_dim ? "," : "\n");
      }
    }
    for (int i = 0; i < td.samples(); ++i) {
      for (int j = 0; j < d; ++j) out << fmt17(td.inputs.at(i, j)) << ",";
      if (td.spec.loss == LossKind::CrossEntropy) {
        out << static_cast<long long>(td.targets.at(i, 0)) << "\n";
      } else {
        for (int j = 0; j < td.spec.output_dim; ++j) {
          out << fmt17(td.targets.at(i, j))
              << (j + 1 < td.spec.output_dim ? "," : "\n");
        }
      }
    }
  }

  std::ofstream mout(fs::path(dir) / "manifest.json");
  if (!mout) throw std::runtime_error("save_csv: cannot write manifest.json");
  mout << manifest.dump(2) << "\n";
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

}  // namespace

MultiTaskDataset load_csv(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream min(fs::path(dir) / "manifest.json");
  if (!min) {
    throw std::runtime_error("load_csv: missing manifest.json in " + dir);
  }
  nlohmann::json manifest;
  try {
    min >> manifest;
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("load_csv: bad manifest: ") +
                             e.what());
  }

  MultiTaskDataset ds;
  ds.single_input = manifest.value("single_input", true);
  ds.provenance_json =
      nlohmann::json{{"loaded_from", "csv"}, {"single_input", ds.single_input}}
          .dump();
  int d = manifest.at("input_dim").get<int>();

  for (const auto& tj : manifest.at("tasks")) {
    TaskData td;
    td.spec.name = tj.at("name").get<std::string>();
    td.spec.loss = loss_kind_from(tj.at("loss").get<std::string>());
    td.spec.metric = metric_kind_from(tj.at("metric").get<std::string>());
    td.spec.higher_is_better = tj.value("higher_is_better", false);
    td.spec.output_dim = tj.at("output_dim").get<int>();
    td.spec.validate();
    int n = tj.at("samples").get<int>();
    bool classification = td.spec.loss == LossKind::CrossEntropy;
    int ycols = classification ? 1 : td.spec.output_dim;

    std::ifstream in(fs::path(dir) / tj.at("file").get<std::string>());
    if (!in) {
      throw std::runtime_error("load_csv: cannot open task file for " +
                               td.spec.name);
    }
    std::string line;
    std::getline(in, line);  // header
    td.inputs = Tensor::zeros({n, d});
    td.targets = Tensor::zeros({n, ycols});
    for (int i = 0; i < n; ++i) {
      if (!std::getline(in, line)) {
        throw std::runtime_error("load_csv: truncated file for " +
                                 td.spec.name);
      }
      auto cells = split_csv_line(line);
      if (static_cast<int>(cells.size()) != d + ycols) {
        throw std::runtime_error("load_csv: bad column count for " +
                                 td.spec.name);
      }
      for (int j = 0; j < d; ++j) td.inputs.at(i, j) = std::stod(cells[j]);
      for (int j = 0; j < ycols; ++j) {
        td.targets.at(i, j) = std::stod(cells[d + j]);
      }
    }
    ds.tasks.push_back(std::move(td));
  }

  if (ds.single_input) {
    for (int t = 1; t < ds.task_count(); ++t) {
      const Tensor& a = ds.tasks[0].inputs;
      const Tensor& b = ds.tasks[t].inputs;
      if (!a.same_shape(b) ||
          !std::equal(a.data(), a.data() + a.size(), b.data())) {
        throw std::runtime_error(
            "load_csv: single_input manifest but task inputs differ");
      }
    }
  }
  return ds;
}

// --- batching ----------------------------------------------------------------

EpochBatches::EpochBatches(const MultiTaskDataset& ds,
                           const std::vector<std::vector<int>>& task_indices,
                           int batch_size, uint64_t epoch_seed, bool shuffle)
    : ds_(ds) {
  if (batch_size < 1) {
    throw std::invalid_argument("batches: batch_size must be >= 1");
  }
  int tasks = ds.task_count();
  schedule_.resize(tasks);

  auto chunk = [&](const std::vector<int>& perm) {
    std::vector<std::vector<int>> chunks;
    for (std::size_t i = 0; i < perm.size(); i += batch_size) {
      std::size_t j = std::min(perm.size(), i + batch_size);
      chunks.emplace_back(perm.begin() + i, perm.begin() + j);
    }
    return chunks;
  };

  if (ds.single_input) {
    const std::vector<int>& base = task_indices.at(0);
    if (base.empty()) throw std::invalid_argument("batches: empty dataset");
    std::vector<int> perm = base;
    if (shuffle) {
      Rng rng(derive_seed(epoch_seed, 42));
      rng.shuffle(perm);
    }
    auto chunks = chunk(perm);
    steps_ = static_cast<int>(chunks.size());
    for (int t = 0; t < tasks; ++t) schedule_[t] = chunks;
    return;
  }

  steps_ = 0;
  for (int t = 0; t < tasks; ++t) {
    int n = static_cast<int>(task_indices.at(t).size());
    if (n == 0) throw std::invalid_argument("batches: empty dataset");
    steps_ = std::max(steps_, (n + batch_size - 1) / batch_size);
  }
  for (int t = 0; t < tasks; ++t) {
    std::vector<int> perm = task_indices[t];
    int wrap = 0;
    if (shuffle) {
      Rng rng(derive_seed(epoch_seed, 42 + 1000 * (t + 1)));
      rng.shuffle(perm);
    }
    auto chunks = chunk(perm);
    std::size_t cursor = 0;
    while (static_cast<int>(schedule_[t].size()) < steps_) {
      if (cursor == chunks.size()) {
        // wrap: reshuffle and start a fresh pass
        ++wrap;
        perm = task_indices[t];
        if (shuffle) {
          Rng rng(derive_seed(epoch_seed, 42 + 1000 * (t + 1) + wrap));
          rng.shuffle(perm);
        }
        chunks = chunk(perm);
        cursor = 0;
      }
      schedule_[t].push_back(chunks[cursor++]);
    }
  }
}

StepBatch EpochBatches::get(int step) const {
  StepBatch sb;
  int d = ds_.input_dim();
  for (int t = 0; t < ds_.task_count(); ++t) {
    const std::vector<int>& idx = schedule_[t][step];
    const TaskData& td = ds_.tasks[t];
    int n = static_cast<int>(idx.size());
    int yc = td.targets.cols();
    Tensor x = Tensor::zeros({n, d});
    Tensor y = Tensor::zeros({n, yc});
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < d; ++j) x.at(i, j) = td.inputs.at(idx[i], j);
      for (int j = 0; j < yc; ++j) y.at(i, j) = td.targets.at(idx[i], j);
    }
    sb.inputs.push_back(std::move(x));
    sb.targets.push_back(std::move(y));
    sb.sizes.push_back(n);
  }
  return sb;
}

}  // namespace mtl
