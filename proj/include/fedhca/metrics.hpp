#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedhca/numeric.hpp"
#include "fedhca/task.hpp"

namespace fedhca {

// Average per-task performance change against the local baseline, in percent:
// positive means federation helped. For a lower-is-better metric the sign of
// the relative change is flipped.
inline double delta_m(const std::vector<TaskMetric>& fed, const std::vector<TaskMetric>& local) {
  if (fed.size() != local.size() || fed.empty()) {
    throw std::invalid_argument("delta_m: metric lists must be nonempty and the same length");
  }
  std::map<std::string, const TaskMetric*> local_by_id;
  for (const auto& m : local) local_by_id[m.task_id] = &m;
  if (local_by_id.size() != local.size()) throw std::invalid_argument("delta_m: duplicate task ids");

  double acc = 0.0;
  for (const auto& f : fed) {
    auto it = local_by_id.find(f.task_id);
    if (it == local_by_id.end()) {
      throw std::invalid_argument("delta_m: task '" + f.task_id + "' missing from local metrics");
    }
    const TaskMetric& l = *it->second;
    if (f.direction != l.direction) {
      throw std::invalid_argument("delta_m: direction mismatch for task '" + f.task_id + "'");
    }
    if (l.value == 0.0) {
      throw std::invalid_argument("delta_m: zero local metric for task '" + f.task_id + "'");
    }
    double rel = (f.value - l.value) / l.value;
    acc += direction_flag(f.direction) == 1 ? -rel : rel;
  }
  return 100.0 * acc / static_cast<double>(fed.size());
}

struct MetricRow {
  int round = 0;
  std::string client;
  std::string task;
  std::string metric;  // "rmse" or "accuracy"
  double value = 0.0;
  int direction = 0;  // 1 = lower better
};

struct WeightRow {
  int round = 0;
  std::string client;
  std::string part;  // "encoder" or "decoder"
  std::string task;  // empty for encoder rows
  std::string layer; // empty for encoder rows
  double value = 0.0;
};

struct RunResult {
  int rounds = 0;
  std::vector<MetricRow> metrics;        // one row per (eval round, client, task)
  std::vector<MetricRow> final_metrics;  // last-round snapshot
  std::vector<WeightRow> weights;        // hyper-weight trajectories, per round
  std::optional<double> final_delta_m;   // vs. the same-seed local baseline
  nlohmann::json config_echo;
  nlohmann::json manifest;  // defaults and substitutions in effect for this run
  double wall_time_sec = 0.0;
};

// Final metrics as a task list keyed "client/task", ready for delta_m.
inline std::vector<TaskMetric> final_metric_list(const RunResult& result) {
  std::vector<TaskMetric> out;
  out.reserve(result.final_metrics.size());
  for (const auto& row : result.final_metrics) {
    TaskMetric m;
    m.task_id = row.client + "/" + row.task;
    m.value = row.value;
    m.direction = row.direction == 1 ? MetricDirection::lower_better : MetricDirection::higher_better;
    out.push_back(std::move(m));
  }
  return out;
}

inline double delta_m_between(const RunResult& fed, const RunResult& local) {
  return delta_m(final_metric_list(fed), final_metric_list(local));
}

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  return os;
}

}  // namespace detail

// Writes metrics.csv, weights.csv and summary.json into out_dir; returns the
// paths written. Re-emitting the same result produces byte-identical files.
inline std::vector<std::filesystem::path> emit(const RunResult& result, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + out_dir.string() + ": " + ec.message());

  std::vector<std::filesystem::path> written;

  auto metrics_path = out_dir / "metrics.csv";
  {
    auto os = detail::open_out(metrics_path);
    os << "round,client,task,metric,value,direction\n";
    for (const auto& r : result.metrics) {
      os << r.round << ',' << r.client << ',' << r.task << ',' << r.metric << ','
         << format_double(r.value) << ',' << r.direction << '\n';
    }
    if (!os) throw std::runtime_error("write failed: " + metrics_path.string());
  }
  written.push_back(metrics_path);

  auto weights_path = out_dir / "weights.csv";
  {
    auto os = detail::open_out(weights_path);
    os << "round,client,part,task,layer,value\n";
    for (const auto& r : result.weights) {
      os << r.round << ',' << r.client << ',' << r.part << ',' << r.task << ',' << r.layer << ','
         << format_double(r.value) << '\n';
    }
    if (!os) throw std::runtime_error("write failed: " + weights_path.string());
  }
  written.push_back(weights_path);

  auto summary_path = out_dir / "summary.json";
  {
    nlohmann::json summary;
    summary["rounds"] = result.rounds;
    if (result.final_delta_m.has_value()) {
      summary["delta_m_percent"] = *result.final_delta_m;
    } else {
      summary["delta_m_percent"] = nullptr;
    }
    nlohmann::json finals = nlohmann::json::array();
    for (const auto& r : result.final_metrics) {
      finals.push_back({{"client", r.client},
                        {"task", r.task},
                        {"metric", r.metric},
                        {"value", r.value},
                        {"direction", r.direction}});
    }
    summary["final_metrics"] = finals;
    summary["config"] = result.config_echo;
    summary["manifest"] = result.manifest;
    summary["wall_time_sec"] = result.wall_time_sec;
    auto os = detail::open_out(summary_path);
    os << summary.dump(2) << '\n';
    if (!os) throw std::runtime_error("write failed: " + summary_path.string());
  }
  written.push_back(summary_path);

  return written;
}

}  // namespace fedhca
