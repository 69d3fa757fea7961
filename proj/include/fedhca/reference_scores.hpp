#pragma once

#include <string>
#include <vector>

#include "fedhca/metrics.hpp"
#include "fedhca/task.hpp"

namespace fedhca {

// Published benchmark score tables bundled as verification fixtures: the
// average performance-drop column of each table must be recomputable from its
// per-task metric columns with delta_m to within the rounding of the printed
// values (+-0.01).

struct ReferenceRow {
  std::string method;
  std::vector<double> metrics;
  double published_delta_m = 0.0;
};

struct ReferenceTable {
  std::string name;
  std::vector<std::string> metric_names;
  std::vector<int> lower_better;  // l flag per column
  std::vector<ReferenceRow> rows;

  const ReferenceRow& row(const std::string& method) const {
    for (const auto& r : rows) {
      if (r.method == method) return r;
    }
    throw std::invalid_argument("reference table '" + name + "' has no row '" + method + "'");
  }
};

// Five single-task clients plus one four-task client.
inline const ReferenceTable& reference_benchmark_a() {
  static const ReferenceTable table = {
      "benchmark_a",
      {"st_semseg", "st_parts", "st_sal", "st_normals", "st_edge", "mt_semseg", "mt_depth",
       "mt_normals", "mt_edge"},
      {0, 0, 0, 1, 0, 0, 1, 1, 0},
      {
          {"local", {51.69, 49.94, 80.91, 15.76, 71.95, 41.86, 0.6487, 20.59, 76.46}, 0.00},
          {"fedavg", {39.98, 37.33, 77.56, 18.27, 69.17, 38.94, 0.7858, 21.62, 75.77}, -11.76},
          {"fedprox", {44.42, 38.10, 77.26, 18.03, 69.39, 39.19, 0.8068, 21.52, 76.03}, -10.68},
          {"fedper", {54.51, 46.56, 78.85, 16.95, 71.00, 44.02, 0.6467, 21.19, 76.61}, -1.11},
          {"ditto", {46.23, 39.69, 77.99, 17.52, 69.77, 41.49, 0.6508, 20.60, 76.45}, -5.57},
          {"fedamp", {55.98, 52.05, 80.79, 15.74, 72.02, 41.67, 0.6428, 20.54, 76.40}, 1.47},
          {"matfl", {57.45, 48.63, 79.26, 17.26, 71.23, 40.99, 0.6352, 20.65, 76.59}, -0.46},
          {"hca2", {57.55, 52.30, 80.71, 15.60, 72.08, 41.47, 0.6281, 20.53, 76.50}, 2.18},
      }};
  return table;
}

// Four single-task clients plus one five-task client.
inline const ReferenceTable& reference_benchmark_b() {
  static const ReferenceTable table = {
      "benchmark_b",
      {"st_semseg", "st_depth", "st_normals", "st_edge", "mt_semseg", "mt_parts", "mt_sal",
       "mt_normals", "mt_edge"},
      {0, 1, 1, 0, 0, 0, 0, 1, 0},
      {
          {"local", {33.59, 0.7129, 23.22, 75.02, 65.80, 55.01, 83.23, 14.21, 71.89}, 0.00},
          {"fedavg", {25.80, 0.8295, 24.85, 75.31, 64.63, 52.88, 81.08, 15.56, 68.95}, -7.56},
          {"fedprox", {25.96, 0.8316, 25.20, 75.34, 64.97, 50.78, 81.29, 15.83, 69.81}, -8.12},
          {"fedper", {35.93, 0.7460, 23.75, 75.53, 67.78, 54.75, 82.50, 14.75, 71.90}, -0.16},
          {"ditto", {28.15, 0.7482, 23.96, 75.42, 65.99, 51.45, 81.74, 15.29, 69.96}, -4.67},
          {"fedamp", {34.75, 0.7103, 23.31, 75.03, 66.08, 54.10, 83.35, 14.20, 71.88}, 0.27},
          {"matfl", {35.05, 0.7504, 23.39, 75.33, 67.90, 54.78, 82.84, 14.58, 71.94}, -0.16},
          {"hca2", {34.95, 0.7018, 23.19, 75.03, 65.81, 55.01, 83.18, 14.08, 71.97}, 0.75},
      }};
  return table;
}

inline std::vector<TaskMetric> reference_metric_list(const ReferenceTable& table, const ReferenceRow& row) {
  std::vector<TaskMetric> out;
  out.reserve(row.metrics.size());
  for (std::size_t i = 0; i < row.metrics.size(); ++i) {
    TaskMetric m;
    m.task_id = table.metric_names[i];
    m.value = row.metrics[i];
    m.direction = table.lower_better[i] ? MetricDirection::lower_better : MetricDirection::higher_better;
    out.push_back(std::move(m));
  }
  return out;
}

inline double reference_delta_m(const ReferenceTable& table, const std::string& method) {
  return delta_m(reference_metric_list(table, table.row(method)),
                 reference_metric_list(table, table.row("local")));
}

}  // namespace fedhca
