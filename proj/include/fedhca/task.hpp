#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace fedhca {

enum class TaskKind {
  regression,             // squared-error loss, RMSE metric (lower better)
  binary_classification,  // logistic loss, accuracy metric (higher better)
};

inline const char* to_string(TaskKind k) {
  return k == TaskKind::regression ? "regression" : "binary_classification";
}

struct TaskSpec {
  std::string id;
  TaskKind kind = TaskKind::regression;
  int output_dim = 1;  // label width; binary classification is always 1 logit
  bool operator==(const TaskSpec&) const = default;
};

// Labels for one task over a batch: n rows of `dim` values, row-major.
// Classification labels are stored as 0/1 doubles with dim == 1.
struct TaskLabels {
  std::size_t dim = 1;
  std::vector<double> values;
};

struct Batch {
  std::size_t size = 0;
  std::vector<double> features;  // size x input_dim, row-major
  std::map<std::string, TaskLabels> labels;
};

enum class MetricDirection { higher_better = 0, lower_better = 1 };

struct TaskMetric {
  std::string task_id;
  double value = 0.0;
  MetricDirection direction = MetricDirection::higher_better;
};

// l_i flag of the performance-drop formula: 1 when lower is better.
inline int direction_flag(MetricDirection d) {
  return d == MetricDirection::lower_better ? 1 : 0;
}

}  // namespace fedhca
