#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fedhca/metrics.hpp"
#include "fedhca/reference_scores.hpp"

using namespace fedhca;

namespace {

TaskMetric metric(const std::string& id, double value, MetricDirection dir) {
  return TaskMetric{id, value, dir};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("delta_m reproduces the published summary columns") {
  const auto& a = reference_benchmark_a();
  CHECK(reference_delta_m(a, "hca2") == Catch::Approx(2.18).margin(0.01));
  CHECK(reference_delta_m(a, "fedavg") == Catch::Approx(-11.76).margin(0.01));
  const auto& b = reference_benchmark_b();
  CHECK(reference_delta_m(b, "hca2") == Catch::Approx(0.75).margin(0.01));

  for (const ReferenceTable* table : {&a, &b}) {
    for (const auto& row : table->rows) {
      CHECK(reference_delta_m(*table, row.method) ==
            Catch::Approx(row.published_delta_m).margin(0.01));
    }
  }
}

TEST_CASE("delta_m of identical metric lists is exactly zero") {
  std::vector<TaskMetric> m = {metric("a", 3.5, MetricDirection::higher_better),
                               metric("b", 0.25, MetricDirection::lower_better)};
  CHECK(delta_m(m, m) == 0.0);
}

TEST_CASE("delta_m is sign-correct in both directions") {
  // improving a lower-better metric (rmse 1.0 -> 0.8) raises delta_m
  auto local = std::vector<TaskMetric>{metric("t", 1.0, MetricDirection::lower_better)};
  auto better = std::vector<TaskMetric>{metric("t", 0.8, MetricDirection::lower_better)};
  auto worse = std::vector<TaskMetric>{metric("t", 1.2, MetricDirection::lower_better)};
  CHECK(delta_m(better, local) == Catch::Approx(20.0));
  CHECK(delta_m(worse, local) == Catch::Approx(-20.0));

  // improving a higher-better metric (accuracy 0.5 -> 0.6) raises delta_m
  auto local_acc = std::vector<TaskMetric>{metric("t", 0.5, MetricDirection::higher_better)};
  auto better_acc = std::vector<TaskMetric>{metric("t", 0.6, MetricDirection::higher_better)};
  CHECK(delta_m(better_acc, local_acc) == Catch::Approx(20.0));
}

TEST_CASE("delta_m is invariant under task reordering") {
  std::vector<TaskMetric> local = {metric("a", 2.0, MetricDirection::higher_better),
                                   metric("b", 4.0, MetricDirection::lower_better),
                                   metric("c", 1.0, MetricDirection::higher_better)};
  std::vector<TaskMetric> fed = {metric("a", 2.2, MetricDirection::higher_better),
                                 metric("b", 3.8, MetricDirection::lower_better),
                                 metric("c", 0.9, MetricDirection::higher_better)};
  double base = delta_m(fed, local);
  std::vector<TaskMetric> fed_shuffled = {fed[2], fed[0], fed[1]};
  CHECK(delta_m(fed_shuffled, local) == Catch::Approx(base));
}

TEST_CASE("delta_m rejects malformed inputs") {
  auto local = std::vector<TaskMetric>{metric("a", 1.0, MetricDirection::higher_better)};
  CHECK_THROWS_AS(delta_m({metric("x", 1.0, MetricDirection::higher_better)}, local),
                  std::invalid_argument);
  CHECK_THROWS_AS(delta_m({metric("a", 1.0, MetricDirection::lower_better)}, local),
                  std::invalid_argument);
  CHECK_THROWS_AS(delta_m({metric("a", 1.0, MetricDirection::higher_better)},
                          {metric("a", 0.0, MetricDirection::higher_better)}),
                  std::invalid_argument);
  CHECK_THROWS_AS(delta_m({}, {}), std::invalid_argument);
}

TEST_CASE("emit writes header-only tables for an empty result") {
  RunResult result;
  result.config_echo = nlohmann::json::object();
  result.manifest = nlohmann::json::object();
  auto dir = std::filesystem::temp_directory_path() / "fedhca_emit_empty";
  auto files = emit(result, dir);
  REQUIRE(files.size() == 3);
  CHECK(slurp(files[0]) == "round,client,task,metric,value,direction\n");
  CHECK(slurp(files[1]) == "round,client,part,task,layer,value\n");
  std::filesystem::remove_all(dir);
}

TEST_CASE("emit row counts and byte-identical re-emission") {
  RunResult result;
  result.rounds = 2;
  // 2 rounds x (1 + 2) task instances
  for (int r = 1; r <= 2; ++r) {
    result.metrics.push_back({r, "a", "t1", "rmse", 0.5 / r, 1});
    result.metrics.push_back({r, "b", "t2", "accuracy", 0.75, 0});
    result.metrics.push_back({r, "b", "t3", "rmse", 1.25, 1});
    result.weights.push_back({r, "a", "encoder", "", "", 0.125 * r});
  }
  result.final_metrics = {result.metrics.end() - 3, result.metrics.end()};
  result.final_delta_m = 1.5;
  result.config_echo = {{"rounds", 2}};
  result.manifest = {{"optimizer", "sgd"}};
  result.wall_time_sec = 0.5;

  auto dir = std::filesystem::temp_directory_path() / "fedhca_emit_rows";
  auto files = emit(result, dir);

  std::istringstream is(slurp(files[0]));
  std::string line;
  int rows = -1;  // discount header
  while (std::getline(is, line)) ++rows;
  CHECK(rows == 6);

  auto before = std::vector<std::string>{slurp(files[0]), slurp(files[1]), slurp(files[2])};
  auto files2 = emit(result, dir);
  CHECK(slurp(files2[0]) == before[0]);
  CHECK(slurp(files2[1]) == before[1]);
  CHECK(slurp(files2[2]) == before[2]);
  std::filesystem::remove_all(dir);
}

TEST_CASE("emit surfaces unwritable paths") {
  RunResult result;
  CHECK_THROWS_WITH(emit(result, "/proc/definitely_not_writable/out"),
                    Catch::Matchers::ContainsSubstring("/proc"));
}
