// End-to-end acceptance suite. Each test prints one PASS/FAIL line so the
// whole gate is readable from the ctest log.

#include <catch2/catch_amalgamated.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "fedhca/config.hpp"
#include "fedhca/federation.hpp"
#include "fedhca/metrics.hpp"
#include "fedhca/reference_scores.hpp"
#include "fedhca/verify.hpp"

using namespace fedhca;

namespace {

void report(const std::string& name, bool ok, const std::string& detail = "") {
  std::cout << "[acceptance] " << name << ": " << (ok ? "PASS" : "FAIL");
  if (!detail.empty()) std::cout << "  (" << detail << ")";
  std::cout << std::endl;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("C1 published score columns recompute through delta_m") {
  const auto& a = reference_benchmark_a();
  const auto& b = reference_benchmark_b();
  double hca_a = reference_delta_m(a, "hca2");
  double fedavg_a = reference_delta_m(a, "fedavg");
  double hca_b = reference_delta_m(b, "hca2");
  bool ok = std::abs(hca_a - 2.18) <= 0.01 && std::abs(fedavg_a - (-11.76)) <= 0.01 &&
            std::abs(hca_b - 0.75) <= 0.01;
  std::ostringstream detail;
  detail << "hca2_a=" << hca_a << " fedavg_a=" << fedavg_a << " hca2_b=" << hca_b;
  report("C1 delta_m reference rows", ok, detail.str());
  CHECK(std::abs(hca_a - 2.18) <= 0.01);
  CHECK(std::abs(fedavg_a - (-11.76)) <= 0.01);
  CHECK(std::abs(hca_b - 0.75) <= 0.01);
}

TEST_CASE("C2 one-step equivalence of averaging and the shared-encoder update") {
  auto t0 = std::chrono::steady_clock::now();
  auto result = verify_one_step_equivalence();
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  report("C2 one-step equivalence", result.passed,
         result.detail + ", " + std::to_string(secs) + "s");
  CHECK(result.passed);
  CHECK(secs < 1.0);
}

TEST_CASE("C3 conflict-averse solver matches the simplex grid oracle") {
  auto t0 = std::chrono::steady_clock::now();
  auto result = verify_conflict_averse_solver();
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  report("C3 solver vs grid", result.passed, result.detail + ", " + std::to_string(secs) + "s");
  CHECK(result.passed);
  CHECK(secs < 30.0);
}

TEST_CASE("C4 cross attention matches the naive oracle") {
  auto result = verify_cross_attention();
  report("C4 attention oracle", result.passed, result.detail);
  CHECK(result.passed);
}

TEST_CASE("C5 hyper-weight chain rule") {
  auto result = verify_hyper_chain_rule();
  report("C5 hyper chain rule", result.passed, result.detail);
  CHECK(result.passed);
}

TEST_CASE("C6 model gradients match finite differences") {
  auto result = verify_gradients();
  report("C6 gradient check", result.passed, result.detail);
  CHECK(result.passed);
}

TEST_CASE("C7 directional claim on the default benchmark scenario") {
  auto t0 = std::chrono::steady_clock::now();
  double sum_hca = 0.0, sum_fedavg = 0.0;
  int hca_positive = 0;
  std::ostringstream detail;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto cfg = default_benchmark_experiment(seed);

    cfg.mode = AggregationMode::local;
    auto local = run_experiment(cfg);
    cfg.mode = AggregationMode::fedavg;
    auto fa = run_experiment(cfg);
    cfg.mode = AggregationMode::hca2;
    auto hca = run_experiment(cfg);

    double dm_hca = delta_m_between(hca, local);
    double dm_fa = delta_m_between(fa, local);
    sum_hca += dm_hca;
    sum_fedavg += dm_fa;
    if (dm_hca > 0.0) ++hca_positive;
    detail << "seed" << seed << ": hca2=" << dm_hca << "% fedavg=" << dm_fa << "%; ";
  }
  double mean_hca = sum_hca / 5.0;
  double mean_fedavg = sum_fedavg / 5.0;
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  detail << "mean hca2=" << mean_hca << "% fedavg=" << mean_fedavg << "%, positive " << hca_positive
         << "/5, " << secs << "s";
  bool ok = mean_hca > mean_fedavg && hca_positive >= 4;
  report("C7 directional claim", ok, detail.str());
  CHECK(mean_hca > mean_fedavg);
  CHECK(hca_positive >= 4);
  CHECK(secs < 300.0);
}

TEST_CASE("C8 frozen-weight hca2 degenerates to local training byte for byte") {
  auto cfg = default_benchmark_experiment(21);
  cfg.rounds = 10;
  cfg.mode = AggregationMode::local;
  auto local = run_experiment(cfg);

  auto degen = cfg;
  degen.mode = AggregationMode::hca2;
  degen.conflict.c = 0.0;
  degen.hyper.lr = 0.0;
  auto hca = run_experiment(degen);

  bool ok = local.metrics.size() == hca.metrics.size();
  if (ok) {
    for (std::size_t i = 0; i < local.metrics.size(); ++i) {
      ok = ok && local.metrics[i].value == hca.metrics[i].value &&
           local.metrics[i].client == hca.metrics[i].client &&
           local.metrics[i].task == hca.metrics[i].task;
    }
  }
  // the emitted metric tables must agree byte for byte
  auto dir = std::filesystem::temp_directory_path() / "fedhca_accept_c8";
  auto f_local = emit(local, dir / "local");
  auto f_hca = emit(hca, dir / "hca");
  ok = ok && slurp(f_local[0]) == slurp(f_hca[0]);
  std::filesystem::remove_all(dir);

  report("C8 degeneracy equivalence", ok);
  CHECK(ok);
}

TEST_CASE("C9 repeated runs emit byte-identical metric tables") {
  auto cfg = default_benchmark_experiment(33);
  cfg.rounds = 10;
  auto r1 = run_experiment(cfg);
  auto r2 = run_experiment(cfg);

  auto dir = std::filesystem::temp_directory_path() / "fedhca_accept_c9";
  auto f1 = emit(r1, dir / "a");
  auto f2 = emit(r2, dir / "b");
  bool metrics_same = slurp(f1[0]) == slurp(f2[0]);
  bool weights_same = slurp(f1[1]) == slurp(f2[1]);
  std::filesystem::remove_all(dir);

  report("C9 determinism", metrics_same && weights_same);
  CHECK(metrics_same);
  CHECK(weights_same);
}

TEST_CASE("an injected sign flip in the aggregation correction is caught") {
  ConflictSolver flipped = [](const std::vector<FlatVector>& updates,
                              const ConflictAverseConfig& cfg) {
    auto res = solve_conflict_averse(updates, cfg);
    FlatVector correction = add_scaled(res.unified, -1.0, res.mean_update);
    res.unified = add_scaled(res.mean_update, -1.0, correction);
    return res;
  };
  auto result = verify_conflict_averse_solver(flipped);
  report("mutation smoke test", !result.passed, result.detail);
  CHECK_FALSE(result.passed);
}
