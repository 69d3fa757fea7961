#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "fedhca/config.hpp"
#include "fedhca/federation.hpp"
#include "fedhca/verify.hpp"

using namespace fedhca;

namespace {

ExperimentConfig small_experiment(AggregationMode mode, std::uint64_t seed = 3) {
  ExperimentConfig cfg;
  cfg.scenario.input_dim = 4;
  cfg.scenario.latent_dim = 2;
  cfg.scenario.domain_shift = 1.0;
  cfg.scenario.noise_std = 0.05;
  cfg.scenario.seed = 11;
  cfg.scenario.tasks = {{"r1", TaskKind::regression, 1},
                        {"c1", TaskKind::binary_classification, 1},
                        {"r2", TaskKind::regression, 1}};
  cfg.scenario.clients = {{"a", {"r1"}, 0, 12, 16, {}},
                          {"b", {"c1"}, 0, 12, 16, {}},
                          {"c", {"r2", "c1"}, 1, 12, 16, {}}};
  cfg.arch.input_dim = 4;
  cfg.arch.encoder_widths = {5, 3};
  cfg.arch.decoder_widths = {3};
  cfg.rounds = 3;
  cfg.batch_size = 6;
  cfg.lr = 0.1;
  cfg.mode = mode;
  cfg.seed = seed;
  return cfg;
}

bool models_equal(const ClientModel& a, const ClientModel& b) {
  if (!tree_equal(a.encoder, b.encoder)) return false;
  for (const auto& [t, d] : a.decoders) {
    if (!tree_equal(d, b.decoders.at(t))) return false;
  }
  for (const auto& [t, h] : a.heads) {
    if (!tree_equal(h, b.heads.at(t))) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("client_update returns the exact training delta") {
  auto cfg = small_experiment(AggregationMode::local);
  auto data = make_scenario(cfg.scenario);
  auto model = init_model(cfg.arch, cfg.scenario.client_tasks(cfg.scenario.clients[0]), 5);

  SECTION("lr = 0 gives a zero delta") {
    auto res = client_update(model, data[0], 2, 0.0, 6, make_rng(1, "t"));
    for (const auto& l : res.update.encoder_delta.layers) {
      for (double v : l.data) CHECK(v == 0.0);
    }
    CHECK(models_equal(res.model, model));
  }

  SECTION("E=1 full batch reproduces one -lr*g step") {
    const double lr = 0.05;
    std::size_t n = data[0].train.size;
    auto res = client_update(model, data[0], 1, lr, n, make_rng(2, "t"));
    // replay the same shuffled batch the sampler produced
    Batch batch = sample_batch(data[0], n, make_rng(2, "t"));
    auto lg = loss_and_grad(model, batch, model.tasks);
    ParamTree expected = tree_scale(lg.grad.encoder, -lr);
    CHECK(tree_max_abs_diff(res.update.encoder_delta, expected) <= 1e-12);
  }

  SECTION("the same rng seed reproduces the same delta") {
    auto r1 = client_update(model, data[0], 2, 0.1, 4, make_rng(3, "t"));
    auto r2 = client_update(model, data[0], 2, 0.1, 4, make_rng(3, "t"));
    CHECK(tree_equal(r1.update.encoder_delta, r2.update.encoder_delta));
    CHECK(models_equal(r1.model, r2.model));
  }
}

TEST_CASE("divergence during local training carries diagnostics") {
  auto cfg = small_experiment(AggregationMode::local);
  auto data = make_scenario(cfg.scenario);
  auto model = init_model(cfg.arch, cfg.scenario.client_tasks(cfg.scenario.clients[0]), 5);
  ClientDataset poisoned = data[0];
  poisoned.train.labels.at("r1").values[0] = std::numeric_limits<double>::quiet_NaN();
  std::size_t n = poisoned.train.size;
  CHECK_THROWS_WITH(client_update(model, poisoned, 1, 0.1, n, make_rng(1, "t")),
                    Catch::Matchers::ContainsSubstring("diverged") &&
                        Catch::Matchers::ContainsSubstring("epoch 1"));
}

TEST_CASE("a one-round local experiment equals one round of local training") {
  auto cfg = small_experiment(AggregationMode::local);
  cfg.rounds = 1;
  auto result = run_experiment(cfg);

  Federation manual(cfg);
  manual.run_round();
  auto evals = manual.evaluate_all();
  REQUIRE(result.final_metrics.size() == 4);
  for (const auto& row : result.final_metrics) {
    CHECK(row.round == 1);
    CHECK(row.value == evals.at(row.client).at(row.task).value);
  }
}

TEST_CASE("mtl_reference_step sums per-task encoder gradients") {
  auto cfg = small_experiment(AggregationMode::local);
  auto data = make_scenario(cfg.scenario);
  auto model = init_model(cfg.arch, cfg.scenario.client_tasks(cfg.scenario.clients[2]), 5);
  const Batch& batch = data[2].train;

  SECTION("a single task gives -lr * g of that task") {
    ClientModel single = model;
    single.tasks = {model.task("r2")};
    single.decoders = {{"r2", model.decoders.at("r2")}};
    single.heads = {{"r2", model.heads.at("r2")}};
    auto lg = loss_and_grad(single, batch, single.tasks);
    auto update = mtl_reference_step(single, batch, 0.1);
    CHECK(tree_max_abs_diff(update, tree_scale(lg.grad.encoder, -0.1)) <= 1e-15);
  }

  SECTION("opposite per-task gradients cancel") {
    // two copies of the same regression task whose labels sit symmetrically
    // around the shared prediction produce exactly opposite gradients
    ClientModel twin =
        init_model(cfg.arch, {{"p", TaskKind::regression, 1}, {"q", TaskKind::regression, 1}}, 6);
    twin.decoders.at("q") = twin.decoders.at("p");
    twin.heads.at("q") = twin.heads.at("p");
    Batch b;
    b.size = batch.size;
    b.features = batch.features;
    auto pred = predict(twin, b, "p");
    TaskLabels above, below;
    above.dim = below.dim = 1;
    above.values = pred;
    below.values = pred;
    for (std::size_t i = 0; i < b.size; ++i) {
      above.values[i] += 0.25;
      below.values[i] -= 0.25;
    }
    b.labels.emplace("p", above);
    b.labels.emplace("q", below);

    auto update = mtl_reference_step(twin, b, 0.1);
    for (const auto& l : update.layers) {
      for (double v : l.data) CHECK(std::abs(v) <= 1e-15);
    }
  }
}

TEST_CASE("one-step aggregation identity holds for N in {2,3,5}") {
  auto result = verify_one_step_equivalence();
  INFO(result.detail);
  CHECK(result.passed);
}

TEST_CASE("server_round modes") {
  auto cfg = small_experiment(AggregationMode::local);
  Federation fed(cfg);
  // drive one round by hand so the gathered state is inspectable
  RoundState state = fed.snapshot();
  for (const auto& [id, model] : state.models) {
    auto res = client_update(model, fed.dataset(id), 1, cfg.lr, 6,
                             make_rng(cfg.seed, "client/" + id + "/round/1"));
    state.updates.emplace(id, res.update);
  }

  SECTION("local mode applies theta_prev + delta") {
    auto next = server_round(state, AggregationMode::local, cfg);
    for (const auto& [id, model] : next.models) {
      ParamTree expected = tree_add_scaled(state.models.at(id).encoder, 1.0,
                                           state.updates.at(id).encoder_delta);
      CHECK(tree_equal(model.encoder, expected));
    }
  }

  SECTION("hca2 with after_apply ordering and zero weights matches local on round one") {
    ExperimentConfig hcfg = cfg;
    hcfg.hyper_ordering = HyperUpdateOrdering::after_apply;
    auto local_next = server_round(state, AggregationMode::local, cfg);
    auto hca_next = server_round(state, AggregationMode::hca2, hcfg);
    for (const auto& [id, model] : hca_next.models) {
      CHECK(models_equal(model, local_next.models.at(id)));
    }
    // the weights themselves did move, ready for round two
    bool any_nonzero = false;
    for (const auto& [id, a] : hca_next.weights.all_alpha()) any_nonzero |= a != 0.0;
    CHECK(any_nonzero);
  }

  SECTION("fedavg with identical deltas equalizes encoders") {
    RoundState same = state;
    const ParamTree& enc_delta = state.updates.at("a").encoder_delta;
    for (auto& [id, upd] : same.updates) upd.encoder_delta = enc_delta;
    auto next = server_round(same, AggregationMode::fedavg, cfg);
    const ParamTree& first = next.models.at("a").encoder;
    for (const auto& [id, model] : next.models) CHECK(tree_equal(model.encoder, first));
  }

  SECTION("heads are bit-identical to local training output in every mode") {
    for (auto mode : {AggregationMode::local, AggregationMode::fedavg, AggregationMode::hca2,
                      AggregationMode::enc_only, AggregationMode::dec_only}) {
      auto next = server_round(state, mode, cfg);
      for (const auto& [id, model] : next.models) {
        for (const auto& [task, head] : model.heads) {
          CHECK(tree_equal(head, state.updates.at(id).heads_after.at(task)));
        }
      }
    }
  }

  SECTION("a missing client report is an error") {
    RoundState incomplete = state;
    incomplete.updates.erase("b");
    CHECK_THROWS_WITH(server_round(incomplete, AggregationMode::fedavg, cfg),
                      Catch::Matchers::ContainsSubstring("b"));
  }
}

TEST_CASE("hca2 with c=0, frozen zero hyper weights is exactly local mode") {
  auto local_cfg = small_experiment(AggregationMode::local);
  local_cfg.rounds = 10;
  auto hca_cfg = local_cfg;
  hca_cfg.mode = AggregationMode::hca2;
  hca_cfg.conflict.c = 0.0;
  hca_cfg.hyper.lr = 0.0;

  Federation f_local(local_cfg);
  Federation f_hca(hca_cfg);
  for (int r = 0; r < 10; ++r) {
    f_local.run_round();
    f_hca.run_round();
    for (const auto& [id, model] : f_hca.models()) {
      CHECK(models_equal(model, f_local.models().at(id)));
    }
  }
}

TEST_CASE("run_experiment records metrics, weights and determinism") {
  auto cfg = small_experiment(AggregationMode::hca2);

  auto r1 = run_experiment(cfg);
  auto r2 = run_experiment(cfg);

  // 4 task instances across 3 clients, evaluated every round for 3 rounds
  CHECK(r1.metrics.size() == 4 * 3);
  CHECK(r1.final_metrics.size() == 4);
  CHECK(r1.rounds == 3);

  // bit-identical replays
  REQUIRE(r1.metrics.size() == r2.metrics.size());
  for (std::size_t i = 0; i < r1.metrics.size(); ++i) {
    CHECK(r1.metrics[i].value == r2.metrics[i].value);
    CHECK(r1.metrics[i].client == r2.metrics[i].client);
  }
  REQUIRE(r1.weights.size() == r2.weights.size());
  for (std::size_t i = 0; i < r1.weights.size(); ++i) {
    CHECK(r1.weights[i].value == r2.weights[i].value);
  }

  // alpha trajectory: one row per client per round
  int alpha_rows = 0;
  for (const auto& w : r1.weights) alpha_rows += w.part == "encoder" ? 1 : 0;
  CHECK(alpha_rows == 3 * 3);
}

TEST_CASE("eval_every thins the metric log but always records the last round") {
  auto cfg = small_experiment(AggregationMode::local);
  cfg.rounds = 5;
  cfg.eval_every = 2;
  auto result = run_experiment(cfg);
  // eval at rounds 2, 4 and the final round 5
  CHECK(result.metrics.size() == 4 * 3);
  CHECK(result.final_metrics.front().round == 5);
}

TEST_CASE("enc_only and dec_only aggregate exactly one side") {
  auto enc_cfg = small_experiment(AggregationMode::enc_only);
  auto enc_res = run_experiment(enc_cfg);
  bool any_alpha = false, any_beta = false;
  for (const auto& w : enc_res.weights) {
    any_alpha |= w.part == "encoder";
    any_beta |= w.part == "decoder";
  }
  CHECK(any_alpha);
  CHECK_FALSE(any_beta);

  auto dec_cfg = small_experiment(AggregationMode::dec_only);
  auto dec_res = run_experiment(dec_cfg);
  any_alpha = any_beta = false;
  for (const auto& w : dec_res.weights) {
    any_alpha |= w.part == "encoder";
    any_beta |= w.part == "decoder";
  }
  CHECK_FALSE(any_alpha);
  CHECK(any_beta);

  // within one round (weights not yet applied), dec_only keeps the encoder on
  // the plain local step; afterwards the modified decoders feed back into the
  // encoder gradients, so trajectories may diverge
  auto local_cfg = small_experiment(AggregationMode::local);
  dec_cfg.hyper_ordering = HyperUpdateOrdering::after_apply;
  Federation f_dec(dec_cfg);
  Federation f_local(local_cfg);
  f_dec.run_round();
  f_local.run_round();
  for (const auto& [id, model] : f_dec.models()) {
    CHECK(tree_equal(model.encoder, f_local.models().at(id).encoder));
  }
}

TEST_CASE("results are independent of client listing order") {
  auto cfg = small_experiment(AggregationMode::hca2);
  auto reordered = cfg;
  std::swap(reordered.scenario.clients[0], reordered.scenario.clients[2]);

  Federation f1(cfg);
  Federation f2(reordered);
  for (int r = 0; r < 3; ++r) {
    f1.run_round();
    f2.run_round();
  }
  for (const auto& [id, model] : f1.models()) {
    CHECK(models_equal(model, f2.models().at(id)));
  }
}

TEST_CASE("round state checkpoints restore bit-identical trajectories") {
  auto cfg = small_experiment(AggregationMode::hca2, 9);
  cfg.rounds = 5;

  Federation straight(cfg);
  for (int r = 0; r < 5; ++r) straight.run_round();

  Federation first_half(cfg);
  for (int r = 0; r < 3; ++r) first_half.run_round();

  auto path = std::filesystem::temp_directory_path() / "fedhca_state_test.json";
  save_round_state(first_half.snapshot(), path);
  RoundState loaded = load_round_state(path);
  CHECK(loaded.round == 3);

  Federation second_half(cfg);
  second_half.restore(loaded);
  for (int r = 0; r < 2; ++r) second_half.run_round();

  for (const auto& [id, model] : straight.models()) {
    CHECK(models_equal(model, second_half.models().at(id)));
  }
  for (const auto& [id, a] : straight.weights().all_alpha()) {
    CHECK(a == second_half.weights().alpha(id));
  }
  std::filesystem::remove(path);
}

TEST_CASE("restore rejects a state from a different scenario") {
  auto cfg = small_experiment(AggregationMode::local);
  Federation fed(cfg);

  auto other_cfg = cfg;
  other_cfg.scenario.clients[0].id = "renamed";
  Federation other(other_cfg);
  CHECK_THROWS_WITH(fed.restore(other.snapshot()), Catch::Matchers::ContainsSubstring("renamed"));

  RoundState truncated = fed.snapshot();
  truncated.models.erase(truncated.models.begin());
  CHECK_THROWS_AS(fed.restore(truncated), std::invalid_argument);
}

TEST_CASE("checkpoint loader rejects unknown versions") {
  auto cfg = small_experiment(AggregationMode::local);
  Federation fed(cfg);
  auto j = round_state_to_json(fed.snapshot());
  j["version"] = 99;
  CHECK_THROWS_WITH(round_state_from_json(j), Catch::Matchers::ContainsSubstring("version"));
}
