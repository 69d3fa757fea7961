#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedhca/aggregation.hpp"
#include "fedhca/metrics.hpp"
#include "fedhca/param_space.hpp"
#include "fedhca/rng.hpp"
#include "fedhca/synth_data.hpp"
#include "fedhca/toy_models.hpp"

namespace fedhca {

enum class AggregationMode { local, fedavg, hca2, enc_only, dec_only };

inline const char* to_string(AggregationMode m) {
  switch (m) {
    case AggregationMode::local: return "local";
    case AggregationMode::fedavg: return "fedavg";
    case AggregationMode::hca2: return "hca2";
    case AggregationMode::enc_only: return "enc_only";
    case AggregationMode::dec_only: return "dec_only";
  }
  return "?";
}

inline AggregationMode parse_mode(const std::string& s) {
  if (s == "local") return AggregationMode::local;
  if (s == "fedavg") return AggregationMode::fedavg;
  if (s == "hca2") return AggregationMode::hca2;
  if (s == "enc_only") return AggregationMode::enc_only;
  if (s == "dec_only") return AggregationMode::dec_only;
  throw std::invalid_argument("unknown mode '" + s + "' (expected local|fedavg|hca2|enc_only|dec_only)");
}

// When the hyper weights are refreshed relative to applying the aggregation:
// before_apply updates them with the current round's deltas and then uses the
// new values; after_apply uses last round's values and refreshes afterwards.
enum class HyperUpdateOrdering { before_apply, after_apply };

inline const char* to_string(HyperUpdateOrdering o) {
  return o == HyperUpdateOrdering::before_apply ? "before_apply" : "after_apply";
}

struct ExperimentConfig {
  ScenarioConfig scenario;
  ArchSpec arch;
  int rounds = 50;
  int local_epochs = 1;
  int batch_size = 16;
  double lr = 0.1;
  AggregationMode mode = AggregationMode::hca2;
  ConflictAverseConfig conflict;
  HyperWeightConfig hyper;
  HyperUpdateOrdering hyper_ordering = HyperUpdateOrdering::before_apply;
  int eval_every = 1;
  std::uint64_t seed = 0;

  void validate() const {
    scenario.validate();
    arch.validate();
    conflict.validate();
    hyper.validate();
    if (arch.input_dim != scenario.input_dim) {
      throw std::invalid_argument("config: arch input_dim must equal scenario input_dim");
    }
    if (rounds < 1) throw std::invalid_argument("config: rounds must be >= 1");
    if (local_epochs < 1) throw std::invalid_argument("config: local_epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
    if (lr <= 0.0) throw std::invalid_argument("config: lr must be > 0");
    if (eval_every < 1) throw std::invalid_argument("config: eval_every must be >= 1");
  }
};

// What one client reports back after local training. Head parameters are
// carried alongside but never enter any aggregation path.
struct ClientUpdate {
  ParamTree encoder_delta;
  std::map<std::string, ParamTree> decoder_deltas;
  std::map<std::string, ParamTree> heads_after;
};

struct ClientUpdateResult {
  ClientUpdate update;
  ClientModel model;  // fully trained model, heads included
};

// Runs `epochs` passes of mini-batch SGD over the summed per-task losses and
// returns the per-part parameter delta relative to the incoming model.
inline ClientUpdateResult client_update(const ClientModel& model, const ClientDataset& data, int epochs,
                                        double lr, std::size_t batch_size, std::mt19937_64 rng) {
  if (epochs < 1) throw std::invalid_argument("client_update: epochs must be >= 1");
  if (lr < 0.0) throw std::invalid_argument("client_update: lr must be >= 0");
  ClientModel current = model;
  BatchSampler sampler(data, batch_size, std::move(rng));
  for (int e = 0; e < epochs; ++e) {
    for (std::size_t s = 0; s < sampler.batches_per_epoch(); ++s) {
      Batch batch = sampler.next();
      LossAndGrad lg;
      try {
        lg = loss_and_grad(current, batch, current.tasks);
      } catch (const std::exception& ex) {
        throw std::runtime_error("client diverged at epoch " + std::to_string(e + 1) + ", step " +
                                 std::to_string(s + 1) + ": " + ex.what());
      }
      current = sgd_step(current, lg.grad, lr);
    }
  }
  ClientUpdateResult out;
  out.update.encoder_delta = tree_sub(current.encoder, model.encoder);
  for (const auto& [task, dec] : current.decoders) {
    out.update.decoder_deltas.emplace(task, tree_sub(dec, model.decoders.at(task)));
  }
  out.update.heads_after = current.heads;
  out.model = std::move(current);
  return out;
}

// One-batch reference update of a shared multi-decoder model: the encoder
// moves by -lr times the summed per-task encoder gradients.
inline ParamTree mtl_reference_step(const ClientModel& model, const Batch& batch, double lr) {
  auto lg = loss_and_grad(model, batch, model.tasks);
  return tree_scale(lg.grad.encoder, -lr);
}

// Server-held snapshot between rounds: models after `round` completed rounds,
// the updates gathered in the round being processed (empty at a round
// boundary), and the hyper weights.
struct RoundState {
  int round = 0;
  std::map<std::string, ClientModel> models;
  std::map<std::string, ClientUpdate> updates;
  HyperWeights weights;
};

// Applies one server aggregation step. `state.models` holds the start-of-round
// parameters and `state.updates` the gathered client reports; the returned
// state holds the post-round models, refreshed hyper weights, and no updates.
inline RoundState server_round(const RoundState& state, AggregationMode mode,
                               const ExperimentConfig& cfg) {
  for (const auto& [id, model] : state.models) {
    if (!state.updates.count(id)) {
      throw std::runtime_error("server_round: missing report from client '" + id + "'");
    }
  }

  RoundState next;
  next.round = state.round + 1;
  next.weights = state.weights;

  const bool aggregate_enc = mode == AggregationMode::hca2 || mode == AggregationMode::enc_only;
  const bool aggregate_dec = mode == AggregationMode::hca2 || mode == AggregationMode::dec_only;
  const bool weights_first = cfg.hyper_ordering == HyperUpdateOrdering::before_apply;

  // --- encoder aggregation material ---
  SchemaPtr enc_schema = make_schema(state.models.begin()->second.encoder);
  std::map<std::string, FlatVector> enc_delta_flat;
  for (const auto& [id, upd] : state.updates) {
    enc_delta_flat.emplace(id, flatten(upd.encoder_delta, enc_schema));
  }

  FlatVector enc_unified;  // conflict-averse aggregated encoder update
  bool have_unified = false;
  if (aggregate_enc) {
    std::vector<FlatVector> deltas;
    deltas.reserve(enc_delta_flat.size());
    for (const auto& [id, v] : enc_delta_flat) deltas.push_back(v);
    enc_unified = solve_conflict_averse(deltas, cfg.conflict).unified;
    have_unified = true;
    if (weights_first) {
      for (const auto& [id, v] : enc_delta_flat) next.weights.update_alpha(id, enc_unified, v);
    }
  }

  FlatVector enc_fedavg_params;  // mean of current encoder parameters
  if (mode == AggregationMode::fedavg) {
    std::vector<FlatVector> params;
    for (const auto& [id, model] : state.models) {
      ParamTree current = tree_add_scaled(model.encoder, 1.0, state.updates.at(id).encoder_delta);
      params.push_back(flatten(current, enc_schema));
    }
    enc_fedavg_params = mean(params);
  }

  // --- decoder aggregation material ---
  std::map<DecoderKey, ParamTree> dec_aggregated;
  if (aggregate_dec) {
    std::map<DecoderKey, ParamTree> dec_deltas;
    for (const auto& [id, upd] : state.updates) {
      for (const auto& [task, tree] : upd.decoder_deltas) {
        dec_deltas.emplace(DecoderKey{id, task}, tree);
      }
    }
    dec_aggregated = aggregate_decoders(dec_deltas);
    if (weights_first) {
      for (const auto& [key, agg] : dec_aggregated) {
        const auto& delta = state.updates.at(key.first).decoder_deltas.at(key.second);
        for (std::size_t l = 0; l < agg.layers.size(); ++l) {
          next.weights.update_beta(key.first, key.second, agg.layers[l].id, agg.layers[l].data,
                                   delta.layers[l].data);
        }
      }
    }
  }

  SchemaPtr dec_schema;
  FlatVector dec_fedavg_params;  // mean over all K decoders' current parameters
  if (mode == AggregationMode::fedavg) {
    std::vector<FlatVector> params;
    for (const auto& [id, model] : state.models) {
      for (const auto& [task, dec] : model.decoders) {
        if (!dec_schema) dec_schema = make_schema(dec);
        ParamTree current = tree_add_scaled(dec, 1.0, state.updates.at(id).decoder_deltas.at(task));
        params.push_back(flatten(current, dec_schema));
      }
    }
    dec_fedavg_params = mean(params);
  }

  // --- apply per client ---
  for (const auto& [id, model] : state.models) {
    const ClientUpdate& upd = state.updates.at(id);
    ClientModel updated = model;

    switch (mode) {
      case AggregationMode::local:
        updated.encoder = apply_personalized_update(model.encoder, upd.encoder_delta, 0.0, nullptr);
        break;
      case AggregationMode::fedavg:
        updated.encoder = unflatten(enc_fedavg_params);
        break;
      default: {
        if (aggregate_enc) {
          ParamTree unified_tree = unflatten(enc_unified);
          updated.encoder = apply_personalized_update(model.encoder, upd.encoder_delta,
                                                      next.weights.alpha(id), &unified_tree);
        } else {
          updated.encoder = apply_personalized_update(model.encoder, upd.encoder_delta, 0.0, nullptr);
        }
        break;
      }
    }

    for (auto& [task, dec] : updated.decoders) {
      const ParamTree& delta = upd.decoder_deltas.at(task);
      if (mode == AggregationMode::fedavg) {
        dec = unflatten(dec_fedavg_params);
      } else if (aggregate_dec) {
        const ParamTree& agg = dec_aggregated.at(DecoderKey{id, task});
        std::map<std::string, double> psi;
        for (const auto& layer : agg.layers) {
          psi[layer.id] = next.weights.beta(id, task, layer.id);
        }
        dec = apply_personalized_update(model.decoders.at(task), delta, psi, &agg);
      } else {
        dec = apply_personalized_update(model.decoders.at(task), delta, 0.0, nullptr);
      }
    }

    // heads stay exactly what local training produced
    updated.heads = upd.heads_after;
    next.models.emplace(id, std::move(updated));
  }

  if (!weights_first) {
    if (have_unified) {
      for (const auto& [id, v] : enc_delta_flat) next.weights.update_alpha(id, enc_unified, v);
    }
    for (const auto& [key, agg] : dec_aggregated) {
      const auto& delta = state.updates.at(key.first).decoder_deltas.at(key.second);
      for (std::size_t l = 0; l < agg.layers.size(); ++l) {
        next.weights.update_beta(key.first, key.second, agg.layers[l].id, agg.layers[l].data,
                                 delta.layers[l].data);
      }
    }
  }

  return next;
}

// Drives the whole experiment: local training on every client each round,
// then one server aggregation step. Clients own independent RNG streams keyed
// by client id and round, so results do not depend on scheduling order.
class Federation {
 public:
  explicit Federation(ExperimentConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    auto datasets = make_scenario(cfg_.scenario);
    for (std::size_t i = 0; i < datasets.size(); ++i) {
      const ClientSpec& spec = cfg_.scenario.clients[i];
      data_.emplace(spec.id, std::move(datasets[i]));
      epochs_[spec.id] = spec.epochs.value_or(cfg_.local_epochs);
      auto tasks = cfg_.scenario.client_tasks(spec);
      state_.models.emplace(spec.id,
                            init_model(cfg_.arch, tasks, derive_stream(cfg_.seed, "client/" + spec.id + "/init")));
    }
    state_.weights = HyperWeights(cfg_.hyper);
  }

  const ExperimentConfig& config() const { return cfg_; }
  int rounds_done() const { return state_.round; }
  const std::map<std::string, ClientModel>& models() const { return state_.models; }
  const HyperWeights& weights() const { return state_.weights; }
  const ClientDataset& dataset(const std::string& id) const { return data_.at(id); }

  void run_round() {
    const int r = state_.round + 1;
    RoundState working = state_;
    for (const auto& [id, model] : state_.models) {
      std::size_t batch = std::min<std::size_t>(cfg_.batch_size, data_.at(id).train.size);
      auto rng = make_rng(cfg_.seed, "client/" + id + "/round/" + std::to_string(r));
      try {
        auto res = client_update(model, data_.at(id), epochs_.at(id), cfg_.lr, batch, std::move(rng));
        working.updates.emplace(id, std::move(res.update));
      } catch (const std::exception& ex) {
        throw std::runtime_error("round " + std::to_string(r) + ", client '" + id + "': " + ex.what());
      }
    }
    state_ = server_round(working, cfg_.mode, cfg_);
  }

  std::map<std::string, std::map<std::string, TaskMetric>> evaluate_all() const {
    std::map<std::string, std::map<std::string, TaskMetric>> out;
    for (const auto& [id, model] : state_.models) {
      out.emplace(id, evaluate(model, data_.at(id).test, model.tasks));
    }
    return out;
  }

  RoundState snapshot() const { return state_; }
  void restore(const RoundState& state) {
    if (state.models.size() != state_.models.size()) {
      throw std::invalid_argument("restore: client set does not match the configured scenario");
    }
    for (const auto& [id, model] : state.models) {
      if (!state_.models.count(id)) throw std::invalid_argument("restore: unknown client '" + id + "'");
    }
    state_ = state;
  }

 private:
  ExperimentConfig cfg_;
  std::map<std::string, ClientDataset> data_;
  std::map<std::string, int> epochs_;
  RoundState state_;
};

// Records the implementation choices that fill gaps left open by the method
// description; echoed into every run summary.
inline nlohmann::json experiment_manifest(const ExperimentConfig& cfg) {
  nlohmann::json m;
  m["optimizer"] = "sgd";
  m["losses"] = {{"regression", "mean squared error (0.5*sum over dims, mean over batch)"},
                 {"binary_classification", "logistic loss on a single logit"}};
  m["init"] = "weights uniform(-s, s) with s = 1/sqrt(fan_in), biases zero";
  m["attention_temperature"] = "sqrt of flattened layer element count";
  m["hyper_weight_update"] = {{"rule", "ascent"},
                              {"normalization", "cosine (inner product over product of norms + 1e-12)"},
                              {"lr", cfg.hyper.lr},
                              {"clamp", {cfg.hyper.clamp_lo, cfg.hyper.clamp_hi}},
                              {"init", 0.0},
                              {"ordering", to_string(cfg.hyper_ordering)}};
  m["conflict_averse"] = {{"c", cfg.conflict.c},
                          {"solver", "projected gradient descent on the scaled Gram system"},
                          {"max_iters", cfg.conflict.solver_max_iters},
                          {"tol", cfg.conflict.solver_tol},
                          {"step", cfg.conflict.solver_step}};
  m["participation"] = "all clients every round";
  return m;
}

inline RunResult run_experiment(const ExperimentConfig& cfg, RoundState* final_state = nullptr) {
  auto t0 = std::chrono::steady_clock::now();
  Federation fed(cfg);

  RunResult result;
  result.rounds = cfg.rounds;
  result.manifest = experiment_manifest(cfg);

  auto record_metrics = [&](int round) {
    std::vector<MetricRow> rows;
    for (const auto& [client, metrics] : fed.evaluate_all()) {
      for (const auto& [task, m] : metrics) {
        MetricRow row;
        row.round = round;
        row.client = client;
        row.task = task;
        row.metric = m.direction == MetricDirection::lower_better ? "rmse" : "accuracy";
        row.value = m.value;
        row.direction = direction_flag(m.direction);
        rows.push_back(std::move(row));
      }
    }
    return rows;
  };

  for (int r = 1; r <= cfg.rounds; ++r) {
    try {
      fed.run_round();
    } catch (const std::exception& ex) {
      throw std::runtime_error(std::string("experiment failed: ") + ex.what());
    }
    if (r % cfg.eval_every == 0 || r == cfg.rounds) {
      auto rows = record_metrics(r);
      result.metrics.insert(result.metrics.end(), rows.begin(), rows.end());
      if (r == cfg.rounds) result.final_metrics = rows;
    }
    for (const auto& [client, a] : fed.weights().all_alpha()) {
      result.weights.push_back({r, client, "encoder", "", "", a});
    }
    for (const auto& [key, b] : fed.weights().all_beta()) {
      result.weights.push_back({r, std::get<0>(key), "decoder", std::get<1>(key), std::get<2>(key), b});
    }
  }
  if (cfg.mode == AggregationMode::local) result.final_delta_m = 0.0;
  if (final_state != nullptr) *final_state = fed.snapshot();

  result.wall_time_sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

// The default experiment over the benchmark scenario: every deliberate
// default in one place, parameterized only by the master seed.
inline ExperimentConfig default_benchmark_experiment(std::uint64_t seed) {
  ExperimentConfig cfg;
  cfg.scenario = default_benchmark_scenario();
  cfg.scenario.seed = derive_stream(seed, "scenario");
  cfg.arch.input_dim = cfg.scenario.input_dim;
  cfg.arch.encoder_widths = {16, 8};
  cfg.arch.decoder_widths = {8};
  cfg.rounds = 50;
  cfg.local_epochs = 1;
  cfg.batch_size = 16;
  cfg.lr = 0.1;
  cfg.mode = AggregationMode::hca2;
  cfg.eval_every = 1;
  cfg.seed = seed;
  return cfg;
}

// --- checkpointing -----------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline nlohmann::json tree_to_json(const ParamTree& tree) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : tree.layers) {
    layers.push_back({{"id", l.id}, {"shape", l.shape}, {"data", l.data}});
  }
  return layers;
}

inline ParamTree tree_from_json(const nlohmann::json& j) {
  ParamTree tree;
  for (const auto& lj : j) {
    ParamLayer l;
    l.id = lj.at("id").get<std::string>();
    l.shape = lj.at("shape").get<std::vector<std::size_t>>();
    l.data = lj.at("data").get<std::vector<double>>();
    tree.layers.push_back(std::move(l));
  }
  return tree;
}

inline nlohmann::json model_to_json(const ClientModel& model) {
  nlohmann::json j;
  j["arch"] = {{"input_dim", model.arch.input_dim},
               {"encoder_widths", model.arch.encoder_widths},
               {"decoder_widths", model.arch.decoder_widths}};
  nlohmann::json tasks = nlohmann::json::array();
  for (const auto& t : model.tasks) {
    tasks.push_back({{"id", t.id}, {"kind", to_string(t.kind)}, {"output_dim", t.output_dim}});
  }
  j["tasks"] = tasks;
  j["encoder"] = tree_to_json(model.encoder);
  nlohmann::json decs, heads;
  for (const auto& [task, tree] : model.decoders) decs[task] = tree_to_json(tree);
  for (const auto& [task, tree] : model.heads) heads[task] = tree_to_json(tree);
  j["decoders"] = decs;
  j["heads"] = heads;
  return j;
}

inline ClientModel model_from_json(const nlohmann::json& j) {
  ClientModel model;
  model.arch.input_dim = j.at("arch").at("input_dim").get<int>();
  model.arch.encoder_widths = j.at("arch").at("encoder_widths").get<std::vector<int>>();
  model.arch.decoder_widths = j.at("arch").at("decoder_widths").get<std::vector<int>>();
  for (const auto& tj : j.at("tasks")) {
    TaskSpec t;
    t.id = tj.at("id").get<std::string>();
    t.kind = tj.at("kind").get<std::string>() == "regression" ? TaskKind::regression
                                                              : TaskKind::binary_classification;
    t.output_dim = tj.at("output_dim").get<int>();
    model.tasks.push_back(std::move(t));
  }
  model.encoder = tree_from_json(j.at("encoder"));
  for (const auto& [task, tj] : j.at("decoders").items()) model.decoders[task] = tree_from_json(tj);
  for (const auto& [task, tj] : j.at("heads").items()) model.heads[task] = tree_from_json(tj);
  return model;
}

}  // namespace detail

inline nlohmann::json round_state_to_json(const RoundState& state) {
  nlohmann::json j;
  j["version"] = kCheckpointVersion;
  j["round"] = state.round;
  nlohmann::json models;
  for (const auto& [id, model] : state.models) models[id] = detail::model_to_json(model);
  j["models"] = models;
  nlohmann::json alpha;
  for (const auto& [client, v] : state.weights.all_alpha()) alpha[client] = v;
  nlohmann::json beta = nlohmann::json::array();
  for (const auto& [key, v] : state.weights.all_beta()) {
    beta.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), v});
  }
  j["hyper"] = {{"lr", state.weights.config().lr},
                {"clamp", {state.weights.config().clamp_lo, state.weights.config().clamp_hi}},
                {"alpha", alpha},
                {"beta", beta}};
  return j;
}

inline RoundState round_state_from_json(const nlohmann::json& j) {
  int version = j.at("version").get<int>();
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint version " + std::to_string(version) + " is not supported");
  }
  RoundState state;
  state.round = j.at("round").get<int>();
  for (const auto& [id, mj] : j.at("models").items()) {
    state.models.emplace(id, detail::model_from_json(mj));
  }
  const auto& hj = j.at("hyper");
  HyperWeightConfig hcfg;
  hcfg.lr = hj.at("lr").get<double>();
  hcfg.clamp_lo = hj.at("clamp").at(0).get<double>();
  hcfg.clamp_hi = hj.at("clamp").at(1).get<double>();
  state.weights = HyperWeights(hcfg);
  for (const auto& [client, v] : hj.at("alpha").items()) {
    state.weights.set_alpha(client, v.get<double>());
  }
  for (const auto& bj : hj.at("beta")) {
    state.weights.set_beta(bj.at(0).get<std::string>(), bj.at(1).get<std::string>(),
                           bj.at(2).get<std::string>(), bj.at(3).get<double>());
  }
  return state;
}

inline void save_round_state(const RoundState& state, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  os << round_state_to_json(state).dump() << '\n';
  if (!os) throw std::runtime_error("checkpoint write failed: " + path.string());
}

inline RoundState load_round_state(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path.string());
  nlohmann::json j;
  is >> j;
  return round_state_from_json(j);
}

}  // namespace fedhca
