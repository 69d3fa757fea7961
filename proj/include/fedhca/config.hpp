#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedhca/federation.hpp"

namespace fedhca {

// Experiment configs are JSON with nested sections. Parsing is strict: every
// unknown key is a hard error (a typo in "c" or "hyper.lr" must not silently
// run a different experiment), every constraint violation names the invariant,
// and all defaults are materialized so the echoed config replays exactly.

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ConfigOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<AggregationMode> mode;
};

namespace detail {

inline void check_keys(const nlohmann::json& obj, const std::string& path,
                       const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw ConfigError(path + ": expected an object");
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) {
      throw ConfigError("unknown config key '" + (path.empty() ? key : path + "." + key) + "'");
    }
  }
}

template <typename T>
T get_as(const nlohmann::json& obj, const std::string& path, const std::string& key) {
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError("config key '" + (path.empty() ? key : path + "." + key) + "': " + ex.what());
  }
}

template <typename T>
T get_or(const nlohmann::json& obj, const std::string& path, const std::string& key, T fallback) {
  if (!obj.contains(key)) return fallback;
  return get_as<T>(obj, path, key);
}

inline TaskKind parse_kind(const std::string& s, const std::string& path) {
  if (s == "regression") return TaskKind::regression;
  if (s == "binary_classification" || s == "classification") return TaskKind::binary_classification;
  throw ConfigError(path + ".kind: unknown task kind '" + s + "'");
}

inline ScenarioConfig parse_scenario(const nlohmann::json& j, std::uint64_t master_seed) {
  check_keys(j, "scenario",
             {"input_dim", "latent_dim", "domain_shift", "noise_std", "seed", "tasks", "clients"});
  ScenarioConfig s;
  s.input_dim = get_or(j, "scenario", "input_dim", 8);
  s.latent_dim = get_or(j, "scenario", "latent_dim", 3);
  s.domain_shift = get_or(j, "scenario", "domain_shift", 1.0);
  s.noise_std = get_or(j, "scenario", "noise_std", 0.05);
  s.seed = j.contains("seed") ? get_as<std::uint64_t>(j, "scenario", "seed")
                              : derive_stream(master_seed, "scenario");
  if (!j.contains("tasks")) throw ConfigError("scenario.tasks is required");
  for (const auto& tj : j.at("tasks")) {
    std::string path = "scenario.tasks[" + std::to_string(s.tasks.size()) + "]";
    check_keys(tj, path, {"id", "kind", "output_dim"});
    TaskSpec t;
    t.id = get_as<std::string>(tj, path, "id");
    t.kind = parse_kind(get_or<std::string>(tj, path, "kind", "regression"), path);
    t.output_dim = get_or(tj, path, "output_dim", 1);
    s.tasks.push_back(std::move(t));
  }
  if (!j.contains("clients")) throw ConfigError("scenario.clients is required");
  for (const auto& cj : j.at("clients")) {
    std::string path = "scenario.clients[" + std::to_string(s.clients.size()) + "]";
    check_keys(cj, path, {"id", "tasks", "domain", "n_train", "n_test", "epochs"});
    ClientSpec c;
    c.id = get_as<std::string>(cj, path, "id");
    c.task_ids = get_as<std::vector<std::string>>(cj, path, "tasks");
    c.domain_id = get_or(cj, path, "domain", 0);
    c.n_train = get_or(cj, path, "n_train", 64);
    c.n_test = get_or(cj, path, "n_test", 256);
    if (cj.contains("epochs")) c.epochs = get_as<int>(cj, path, "epochs");
    s.clients.push_back(std::move(c));
  }
  return s;
}

}  // namespace detail

inline ExperimentConfig parse_config_json(const nlohmann::json& j, const ConfigOverrides& overrides = {}) {
  detail::check_keys(j, "", {"scenario", "arch", "rounds", "local_epochs", "batch_size", "lr", "mode",
                             "eval_every", "seed", "conflict_averse", "hyper"});
  ExperimentConfig cfg;
  cfg.seed = detail::get_or<std::uint64_t>(j, "", "seed", 0);
  if (overrides.seed.has_value()) cfg.seed = *overrides.seed;

  if (!j.contains("scenario")) throw ConfigError("scenario is required");
  cfg.scenario = detail::parse_scenario(j.at("scenario"), cfg.seed);

  cfg.arch.input_dim = cfg.scenario.input_dim;
  if (j.contains("arch")) {
    detail::check_keys(j.at("arch"), "arch", {"encoder_widths", "decoder_widths"});
    cfg.arch.encoder_widths =
        detail::get_or(j.at("arch"), "arch", "encoder_widths", std::vector<int>{16, 8});
    cfg.arch.decoder_widths =
        detail::get_or(j.at("arch"), "arch", "decoder_widths", std::vector<int>{8});
  }

  if (!j.contains("rounds")) throw ConfigError("rounds is required");
  cfg.rounds = detail::get_as<int>(j, "", "rounds");
  cfg.local_epochs = detail::get_or(j, "", "local_epochs", 1);
  cfg.batch_size = detail::get_or(j, "", "batch_size", 16);
  cfg.lr = detail::get_or(j, "", "lr", 0.1);
  cfg.eval_every = detail::get_or(j, "", "eval_every", 1);

  std::string mode = detail::get_or<std::string>(j, "", "mode", "hca2");
  try {
    cfg.mode = parse_mode(mode);
  } catch (const std::exception& ex) {
    throw ConfigError(std::string("mode: ") + ex.what());
  }
  if (overrides.mode.has_value()) cfg.mode = *overrides.mode;

  if (j.contains("conflict_averse")) {
    const auto& cj = j.at("conflict_averse");
    detail::check_keys(cj, "conflict_averse", {"c", "solver_max_iters", "solver_tol", "solver_step"});
    cfg.conflict.c = detail::get_or(cj, "conflict_averse", "c", 0.4);
    cfg.conflict.solver_max_iters = detail::get_or(cj, "conflict_averse", "solver_max_iters", 2000);
    cfg.conflict.solver_tol = detail::get_or(cj, "conflict_averse", "solver_tol", 1e-12);
    cfg.conflict.solver_step = detail::get_or(cj, "conflict_averse", "solver_step", 0.5);
  }

  if (j.contains("hyper")) {
    const auto& hj = j.at("hyper");
    detail::check_keys(hj, "hyper", {"lr", "clamp", "ordering"});
    cfg.hyper.lr = detail::get_or(hj, "hyper", "lr", 0.1);
    auto clamp = detail::get_or(hj, "hyper", "clamp", std::vector<double>{0.0, 1.0});
    if (clamp.size() != 2) throw ConfigError("hyper.clamp: expected [lo, hi]");
    cfg.hyper.clamp_lo = clamp[0];
    cfg.hyper.clamp_hi = clamp[1];
    std::string ordering = detail::get_or<std::string>(hj, "hyper", "ordering", "before_apply");
    if (ordering == "before_apply") {
      cfg.hyper_ordering = HyperUpdateOrdering::before_apply;
    } else if (ordering == "after_apply") {
      cfg.hyper_ordering = HyperUpdateOrdering::after_apply;
    } else {
      throw ConfigError("hyper.ordering: expected before_apply or after_apply");
    }
  }

  try {
    cfg.validate();
  } catch (const std::exception& ex) {
    throw ConfigError(ex.what());
  }
  return cfg;
}

inline ExperimentConfig parse_config(const std::filesystem::path& path, const ConfigOverrides& overrides = {}) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config file not found: " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + ex.what());
  }
  return parse_config_json(j, overrides);
}

// Full config with every default made explicit; parse_config_json of the
// result reproduces the same ExperimentConfig.
inline nlohmann::json materialize_config(const ExperimentConfig& cfg) {
  nlohmann::json j;
  nlohmann::json tasks = nlohmann::json::array();
  for (const auto& t : cfg.scenario.tasks) {
    tasks.push_back({{"id", t.id}, {"kind", to_string(t.kind)}, {"output_dim", t.output_dim}});
  }
  nlohmann::json clients = nlohmann::json::array();
  for (const auto& c : cfg.scenario.clients) {
    nlohmann::json cj = {{"id", c.id},       {"tasks", c.task_ids},   {"domain", c.domain_id},
                         {"n_train", c.n_train}, {"n_test", c.n_test}};
    if (c.epochs.has_value()) cj["epochs"] = *c.epochs;
    clients.push_back(std::move(cj));
  }
  j["scenario"] = {{"input_dim", cfg.scenario.input_dim},
                   {"latent_dim", cfg.scenario.latent_dim},
                   {"domain_shift", cfg.scenario.domain_shift},
                   {"noise_std", cfg.scenario.noise_std},
                   {"seed", cfg.scenario.seed},
                   {"tasks", tasks},
                   {"clients", clients}};
  j["arch"] = {{"encoder_widths", cfg.arch.encoder_widths}, {"decoder_widths", cfg.arch.decoder_widths}};
  j["rounds"] = cfg.rounds;
  j["local_epochs"] = cfg.local_epochs;
  j["batch_size"] = cfg.batch_size;
  j["lr"] = cfg.lr;
  j["mode"] = to_string(cfg.mode);
  j["eval_every"] = cfg.eval_every;
  j["seed"] = cfg.seed;
  j["conflict_averse"] = {{"c", cfg.conflict.c},
                          {"solver_max_iters", cfg.conflict.solver_max_iters},
                          {"solver_tol", cfg.conflict.solver_tol},
                          {"solver_step", cfg.conflict.solver_step}};
  j["hyper"] = {{"lr", cfg.hyper.lr},
                {"clamp", {cfg.hyper.clamp_lo, cfg.hyper.clamp_hi}},
                {"ordering", to_string(cfg.hyper_ordering)}};
  return j;
}

inline bool config_equal(const ExperimentConfig& a, const ExperimentConfig& b) {
  return materialize_config(a) == materialize_config(b);
}

}  // namespace fedhca
