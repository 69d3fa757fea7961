#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedhca/numeric.hpp"
#include "fedhca/rng.hpp"
#include "fedhca/task.hpp"

namespace fedhca {

// Synthetic heterogeneous multi-task scenarios. All tasks factor through one
// global latent map G: features x ~ Normal(mu_domain, I), latent z = G x, and
// task t's labels come from a task-specific map of z plus observation noise.
// Domains differ by shifting every feature coordinate by domain_shift per
// domain index. Task maps are drawn per task id, so the same task on two
// clients shares its ground-truth map; that shared structure is what makes
// cross-client transfer possible at all.

struct ClientSpec {
  std::string id;
  std::vector<std::string> task_ids;
  int domain_id = 0;
  int n_train = 64;
  int n_test = 256;
  std::optional<int> epochs;  // per-client local-epoch override
};

struct ScenarioConfig {
  std::vector<TaskSpec> tasks;  // the task universe of the federation
  std::vector<ClientSpec> clients;
  int input_dim = 8;
  int latent_dim = 3;
  double domain_shift = 1.0;
  double noise_std = 0.05;
  std::uint64_t seed = 0;

  const TaskSpec& task(const std::string& id) const {
    for (const auto& t : tasks) {
      if (t.id == id) return t;
    }
    throw std::invalid_argument("scenario has no task '" + id + "'");
  }

  std::vector<TaskSpec> client_tasks(const ClientSpec& c) const {
    std::vector<TaskSpec> out;
    out.reserve(c.task_ids.size());
    for (const auto& tid : c.task_ids) out.push_back(task(tid));
    return out;
  }

  void validate() const {
    if (input_dim < 1 || latent_dim < 1) throw std::invalid_argument("scenario: degenerate dims");
    if (domain_shift < 0.0) throw std::invalid_argument("scenario: domain_shift must be >= 0");
    if (noise_std < 0.0) throw std::invalid_argument("scenario: noise_std must be >= 0");
    if (clients.empty()) throw std::invalid_argument("scenario: no clients");
    if (tasks.empty()) throw std::invalid_argument("scenario: no tasks");
    std::set<std::string> task_ids;
    for (const auto& t : tasks) {
      if (t.output_dim < 1) throw std::invalid_argument("scenario: task output_dim must be >= 1");
      if (!task_ids.insert(t.id).second) throw std::invalid_argument("scenario: duplicate task '" + t.id + "'");
    }
    std::set<std::string> client_ids;
    std::set<TaskKind> kinds_in_use;
    for (const auto& c : clients) {
      if (!client_ids.insert(c.id).second) {
        throw std::invalid_argument("scenario: duplicate client '" + c.id + "'");
      }
      if (c.task_ids.empty()) throw std::invalid_argument("scenario: client '" + c.id + "' has no tasks");
      if (c.n_train < 1 || c.n_test < 1) {
        throw std::invalid_argument("scenario: client '" + c.id + "' needs n_train >= 1 and n_test >= 1");
      }
      std::set<std::string> seen;
      for (const auto& tid : c.task_ids) {
        if (!task_ids.count(tid)) {
          throw std::invalid_argument("scenario: client '" + c.id + "' references unknown task '" + tid + "'");
        }
        if (!seen.insert(tid).second) {
          throw std::invalid_argument("scenario: client '" + c.id + "' lists task '" + tid + "' twice");
        }
        kinds_in_use.insert(task(tid).kind);
      }
    }
    if (clients.size() >= 2 && kinds_in_use.size() < 2) {
      throw std::invalid_argument("scenario: federations with >= 2 clients need at least 2 distinct task kinds");
    }
  }
};

struct DomainDescriptor {
  std::vector<double> mean;    // input_dim
  std::vector<double> mixing;  // input_dim x input_dim, row-major
};

struct ClientDataset {
  std::string client_id;
  int input_dim = 0;
  std::vector<std::string> task_ids;
  Batch train;
  Batch test;
  DomainDescriptor domain;
};

namespace detail {

// Ground-truth maps shared across the federation.
struct LabelMaps {
  std::vector<double> latent;  // latent_dim x input_dim
  struct TaskMap {
    TaskSpec spec;
    std::vector<double> weight;  // output_dim x latent_dim
    std::vector<double> bias;    // output_dim
  };
  std::map<std::string, TaskMap> task_maps;
};

inline LabelMaps make_label_maps(const ScenarioConfig& cfg) {
  LabelMaps maps;
  {
    auto rng = make_rng(cfg.seed, "scenario/latent");
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(cfg.input_dim)));
    maps.latent.resize(static_cast<std::size_t>(cfg.latent_dim) * cfg.input_dim);
    for (auto& v : maps.latent) v = dist(rng);
  }
  for (const auto& t : cfg.tasks) {
    auto rng = make_rng(cfg.seed, "scenario/task/" + t.id);
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(cfg.latent_dim)));
    LabelMaps::TaskMap tm;
    tm.spec = t;
    int out = t.kind == TaskKind::binary_classification ? 1 : t.output_dim;
    tm.weight.resize(static_cast<std::size_t>(out) * cfg.latent_dim);
    for (auto& v : tm.weight) v = dist(rng);
    std::normal_distribution<double> bias_dist(0.0, 0.2);
    tm.bias.resize(out);
    for (auto& v : tm.bias) v = bias_dist(rng);
    maps.task_maps.emplace(t.id, std::move(tm));
  }
  return maps;
}

inline std::vector<double> domain_mean(const ScenarioConfig& cfg, int domain_id) {
  return std::vector<double>(cfg.input_dim, cfg.domain_shift * static_cast<double>(domain_id));
}

inline Batch generate_split(const ScenarioConfig& cfg, const ClientSpec& client, const LabelMaps& maps,
                            int n, const std::string& split_label) {
  Batch batch;
  batch.size = static_cast<std::size_t>(n);
  batch.features.resize(batch.size * cfg.input_dim);
  auto mu = domain_mean(cfg, client.domain_id);
  {
    auto rng = make_rng(cfg.seed, "scenario/client/" + client.id + "/" + split_label + "/features");
    std::normal_distribution<double> unit(0.0, 1.0);
    for (std::size_t r = 0; r < batch.size; ++r) {
      for (int i = 0; i < cfg.input_dim; ++i) {
        batch.features[r * cfg.input_dim + i] = mu[i] + unit(rng);
      }
    }
  }
  // latent codes z = G x
  std::vector<double> z(batch.size * cfg.latent_dim, 0.0);
  for (std::size_t r = 0; r < batch.size; ++r) {
    for (int j = 0; j < cfg.latent_dim; ++j) {
      double acc = 0.0;
      for (int i = 0; i < cfg.input_dim; ++i) {
        acc += maps.latent[static_cast<std::size_t>(j) * cfg.input_dim + i] * batch.features[r * cfg.input_dim + i];
      }
      z[r * cfg.latent_dim + j] = acc;
    }
  }
  for (const auto& tid : client.task_ids) {
    const auto& tm = maps.task_maps.at(tid);
    const int out = static_cast<int>(tm.bias.size());
    TaskLabels labels;
    labels.dim = static_cast<std::size_t>(out);
    labels.values.resize(batch.size * out);
    auto rng = make_rng(cfg.seed, "scenario/client/" + client.id + "/" + split_label + "/task/" + tid);
    std::normal_distribution<double> unit(0.0, 1.0);
    for (std::size_t r = 0; r < batch.size; ++r) {
      for (int o = 0; o < out; ++o) {
        double acc = tm.bias[o];
        for (int j = 0; j < cfg.latent_dim; ++j) {
          acc += tm.weight[static_cast<std::size_t>(o) * cfg.latent_dim + j] * z[r * cfg.latent_dim + j];
        }
        double eps = cfg.noise_std > 0.0 ? cfg.noise_std * unit(rng) : 0.0;
        double& y = labels.values[r * out + o];
        if (tm.spec.kind == TaskKind::regression) {
          y = std::tanh(acc) + eps;
        } else {
          y = (acc + eps) > 0.0 ? 1.0 : 0.0;
        }
      }
    }
    batch.labels.emplace(tid, std::move(labels));
  }
  return batch;
}

}  // namespace detail

inline std::vector<ClientDataset> make_scenario(const ScenarioConfig& cfg) {
  cfg.validate();
  auto maps = detail::make_label_maps(cfg);
  std::vector<ClientDataset> out;
  out.reserve(cfg.clients.size());
  for (const auto& client : cfg.clients) {
    ClientDataset ds;
    ds.client_id = client.id;
    ds.input_dim = cfg.input_dim;
    ds.task_ids = client.task_ids;
    ds.train = detail::generate_split(cfg, client, maps, client.n_train, "train");
    ds.test = detail::generate_split(cfg, client, maps, client.n_test, "test");
    ds.domain.mean = detail::domain_mean(cfg, client.domain_id);
    ds.domain.mixing.assign(static_cast<std::size_t>(cfg.input_dim) * cfg.input_dim, 0.0);
    for (int i = 0; i < cfg.input_dim; ++i) {
      ds.domain.mixing[static_cast<std::size_t>(i) * cfg.input_dim + i] = 1.0;
    }
    out.push_back(std::move(ds));
  }
  return out;
}

inline Batch select_rows(const Batch& data, int input_dim, const std::vector<std::size_t>& rows) {
  Batch out;
  out.size = rows.size();
  out.features.reserve(rows.size() * input_dim);
  for (std::size_t r : rows) {
    out.features.insert(out.features.end(), data.features.begin() + r * input_dim,
                        data.features.begin() + (r + 1) * input_dim);
  }
  for (const auto& [tid, labels] : data.labels) {
    TaskLabels sel;
    sel.dim = labels.dim;
    sel.values.reserve(rows.size() * labels.dim);
    for (std::size_t r : rows) {
      sel.values.insert(sel.values.end(), labels.values.begin() + r * labels.dim,
                        labels.values.begin() + (r + 1) * labels.dim);
    }
    out.labels.emplace(tid, std::move(sel));
  }
  return out;
}

// Without-replacement mini-batch iteration; each epoch is a fresh shuffled
// partition of the training indices (the last batch of an epoch may be short).
class BatchSampler {
 public:
  BatchSampler(const ClientDataset& dataset, std::size_t batch_size, std::mt19937_64 rng)
      : dataset_(&dataset), batch_size_(batch_size), rng_(std::move(rng)) {
    if (batch_size_ == 0) throw std::invalid_argument("sample_batch: batch_size must be >= 1");
    if (dataset.train.size == 0) throw std::invalid_argument("sample_batch: empty dataset");
    if (batch_size_ > dataset.train.size) {
      throw std::invalid_argument("sample_batch: batch_size exceeds n_train");
    }
    order_.resize(dataset.train.size);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    reshuffle();
  }

  Batch next() {
    if (cursor_ >= order_.size()) reshuffle();
    std::size_t take = std::min(batch_size_, order_.size() - cursor_);
    std::vector<std::size_t> rows(order_.begin() + cursor_, order_.begin() + cursor_ + take);
    cursor_ += take;
    return select_rows(dataset_->train, dataset_->input_dim, rows);
  }

  std::size_t batches_per_epoch() const {
    return (order_.size() + batch_size_ - 1) / batch_size_;
  }

 private:
  void reshuffle() {
    std::shuffle(order_.begin(), order_.end(), rng_);
    cursor_ = 0;
  }

  const ClientDataset* dataset_;
  std::size_t batch_size_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

inline Batch sample_batch(const ClientDataset& dataset, std::size_t batch_size, std::mt19937_64 rng) {
  BatchSampler sampler(dataset, batch_size, std::move(rng));
  return sampler.next();
}

// Columnar text dump for inspection: split,row,x0..x{d-1},<task>_0,...
inline void dump_dataset_csv(const ClientDataset& ds, std::ostream& os) {
  os << "split,row";
  for (int i = 0; i < ds.input_dim; ++i) os << ",x" << i;
  std::vector<std::string> task_ids;
  for (const auto& [tid, labels] : ds.train.labels) {
    for (std::size_t o = 0; o < labels.dim; ++o) os << "," << tid << "_" << o;
    task_ids.push_back(tid);
  }
  os << "\n";
  auto dump_split = [&](const char* name, const Batch& b) {
    for (std::size_t r = 0; r < b.size; ++r) {
      os << name << "," << r;
      for (int i = 0; i < ds.input_dim; ++i) {
        os << "," << format_double(b.features[r * ds.input_dim + i]);
      }
      for (const auto& tid : task_ids) {
        const auto& labels = b.labels.at(tid);
        for (std::size_t o = 0; o < labels.dim; ++o) {
          os << "," << format_double(labels.values[r * labels.dim + o]);
        }
      }
      os << "\n";
    }
  };
  dump_split("train", ds.train);
  dump_split("test", ds.test);
}

// The default benchmark: five single-task clients on domain 0 plus one
// four-task client on domain 1, with a mix of regression and classification
// tasks.
inline ScenarioConfig default_benchmark_scenario() {
  ScenarioConfig cfg;
  cfg.input_dim = 8;
  cfg.latent_dim = 3;
  cfg.domain_shift = 1.0;
  cfg.noise_std = 0.05;
  cfg.seed = 0;
  cfg.tasks = {
      {"t1", TaskKind::regression, 1},  {"t2", TaskKind::binary_classification, 1},
      {"t3", TaskKind::regression, 1},  {"t4", TaskKind::binary_classification, 1},
      {"t5", TaskKind::regression, 1},  {"m1", TaskKind::regression, 1},
      {"m2", TaskKind::binary_classification, 1}, {"m3", TaskKind::regression, 1},
      {"m4", TaskKind::binary_classification, 1},
  };
  cfg.clients = {
      {"st1", {"t1"}, 0, 48, 256, {}}, {"st2", {"t2"}, 0, 48, 256, {}},
      {"st3", {"t3"}, 0, 48, 256, {}}, {"st4", {"t4"}, 0, 48, 256, {}},
      {"st5", {"t5"}, 0, 48, 256, {}}, {"mt1", {"m1", "m2", "m3", "m4"}, 1, 48, 256, {}},
  };
  return cfg;
}

}  // namespace fedhca
