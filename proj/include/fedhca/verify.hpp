#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fedhca/aggregation.hpp"
#include "fedhca/federation.hpp"
#include "fedhca/reference_scores.hpp"
#include "fedhca/synth_data.hpp"
#include "fedhca/toy_models.hpp"

namespace fedhca {

// Self-check suites runnable from the CLI. Each suite pits a production path
// against an independent oracle: analytic gradients against central finite
// differences, the simplex solver against a dense grid search, cross attention
// against a naive double loop, the one-step aggregation identity against a
// shared multi-decoder reference model, and the bundled benchmark tables
// against their published summary column.

struct SuiteResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

namespace oracle {

enum class ModelPart { encoder, decoder, head };

// Central finite differences of the summed per-task loss w.r.t. one parameter.
inline double fd_loss_derivative(ClientModel model, const Batch& batch, ModelPart part,
                                 const std::string& task, std::size_t layer, std::size_t index,
                                 double h) {
  auto& tree = part == ModelPart::encoder
                   ? model.encoder
                   : (part == ModelPart::decoder ? model.decoders.at(task) : model.heads.at(task));
  double saved = tree.layers[layer].data[index];
  tree.layers[layer].data[index] = saved + h;
  double up = loss_and_grad(model, batch, model.tasks).total_loss;
  tree.layers[layer].data[index] = saved - h;
  double down = loss_and_grad(model, batch, model.tasks).total_loss;
  tree.layers[layer].data[index] = saved;
  return (up - down) / (2.0 * h);
}

// F(w) evaluated with plain loops, independent of the solver's Gram machinery.
inline double naive_objective(const std::vector<double>& w, const std::vector<std::vector<double>>& updates,
                              double phi) {
  const std::size_t n = updates.size();
  const std::size_t d = updates[0].size();
  std::vector<double> combo(d, 0.0);
  std::vector<double> mean_u(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) {
      combo[k] += w[i] * updates[i][k] / static_cast<double>(n);
      mean_u[k] += updates[i][k] / static_cast<double>(n);
    }
  }
  double dot = 0.0, nrm = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    dot += combo[k] * mean_u[k];
    nrm += combo[k] * combo[k];
  }
  return dot + std::sqrt(phi) * std::sqrt(nrm);
}

// Best objective value over the probability simplex sampled at `steps`
// subdivisions (1e-3 resolution at steps = 1000). Supports N in {2,3}.
inline double grid_min_objective(const std::vector<std::vector<double>>& updates, double phi, int steps) {
  const std::size_t n = updates.size();
  double best = std::numeric_limits<double>::infinity();
  std::vector<double> w(n, 0.0);
  if (n == 2) {
    for (int i = 0; i <= steps; ++i) {
      w[0] = static_cast<double>(i) / steps;
      w[1] = 1.0 - w[0];
      best = std::min(best, naive_objective(w, updates, phi));
    }
  } else if (n == 3) {
    for (int i = 0; i <= steps; ++i) {
      for (int j = 0; j <= steps - i; ++j) {
        w[0] = static_cast<double>(i) / steps;
        w[1] = static_cast<double>(j) / steps;
        w[2] = 1.0 - w[0] - w[1];
        best = std::min(best, naive_objective(w, updates, phi));
      }
    }
  } else {
    throw std::invalid_argument("grid_min_objective: only N in {2,3}");
  }
  return best;
}

// Plain double-loop scaled dot-product attention, no shared code with the
// production implementation.
inline std::vector<double> naive_attention(const std::vector<std::vector<double>>& updates,
                                           std::size_t target) {
  const std::size_t k = updates.size();
  const std::size_t d = updates[0].size();
  std::vector<double> scores(k, 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t idx = 0; idx < d; ++idx) scores[j] += updates[target][idx] * updates[j][idx];
    scores[j] /= std::sqrt(static_cast<double>(d));
  }
  double z = 0.0;
  std::vector<double> e(k);
  for (std::size_t j = 0; j < k; ++j) {
    e[j] = std::exp(scores[j]);
    z += e[j];
  }
  std::vector<double> out(d, 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t idx = 0; idx < d; ++idx) out[idx] += e[j] / z * updates[j][idx];
  }
  return out;
}

}  // namespace oracle

namespace detail {

inline bool close_rel(double a, double b, double rel, double abs_floor) {
  return std::abs(a - b) <= rel * std::max(std::abs(a), std::abs(b)) + abs_floor;
}

inline ArchSpec random_small_arch(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> dim(2, 5);
  ArchSpec arch;
  arch.input_dim = dim(rng);
  arch.encoder_widths = {dim(rng), dim(rng)};
  arch.decoder_widths = {dim(rng)};
  return arch;
}

inline Batch random_batch(const ArchSpec& arch, const std::vector<TaskSpec>& tasks, std::size_t n,
                          std::mt19937_64& rng) {
  std::normal_distribution<double> unit(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  Batch batch;
  batch.size = n;
  batch.features.resize(n * arch.input_dim);
  for (auto& v : batch.features) v = unit(rng);
  for (const auto& t : tasks) {
    TaskLabels labels;
    labels.dim = static_cast<std::size_t>(ArchSpec::head_dim(t));
    labels.values.resize(n * labels.dim);
    for (auto& v : labels.values) {
      v = t.kind == TaskKind::regression ? unit(rng) : (coin(rng) ? 1.0 : 0.0);
    }
    batch.labels.emplace(t.id, std::move(labels));
  }
  return batch;
}

}  // namespace detail

// Analytic model gradients vs central finite differences (h = 1e-5), checked
// on every coordinate of every part, across random (arch, batch) instances.
inline SuiteResult verify_gradients(int instances = 20, std::uint64_t seed = 20240501) {
  auto rng = make_rng(seed, "verify/grad");
  const double h = 1e-5;
  double worst = 0.0;
  std::size_t checked = 0;
  for (int inst = 0; inst < instances; ++inst) {
    ArchSpec arch = detail::random_small_arch(rng);
    std::vector<TaskSpec> tasks = {{"r", TaskKind::regression, 2},
                                   {"c", TaskKind::binary_classification, 1}};
    if (inst % 3 == 1) tasks = {{"r", TaskKind::regression, 1}};
    if (inst % 3 == 2) tasks = {{"c", TaskKind::binary_classification, 1}};
    ClientModel model = init_model(arch, tasks, rng());
    Batch batch = detail::random_batch(arch, model.tasks, 8, rng);
    LossAndGrad lg = loss_and_grad(model, batch, model.tasks);

    auto check_tree = [&](oracle::ModelPart part, const std::string& task, const ParamTree& grad) {
      for (std::size_t l = 0; l < grad.layers.size(); ++l) {
        for (std::size_t i = 0; i < grad.layers[l].data.size(); ++i) {
          double fd = oracle::fd_loss_derivative(model, batch, part, task, l, i, h);
          double analytic = grad.layers[l].data[i];
          double err = std::abs(analytic - fd) / (std::max(std::abs(analytic), std::abs(fd)) + 1e-8);
          worst = std::max(worst, err);
          ++checked;
          if (!detail::close_rel(analytic, fd, 1e-5, 1e-8)) return false;
        }
      }
      return true;
    };

    if (!check_tree(oracle::ModelPart::encoder, "", lg.grad.encoder)) {
      return {"grad", false, "encoder gradient mismatch on instance " + std::to_string(inst)};
    }
    for (const auto& [task, g] : lg.grad.decoders) {
      if (!check_tree(oracle::ModelPart::decoder, task, g)) {
        return {"grad", false, "decoder gradient mismatch on instance " + std::to_string(inst)};
      }
    }
    for (const auto& [task, g] : lg.grad.heads) {
      if (!check_tree(oracle::ModelPart::head, task, g)) {
        return {"grad", false, "head gradient mismatch on instance " + std::to_string(inst)};
      }
    }
  }
  std::ostringstream os;
  os << instances << " instances, " << checked << " coordinates, worst relative error " << worst;
  return {"grad", true, os.str()};
}

// With identical encoder init, one full-batch plain-SGD step per client, the
// average of the client encoder deltas must equal 1/N times the shared
// multi-decoder reference update on the same batch.
inline SuiteResult verify_one_step_equivalence(std::uint64_t seed = 20240502) {
  const double lr = 0.05;
  double worst = 0.0;
  for (int n : {2, 3, 5}) {
    ScenarioConfig scen;
    scen.input_dim = 4;
    scen.latent_dim = 2;
    scen.domain_shift = 0.5;
    scen.noise_std = 0.05;
    scen.seed = seed + n;
    ClientSpec spec;
    spec.id = "all";
    spec.domain_id = 0;
    spec.n_train = 16;
    spec.n_test = 4;
    for (int t = 0; t < n; ++t) {
      TaskKind kind = t % 2 == 0 ? TaskKind::regression : TaskKind::binary_classification;
      scen.tasks.push_back({"task" + std::to_string(t), kind, 1});
      spec.task_ids.push_back("task" + std::to_string(t));
    }
    scen.clients = {spec};
    auto data = make_scenario(scen);
    const Batch& batch = data[0].train;

    ArchSpec arch;
    arch.input_dim = scen.input_dim;
    arch.encoder_widths = {5, 3};
    arch.decoder_widths = {3};
    ClientModel shared = init_model(arch, scen.tasks, seed);

    ParamTree mtl_update = mtl_reference_step(shared, batch, lr);

    std::vector<FlatVector> deltas;
    SchemaPtr enc_schema = make_schema(shared.encoder);
    for (const auto& t : shared.tasks) {
      ClientModel client;
      client.arch = arch;
      client.tasks = {t};
      client.encoder = shared.encoder;
      client.decoders.emplace(t.id, shared.decoders.at(t.id));
      client.heads.emplace(t.id, shared.heads.at(t.id));
      auto lg = loss_and_grad(client, batch, client.tasks);
      ClientModel stepped = sgd_step(client, lg.grad, lr);
      deltas.push_back(flatten(tree_sub(stepped.encoder, client.encoder), enc_schema));
    }
    FlatVector avg = fedavg(deltas);
    FlatVector reference = flatten(tree_scale(mtl_update, 1.0 / static_cast<double>(n)), enc_schema);
    for (std::size_t i = 0; i < avg.dim(); ++i) {
      worst = std::max(worst, std::abs(avg.values[i] - reference.values[i]));
    }
    if (worst > 1e-12) {
      return {"one_step", false,
              "N=" + std::to_string(n) + ": max-abs deviation " + std::to_string(worst)};
    }
  }
  std::ostringstream os;
  os << "N in {2,3,5}, max-abs deviation " << worst;
  return {"one_step", true, os.str()};
}

using ConflictSolver =
    std::function<ConflictAverseResult(const std::vector<FlatVector>&, const ConflictAverseConfig&)>;

inline ConflictSolver default_conflict_solver() {
  return [](const std::vector<FlatVector>& updates, const ConflictAverseConfig& cfg) {
    return solve_conflict_averse(updates, cfg);
  };
}

// Random instances against a 1e-3 simplex grid, plus the constraint bound and
// the two closed-form cases (c = 0 and identical updates).
inline SuiteResult verify_conflict_averse_solver(const ConflictSolver& solver = default_conflict_solver(),
                                                 int instances = 100, std::uint64_t seed = 20240503) {
  auto rng = make_rng(seed, "verify/solver");
  std::normal_distribution<double> unit(0.0, 1.0);
  const double c_values[3] = {0.2, 0.4, 0.8};
  double worst_gap = -std::numeric_limits<double>::infinity();
  for (int inst = 0; inst < instances; ++inst) {
    std::size_t n = inst % 2 == 0 ? 2 : 3;
    std::uniform_int_distribution<std::size_t> dim_dist(2, 10);
    std::size_t d = dim_dist(rng);
    std::vector<std::vector<double>> raw(n, std::vector<double>(d));
    std::vector<FlatVector> updates(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (auto& v : raw[i]) v = unit(rng);
      updates[i].values = raw[i];
    }
    ConflictAverseConfig cfg;
    cfg.c = c_values[inst % 3];

    ConflictAverseResult res = solver(updates, cfg);
    res.weights.validate();

    double f_solver = oracle::naive_objective(res.weights.w, raw, res.phi);
    double f_grid = oracle::grid_min_objective(raw, res.phi, 1000);
    worst_gap = std::max(worst_gap, f_solver - f_grid);
    if (f_solver > f_grid + 1e-4) {
      return {"solver", false,
              "instance " + std::to_string(inst) + ": F(solver) exceeds grid minimum by " +
                  std::to_string(f_solver - f_grid)};
    }

    double dev = norm(add_scaled(res.unified, -1.0, res.mean_update));
    double bound = cfg.c * norm(res.mean_update) * (1.0 + 1e-9);
    if (dev > bound) {
      return {"solver", false, "instance " + std::to_string(inst) + ": constraint violated"};
    }
  }

  // c = 0 returns the mean exactly
  {
    std::vector<FlatVector> updates(3);
    for (auto& u : updates) {
      u.values.resize(6);
      for (auto& v : u.values) v = unit(rng);
    }
    ConflictAverseConfig cfg;
    cfg.c = 0.0;
    ConflictAverseResult res = solver(updates, cfg);
    FlatVector m = mean(updates);
    if (res.unified.values != m.values) {
      return {"solver", false, "c=0 did not return the mean update exactly"};
    }
  }

  // identical updates return (1+c) * g
  {
    FlatVector g;
    g.values.resize(5);
    for (auto& v : g.values) v = unit(rng);
    std::vector<FlatVector> updates(4, g);
    ConflictAverseConfig cfg;
    cfg.c = 0.5;
    ConflictAverseResult res = solver(updates, cfg);
    for (std::size_t i = 0; i < g.dim(); ++i) {
      if (std::abs(res.unified.values[i] - 1.5 * g.values[i]) > 1e-12) {
        return {"solver", false, "identical updates did not aggregate to (1+c)*g"};
      }
    }
  }

  std::ostringstream os;
  os << instances << " instances, worst F gap vs grid " << worst_gap;
  return {"solver", true, os.str()};
}

// Cross attention vs the naive double loop, softmax row properties, the K=1
// identity, and bit-exact permutation equivariance.
inline SuiteResult verify_cross_attention(int instances = 100, std::uint64_t seed = 20240504) {
  auto rng = make_rng(seed, "verify/attention");
  std::normal_distribution<double> unit(0.0, 1.0);
  const std::size_t k_values[4] = {1, 2, 3, 8};
  const std::size_t d_values[3] = {1, 5, 64};
  double worst = 0.0;
  for (int inst = 0; inst < instances; ++inst) {
    std::size_t k = k_values[inst % 4];
    std::size_t d = d_values[(inst / 4) % 3];
    std::vector<std::vector<double>> updates(k, std::vector<double>(d));
    for (auto& u : updates) {
      for (auto& v : u) v = unit(rng);
    }
    for (std::size_t target = 0; target < k; ++target) {
      AttentionOutput out = cross_attention_layer(updates, target);

      double sum_w = 0.0;
      for (double w : out.weights) {
        if (w < 0.0) return {"attention", false, "negative attention weight"};
        sum_w += w;
      }
      if (std::abs(sum_w - 1.0) > 1e-12) {
        return {"attention", false, "attention weights do not sum to 1"};
      }

      auto naive = oracle::naive_attention(updates, target);
      for (std::size_t idx = 0; idx < d; ++idx) {
        worst = std::max(worst, std::abs(out.value[idx] - naive[idx]));
        if (std::abs(out.value[idx] - naive[idx]) > 1e-12) {
          return {"attention", false, "output deviates from the naive double-loop oracle"};
        }
      }
      if (k == 1 && out.value != updates[0]) {
        return {"attention", false, "K=1 is not the identity"};
      }
    }

    // permutation equivariance, bit for bit
    if (k > 1) {
      std::vector<std::size_t> perm(k);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      std::shuffle(perm.begin(), perm.end(), rng);
      std::vector<std::vector<double>> permuted(k);
      for (std::size_t j = 0; j < k; ++j) permuted[j] = updates[perm[j]];
      for (std::size_t j = 0; j < k; ++j) {
        AttentionOutput a = cross_attention_layer(updates, perm[j]);
        AttentionOutput b = cross_attention_layer(permuted, j);
        if (a.value != b.value) {
          return {"attention", false, "permutation equivariance violated"};
        }
      }
    }
  }
  std::ostringstream os;
  os << instances << " instances, worst |production - oracle| " << worst;
  return {"attention", true, os.str()};
}

// d/dpsi of a quadratic loss along theta(psi) = theta0 + delta + psi*tilde,
// finite differences vs the inner-product rule.
inline SuiteResult verify_hyper_chain_rule(int instances = 50, std::uint64_t seed = 20240505) {
  auto rng = make_rng(seed, "verify/hyper");
  std::normal_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> curvature(0.1, 2.0);
  std::uniform_real_distribution<double> psi_dist(0.0, 1.0);
  double worst = 0.0;
  for (int inst = 0; inst < instances; ++inst) {
    std::uniform_int_distribution<std::size_t> dim_dist(1, 10);
    std::size_t d = dim_dist(rng);
    std::vector<double> theta0(d), delta(d), tilde(d), target(d), a(d);
    for (std::size_t i = 0; i < d; ++i) {
      theta0[i] = unit(rng);
      delta[i] = unit(rng);
      tilde[i] = unit(rng);
      target[i] = unit(rng);
      a[i] = curvature(rng);
    }
    double psi = psi_dist(rng);

    auto loss = [&](double p) {
      double acc = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        double th = theta0[i] + delta[i] + p * tilde[i];
        acc += 0.5 * a[i] * (th - target[i]) * (th - target[i]);
      }
      return acc;
    };

    FlatVector tilde_v, grad_v;
    tilde_v.values = tilde;
    grad_v.values.resize(d);
    for (std::size_t i = 0; i < d; ++i) {
      double th = theta0[i] + delta[i] + psi * tilde[i];
      grad_v.values[i] = a[i] * (th - target[i]);
    }
    double analytic = hyper_weight_delta(tilde_v, grad_v);

    const double h = 1e-4;
    double fd = (loss(psi + h) - loss(psi - h)) / (2.0 * h);
    double err = std::abs(analytic - fd) / (std::max(std::abs(analytic), std::abs(fd)) + 1e-12);
    worst = std::max(worst, err);
    if (!detail::close_rel(analytic, fd, 1e-6, 1e-12)) {
      return {"hyper", false, "chain-rule mismatch on instance " + std::to_string(inst)};
    }
  }
  std::ostringstream os;
  os << instances << " instances, worst relative error " << worst;
  return {"hyper", true, os.str()};
}

// Recomputes the summary column of both bundled benchmark tables from their
// per-task metrics; each row must land within the +-0.01 printing tolerance.
inline SuiteResult verify_reference_delta_m() {
  double worst = 0.0;
  for (const ReferenceTable* table : {&reference_benchmark_a(), &reference_benchmark_b()}) {
    for (const auto& row : table->rows) {
      double recomputed = reference_delta_m(*table, row.method);
      double diff = std::abs(recomputed - row.published_delta_m);
      worst = std::max(worst, diff);
      if (diff > 0.01) {
        std::ostringstream os;
        os << table->name << "/" << row.method << ": recomputed " << recomputed << " vs published "
           << row.published_delta_m;
        return {"delta_m", false, os.str()};
      }
    }
  }
  std::ostringstream os;
  os << "both tables, worst |recomputed - published| " << worst;
  return {"delta_m", true, os.str()};
}

inline std::vector<SuiteResult> run_verification(const std::vector<std::string>& only = {}) {
  auto wanted = [&](const std::string& name) {
    if (only.empty()) return true;
    for (const auto& n : only) {
      if (n == name) return true;
    }
    return false;
  };
  std::vector<SuiteResult> results;
  if (wanted("grad")) results.push_back(verify_gradients());
  if (wanted("one_step")) results.push_back(verify_one_step_equivalence());
  if (wanted("solver")) results.push_back(verify_conflict_averse_solver());
  if (wanted("attention")) results.push_back(verify_cross_attention());
  if (wanted("hyper")) results.push_back(verify_hyper_chain_rule());
  if (wanted("delta_m")) results.push_back(verify_reference_delta_m());
  return results;
}

}  // namespace fedhca
