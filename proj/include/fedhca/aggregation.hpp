#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "fedhca/numeric.hpp"
#include "fedhca/param_space.hpp"

namespace fedhca {

// Server-side aggregation schemes: plain averaging, the conflict-averse
// encoder aggregation, layer-wise cross attention for decoders, and the
// learnable per-client hyper aggregation weights.

inline constexpr double kNormGuard = 1e-12;  // denominators below this drop their correction term

struct ConflictAverseConfig {
  double c = 0.4;  // constraint radius fraction, must stay in [0,1)
  int solver_max_iters = 2000;
  double solver_tol = 1e-12;
  double solver_step = 0.5;

  void validate() const {
    if (c < 0.0 || c >= 1.0) throw std::invalid_argument("conflict_averse: c must be in [0,1)");
    if (solver_max_iters < 1) throw std::invalid_argument("conflict_averse: solver_max_iters must be >= 1");
    if (solver_tol < 0.0) throw std::invalid_argument("conflict_averse: solver_tol must be >= 0");
    if (solver_step <= 0.0) throw std::invalid_argument("conflict_averse: solver_step must be > 0");
  }
};

struct SimplexWeights {
  std::vector<double> w;

  void validate() const {
    double sum = 0.0;
    for (double v : w) {
      if (v < -1e-9) throw std::invalid_argument("simplex weights must be nonnegative");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("simplex weights must sum to 1");
  }

  static SimplexWeights uniform(std::size_t n) {
    SimplexWeights s;
    s.w.assign(n, 1.0 / static_cast<double>(n));
    return s;
  }
};

// Euclidean projection onto the probability simplex (sorting algorithm).
inline SimplexWeights project_simplex(std::vector<double> v) {
  const std::size_t n = v.size();
  std::vector<double> u = v;
  std::sort(u.begin(), u.end(), std::greater<double>());
  double css = 0.0;
  double tau = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    css += u[j];
    double t = (css - 1.0) / static_cast<double>(j + 1);
    if (u[j] - t > 0.0) tau = t;
  }
  SimplexWeights out;
  out.w.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.w[i] = std::max(v[i] - tau, 0.0);
  return out;
}

inline FlatVector fedavg(std::span<const FlatVector> updates) {
  if (updates.empty()) throw std::invalid_argument("fedavg: no updates");
  return mean(updates);
}

inline FlatVector fedavg(const std::vector<FlatVector>& updates) {
  return fedavg(std::span<const FlatVector>(updates));
}

// Simplex-weighted combination of client updates: (1/N) * sum_i w_i * u_i,
// reduced in canonical order so client permutations cannot perturb it.
inline FlatVector weighted_combo(const SimplexWeights& weights, std::span<const FlatVector> updates) {
  if (weights.w.size() != updates.size()) {
    throw std::invalid_argument("weighted_combo: weight count does not match update count");
  }
  const double inv_n = 1.0 / static_cast<double>(updates.size());
  FlatVector out = zeros_like(updates[0]);
  std::vector<double> column(updates.size());
  for (std::size_t k = 0; k < out.dim(); ++k) {
    for (std::size_t i = 0; i < updates.size(); ++i) column[i] = weights.w[i] * updates[i].values[k];
    out.values[k] = sorted_sum(column) * inv_n;
  }
  return out;
}

struct ObjectiveValue {
  double value = 0.0;
  FlatVector combo;  // the weighted combination the objective was evaluated at
};

// F(w) = <U_w, mean_update> + sqrt(phi) * ||U_w||  with U_w = (1/N) sum_i w_i u_i.
inline ObjectiveValue objective_F(const SimplexWeights& weights, std::span<const FlatVector> updates,
                                  const FlatVector& mean_update, double phi) {
  if (phi < 0.0) throw std::invalid_argument("objective_F: phi must be >= 0");
  weights.validate();
  ObjectiveValue out;
  out.combo = weighted_combo(weights, updates);
  out.value = inner(out.combo, mean_update) + std::sqrt(phi) * norm(out.combo);
  return out;
}

struct ConflictAverseResult {
  SimplexWeights weights;
  FlatVector unified;      // the aggregated encoder update
  FlatVector mean_update;  // plain average of the inputs
  double phi = 0.0;
  double objective = 0.0;
};

// mean + sqrt(phi)/||combo|| * combo; falls back to the plain mean when the
// correction is disabled (phi = 0) or its denominator degenerates.
inline FlatVector conflict_averse_unified(const FlatVector& mean_update, const FlatVector& combo,
                                          double phi) {
  double combo_norm = norm(combo);
  if (phi <= 0.0 || combo_norm < kNormGuard) return mean_update;
  return add_scaled(mean_update, std::sqrt(phi) / combo_norm, combo);
}

namespace detail {

// Minimizes F in Gram space with fixed-step projected gradient descent. The
// Gram matrix is scaled by its largest diagonal entry first, which makes the
// step size meaningful at any update magnitude and keeps the whole solve
// equivariant under scaling of the inputs.
inline SimplexWeights solve_simplex_gram(const std::vector<std::vector<double>>& gram,
                                         const std::vector<double>& lin, double phi_scaled,
                                         const ConflictAverseConfig& cfg) {
  const std::size_t n = lin.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  const double sqrt_phi = std::sqrt(phi_scaled);
  SimplexWeights w = SimplexWeights::uniform(n);

  std::vector<double> terms(n);
  auto mat_vec = [&](const std::vector<double>& x, std::vector<double>& out) {
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) terms[j] = gram[i][j] * x[j];
      out[i] = sorted_sum(terms);
    }
  };

  std::vector<double> mw, step_arg(n);
  for (int iter = 0; iter < cfg.solver_max_iters; ++iter) {
    mat_vec(w.w, mw);
    for (std::size_t i = 0; i < n; ++i) terms[i] = w.w[i] * mw[i];
    double quad = sorted_sum(terms);
    double norm_uw = quad > 0.0 ? std::sqrt(quad) : 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double g = lin[i] * inv_n;
      if (norm_uw > kNormGuard) g += sqrt_phi * inv_n * mw[i] / norm_uw;
      step_arg[i] = w.w[i] - cfg.solver_step * g;
    }
    SimplexWeights next = project_simplex(step_arg);
    for (std::size_t i = 0; i < n; ++i) terms[i] = (next.w[i] - w.w[i]) * (next.w[i] - w.w[i]);
    double move = std::sqrt(sorted_sum(terms));
    w = std::move(next);
    if (move < cfg.solver_tol) break;
  }
  return w;
}

}  // namespace detail

// Conflict-averse aggregated encoder update: pulls the mean update toward the
// simplex-weighted combination that minimizes F, then applies the correction
// U_w / ||U_w|| * sqrt(phi) so the result stays within radius c*||mean|| of
// the mean.
inline ConflictAverseResult solve_conflict_averse(std::span<const FlatVector> updates,
                                                  const ConflictAverseConfig& cfg) {
  cfg.validate();
  if (updates.empty()) throw std::invalid_argument("solve_conflict_averse: no updates");
  const std::size_t n = updates.size();

  ConflictAverseResult res;
  res.mean_update = mean(updates);
  res.weights = SimplexWeights::uniform(n);

  // Gram matrix of the raw updates; everything else derives from it.
  std::vector<std::vector<double>> gram(n, std::vector<double>(n, 0.0));
  double max_diag = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      double v = inner(updates[i], updates[j]);
      gram[i][j] = v;
      gram[j][i] = v;
    }
    max_diag = std::max(max_diag, gram[i][i]);
  }

  if (max_diag <= 0.0) {
    // all-zero updates: degenerate round, keep the zero update and uniform weights
    res.unified = zeros_like(updates[0]);
    res.phi = 0.0;
    res.objective = 0.0;
    return res;
  }

  double mean_norm_sq = inner(res.mean_update, res.mean_update);
  res.phi = cfg.c * cfg.c * mean_norm_sq;

  if (res.phi <= 0.0) {
    // c = 0 kills the correction term outright
    res.unified = res.mean_update;
    res.objective = objective_F(res.weights, updates, res.mean_update, 0.0).value;
    return res;
  }

  std::vector<double> lin(n);
  std::vector<double> row(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t j = 0; j < n; ++j) row[j] = gram[i][j] * inv_n;
    lin[i] = sorted_sum(row);  // <u_i, mean>
  }

  // scale-normalized copy for the solver
  std::vector<std::vector<double>> gram_scaled(n, std::vector<double>(n));
  std::vector<double> lin_scaled(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) gram_scaled[i][j] = gram[i][j] / max_diag;
    lin_scaled[i] = lin[i] / max_diag;
  }
  res.weights = detail::solve_simplex_gram(gram_scaled, lin_scaled, res.phi / max_diag, cfg);

  FlatVector combo = weighted_combo(res.weights, updates);
  res.unified = conflict_averse_unified(res.mean_update, combo, res.phi);
  res.objective = inner(combo, res.mean_update) + std::sqrt(res.phi) * norm(combo);
  return res;
}

inline ConflictAverseResult solve_conflict_averse(const std::vector<FlatVector>& updates,
                                                  const ConflictAverseConfig& cfg) {
  return solve_conflict_averse(std::span<const FlatVector>(updates), cfg);
}

struct AttentionOutput {
  std::vector<double> weights;  // softmax row for the target, nonnegative, sums to 1
  std::vector<double> value;    // aggregated update for the target
};

// Scaled dot-product cross attention over K layer updates for one target:
// scores s_j = <u_target, u_j> / sqrt(d), softmax with max subtraction, output
// sum_j softmax(s)_j u_j. Reductions are order-canonical so permuting the
// sources never changes a target's output.
inline AttentionOutput cross_attention_layer(const std::vector<std::vector<double>>& updates,
                                             std::size_t target) {
  if (updates.empty()) throw std::invalid_argument("cross_attention_layer: no updates");
  if (target >= updates.size()) throw std::invalid_argument("cross_attention_layer: target out of range");
  const std::size_t k = updates.size();
  const std::size_t d = updates[0].size();
  for (const auto& u : updates) {
    if (u.size() != d) throw std::invalid_argument("cross_attention_layer: ragged layer updates");
  }
  const double scale = d > 0 ? 1.0 / std::sqrt(static_cast<double>(d)) : 0.0;

  std::vector<double> scores(k, 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    double acc = 0.0;
    for (std::size_t idx = 0; idx < d; ++idx) acc += updates[target][idx] * updates[j][idx];
    scores[j] = acc * scale;
  }
  double max_s = *std::max_element(scores.begin(), scores.end());

  AttentionOutput out;
  out.weights.resize(k);
  for (std::size_t j = 0; j < k; ++j) out.weights[j] = std::exp(scores[j] - max_s);
  double z = sorted_sum(out.weights);
  for (auto& wj : out.weights) wj /= z;

  out.value.resize(d);
  std::vector<double> column(k);
  for (std::size_t idx = 0; idx < d; ++idx) {
    for (std::size_t j = 0; j < k; ++j) column[j] = out.weights[j] * updates[j][idx];
    out.value[idx] = sorted_sum(column);
  }
  require_finite(out.value, "cross_attention_layer");
  return out;
}

// One decoder per (client, task); all decoders share the decoder schema.
using DecoderKey = std::pair<std::string, std::string>;

// Layer-wise cross attention across all K decoders: layer l of every decoder
// update attends over layer l of all the others; outputs are reassembled into
// per-decoder trees.
inline std::map<DecoderKey, ParamTree> aggregate_decoders(
    const std::map<DecoderKey, ParamTree>& decoder_updates) {
  if (decoder_updates.empty()) throw std::invalid_argument("aggregate_decoders: no decoders");
  const ParamTree& first = decoder_updates.begin()->second;
  for (const auto& [key, tree] : decoder_updates) {
    require_same_structure(first, tree, "aggregate_decoders");
  }
  const std::size_t n_layers = first.layers.size();
  std::vector<const ParamTree*> trees;
  trees.reserve(decoder_updates.size());
  for (const auto& [key, tree] : decoder_updates) trees.push_back(&tree);

  std::map<DecoderKey, ParamTree> out;
  std::size_t idx = 0;
  for (const auto& [key, tree] : decoder_updates) out.emplace(key, tree_zeros_like(tree));

  for (std::size_t l = 0; l < n_layers; ++l) {
    std::vector<std::vector<double>> layer_updates;
    layer_updates.reserve(trees.size());
    for (const ParamTree* t : trees) layer_updates.push_back(t->layers[l].data);
    idx = 0;
    for (auto& [key, tree] : out) {
      tree.layers[l].data = cross_attention_layer(layer_updates, idx).value;
      ++idx;
    }
  }
  return out;
}

// theta_prev + delta + psi * theta_tilde. The hyper term is skipped entirely
// when psi == 0 so a zero weight reproduces local training bit for bit.
inline ParamTree apply_personalized_update(const ParamTree& theta_prev, const ParamTree& delta,
                                           double psi, const ParamTree* theta_tilde) {
  ParamTree out = tree_add_scaled(theta_prev, 1.0, delta);
  if (psi != 0.0 && theta_tilde != nullptr) out = tree_add_scaled(out, psi, *theta_tilde);
  return out;
}

// Per-layer psi variant used for decoders.
inline ParamTree apply_personalized_update(const ParamTree& theta_prev, const ParamTree& delta,
                                           const std::map<std::string, double>& psi_by_layer,
                                           const ParamTree* theta_tilde) {
  ParamTree out = tree_add_scaled(theta_prev, 1.0, delta);
  if (theta_tilde == nullptr) return out;
  require_same_structure(out, *theta_tilde, "apply_personalized_update");
  for (std::size_t l = 0; l < out.layers.size(); ++l) {
    auto it = psi_by_layer.find(out.layers[l].id);
    double psi = it == psi_by_layer.end() ? 0.0 : it->second;
    if (psi == 0.0) continue;
    auto& dst = out.layers[l].data;
    const auto& src = theta_tilde->layers[l].data;
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += psi * src[i];
    require_finite(dst, "apply_personalized_update");
  }
  return out;
}

// Raw hyper-weight gradient signal: the inner product of the aggregated
// update with the client's own update.
inline double hyper_weight_delta(const FlatVector& theta_tilde, const FlatVector& delta_theta) {
  return inner(theta_tilde, delta_theta);
}

inline double hyper_weight_delta(std::span<const double> theta_tilde, std::span<const double> delta_theta) {
  if (theta_tilde.size() != delta_theta.size()) {
    throw std::invalid_argument("hyper_weight_delta: dimension mismatch");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < theta_tilde.size(); ++i) acc += theta_tilde[i] * delta_theta[i];
  if (!std::isfinite(acc)) throw std::runtime_error("hyper_weight_delta: non-finite result");
  return acc;
}

struct HyperWeightConfig {
  double lr = 0.1;
  double clamp_lo = 0.0;
  double clamp_hi = 1.0;

  void validate() const {
    if (lr < 0.0) throw std::invalid_argument("hyper: lr must be >= 0");
    if (clamp_lo > clamp_hi) throw std::invalid_argument("hyper: clamp range is empty");
  }
};

// Learnable per-client aggregation weights: one alpha per client encoder and
// one beta per (client, task, decoder layer). Updates are ascent steps on the
// cosine-normalized inner product of the aggregated update with the client's
// own update, clamped to the configured range.
class HyperWeights {
 public:
  HyperWeights() = default;
  explicit HyperWeights(HyperWeightConfig cfg) : cfg_(cfg) { cfg_.validate(); }

  const HyperWeightConfig& config() const { return cfg_; }

  double alpha(const std::string& client) const {
    auto it = alpha_.find(client);
    return it == alpha_.end() ? 0.0 : it->second;
  }
  double beta(const std::string& client, const std::string& task, const std::string& layer) const {
    auto it = beta_.find(std::make_tuple(client, task, layer));
    return it == beta_.end() ? 0.0 : it->second;
  }
  void set_alpha(const std::string& client, double v) { alpha_[client] = checked(v); }
  void set_beta(const std::string& client, const std::string& task, const std::string& layer, double v) {
    beta_[std::make_tuple(client, task, layer)] = checked(v);
  }

  void update_alpha(const std::string& client, const FlatVector& unified, const FlatVector& enc_delta) {
    alpha_[client] = stepped(alpha(client), hyper_weight_delta(unified, enc_delta),
                             norm(unified) * norm(enc_delta));
  }
  void update_beta(const std::string& client, const std::string& task, const std::string& layer,
                   std::span<const double> aggregated, std::span<const double> delta) {
    double raw = hyper_weight_delta(aggregated, delta);
    double na = std::sqrt(hyper_weight_delta(aggregated, aggregated));
    double nd = std::sqrt(hyper_weight_delta(delta, delta));
    auto key = std::make_tuple(client, task, layer);
    double cur = beta(client, task, layer);
    beta_[key] = stepped(cur, raw, na * nd);
  }

  const std::map<std::string, double>& all_alpha() const { return alpha_; }
  const std::map<std::tuple<std::string, std::string, std::string>, double>& all_beta() const {
    return beta_;
  }

 private:
  double stepped(double cur, double raw_delta, double norm_product) const {
    double normalized = raw_delta / (norm_product + kNormGuard);
    return clamp(cur + cfg_.lr * normalized, cfg_.clamp_lo, cfg_.clamp_hi);
  }
  double checked(double v) const {
    if (v < cfg_.clamp_lo || v > cfg_.clamp_hi) {
      throw std::invalid_argument("hyper weight outside clamp range");
    }
    return v;
  }

  HyperWeightConfig cfg_;
  std::map<std::string, double> alpha_;
  std::map<std::tuple<std::string, std::string, std::string>, double> beta_;
};

}  // namespace fedhca
