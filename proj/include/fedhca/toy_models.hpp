#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedhca/param_space.hpp"
#include "fedhca/rng.hpp"
#include "fedhca/task.hpp"

namespace fedhca {

// Minimal encoder-decoder multi-task networks: tanh MLP encoder shared by all
// tasks, one tanh MLP decoder per task (identical template across tasks and
// clients), one linear head per task. Heads are the only part whose shape may
// differ between tasks and they are never aggregated.

struct ArchSpec {
  int input_dim = 8;
  std::vector<int> encoder_widths = {16, 8};
  std::vector<int> decoder_widths = {8};

  int encoder_output_dim() const { return encoder_widths.back(); }
  int decoder_output_dim() const { return decoder_widths.back(); }

  void validate() const {
    if (input_dim < 1) throw std::invalid_argument("arch: input_dim must be >= 1");
    if (encoder_widths.empty() || decoder_widths.empty()) {
      throw std::invalid_argument("arch: encoder and decoder need at least one layer");
    }
    for (int w : encoder_widths) {
      if (w < 1) throw std::invalid_argument("arch: zero-width encoder layer");
    }
    for (int w : decoder_widths) {
      if (w < 1) throw std::invalid_argument("arch: zero-width decoder layer");
    }
  }

  static int head_dim(const TaskSpec& t) {
    return t.kind == TaskKind::binary_classification ? 1 : t.output_dim;
  }
  bool operator==(const ArchSpec&) const = default;
};

struct ClientModel {
  ArchSpec arch;
  std::vector<TaskSpec> tasks;  // sorted by task id
  ParamTree encoder;
  std::map<std::string, ParamTree> decoders;
  std::map<std::string, ParamTree> heads;

  const TaskSpec& task(const std::string& id) const {
    for (const auto& t : tasks) {
      if (t.id == id) return t;
    }
    throw std::invalid_argument("model has no task '" + id + "'");
  }
};

struct ModelGrad {
  ParamTree encoder;
  std::map<std::string, ParamTree> decoders;
  std::map<std::string, ParamTree> heads;
};

struct LossAndGrad {
  std::map<std::string, double> task_loss;
  double total_loss = 0.0;
  ModelGrad grad;
};

namespace detail {

// One fully connected stack: layer k maps widths[k] -> widths[k+1] with
// parameters "<prefix><k>.weight" ([out,in], row-major) and "<prefix><k>.bias".
inline ParamTree make_mlp_tree(const std::string& prefix, int in_dim, const std::vector<int>& widths) {
  ParamTree tree;
  int prev = in_dim;
  for (std::size_t k = 0; k < widths.size(); ++k) {
    int out = widths[k];
    ParamLayer w;
    w.id = prefix + std::to_string(k) + ".weight";
    w.shape = {static_cast<std::size_t>(out), static_cast<std::size_t>(prev)};
    w.data.assign(static_cast<std::size_t>(out) * prev, 0.0);
    tree.layers.push_back(std::move(w));
    ParamLayer b;
    b.id = prefix + std::to_string(k) + ".bias";
    b.shape = {static_cast<std::size_t>(out)};
    b.data.assign(static_cast<std::size_t>(out), 0.0);
    tree.layers.push_back(std::move(b));
    prev = out;
  }
  return tree;
}

inline ParamTree make_head_tree(int in_dim, int out_dim) {
  ParamTree tree;
  ParamLayer w;
  w.id = "head.weight";
  w.shape = {static_cast<std::size_t>(out_dim), static_cast<std::size_t>(in_dim)};
  w.data.assign(static_cast<std::size_t>(out_dim) * in_dim, 0.0);
  tree.layers.push_back(std::move(w));
  ParamLayer b;
  b.id = "head.bias";
  b.shape = {static_cast<std::size_t>(out_dim)};
  b.data.assign(static_cast<std::size_t>(out_dim), 0.0);
  tree.layers.push_back(std::move(b));
  return tree;
}

inline void fill_uniform_fan_in(ParamTree& tree, std::mt19937_64& rng) {
  for (auto& layer : tree.layers) {
    if (layer.shape.size() == 2) {
      double s = 1.0 / std::sqrt(static_cast<double>(layer.shape[1]));
      std::uniform_real_distribution<double> dist(-s, s);
      for (auto& v : layer.data) v = dist(rng);
    }
    // biases stay zero
  }
}

// y[n,out] = W x[n] + b
inline void linear_forward(const ParamLayer& w, const ParamLayer& b, const std::vector<double>& in,
                           std::size_t n, std::size_t n_in, std::size_t n_out, std::vector<double>& out) {
  out.assign(n * n_out, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    const double* x = in.data() + r * n_in;
    double* y = out.data() + r * n_out;
    for (std::size_t o = 0; o < n_out; ++o) {
      double acc = b.data[o];
      const double* wrow = w.data.data() + o * n_in;
      for (std::size_t i = 0; i < n_in; ++i) acc += wrow[i] * x[i];
      y[o] = acc;
    }
  }
}

// Accumulates dW, db and produces the gradient w.r.t. the layer input.
inline void linear_backward(const ParamLayer& w, const std::vector<double>& in,
                            const std::vector<double>& delta_out, std::size_t n, std::size_t n_in,
                            std::size_t n_out, std::vector<double>& grad_w, std::vector<double>& grad_b,
                            std::vector<double>& delta_in) {
  grad_w.assign(n_out * n_in, 0.0);
  grad_b.assign(n_out, 0.0);
  delta_in.assign(n * n_in, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    const double* x = in.data() + r * n_in;
    const double* d = delta_out.data() + r * n_out;
    double* di = delta_in.data() + r * n_in;
    for (std::size_t o = 0; o < n_out; ++o) {
      grad_b[o] += d[o];
      double* gw = grad_w.data() + o * n_in;
      const double* wrow = w.data.data() + o * n_in;
      for (std::size_t i = 0; i < n_in; ++i) {
        gw[i] += d[o] * x[i];
        di[i] += d[o] * wrow[i];
      }
    }
  }
}

struct MlpCache {
  // acts[0] is the input batch; acts[k+1] the post-tanh output of layer k.
  std::vector<std::vector<double>> acts;
  std::vector<std::size_t> widths;  // widths[0] = in_dim
};

inline MlpCache mlp_forward(const ParamTree& tree, int in_dim, const std::vector<int>& layer_widths,
                            const std::vector<double>& input, std::size_t n) {
  MlpCache cache;
  cache.widths.push_back(static_cast<std::size_t>(in_dim));
  cache.acts.push_back(input);
  std::vector<double> pre;
  for (std::size_t k = 0; k < layer_widths.size(); ++k) {
    const auto& w = tree.layers[2 * k];
    const auto& b = tree.layers[2 * k + 1];
    std::size_t n_in = cache.widths.back();
    std::size_t n_out = static_cast<std::size_t>(layer_widths[k]);
    linear_forward(w, b, cache.acts.back(), n, n_in, n_out, pre);
    for (auto& v : pre) v = std::tanh(v);
    cache.acts.push_back(pre);
    cache.widths.push_back(n_out);
  }
  return cache;
}

// Backprop through the tanh stack; returns the gradient w.r.t. the stack input
// and fills grad (same structure as tree).
inline std::vector<double> mlp_backward(const ParamTree& tree, const MlpCache& cache,
                                        std::vector<double> delta, std::size_t n, ParamTree& grad) {
  const std::size_t n_layers = cache.widths.size() - 1;
  std::vector<double> delta_in;
  for (std::size_t k = n_layers; k-- > 0;) {
    const auto& post = cache.acts[k + 1];
    for (std::size_t idx = 0; idx < delta.size(); ++idx) {
      delta[idx] *= 1.0 - post[idx] * post[idx];  // tanh'
    }
    linear_backward(tree.layers[2 * k], cache.acts[k], delta, n, cache.widths[k], cache.widths[k + 1],
                    grad.layers[2 * k].data, grad.layers[2 * k + 1].data, delta_in);
    delta.swap(delta_in);
  }
  return delta;
}

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(z)), stable for large |z|
inline double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

}  // namespace detail

// Weights ~ uniform(-s, s) with s = 1/sqrt(fan_in), biases zero. Deterministic
// for a fixed seed: encoder first, then decoders and heads in task-id order.
inline ClientModel init_model(const ArchSpec& arch, std::vector<TaskSpec> tasks, std::uint64_t seed) {
  arch.validate();
  if (tasks.empty()) throw std::invalid_argument("init_model: task list is empty");
  std::sort(tasks.begin(), tasks.end(), [](const TaskSpec& a, const TaskSpec& b) { return a.id < b.id; });

  ClientModel model;
  model.arch = arch;
  model.tasks = tasks;
  auto rng = make_rng(seed, "init");

  model.encoder = detail::make_mlp_tree("enc", arch.input_dim, arch.encoder_widths);
  detail::fill_uniform_fan_in(model.encoder, rng);
  for (const auto& t : tasks) {
    ParamTree dec = detail::make_mlp_tree("dec", arch.encoder_output_dim(), arch.decoder_widths);
    detail::fill_uniform_fan_in(dec, rng);
    model.decoders.emplace(t.id, std::move(dec));
    ParamTree head = detail::make_head_tree(arch.decoder_output_dim(), ArchSpec::head_dim(t));
    detail::fill_uniform_fan_in(head, rng);
    model.heads.emplace(t.id, std::move(head));
  }
  return model;
}

// Per-task mean-over-batch losses and analytic gradients. The encoder gradient
// is the sum of the per-task backpropagated contributions, accumulated in
// task-id order.
inline LossAndGrad loss_and_grad(const ClientModel& model, const Batch& batch,
                                 const std::vector<TaskSpec>& tasks) {
  if (batch.size == 0) throw std::invalid_argument("loss_and_grad: empty batch");
  if (batch.features.size() != batch.size * static_cast<std::size_t>(model.arch.input_dim)) {
    throw std::invalid_argument("loss_and_grad: feature width does not match arch input_dim");
  }
  const std::size_t n = batch.size;
  const double inv_n = 1.0 / static_cast<double>(n);

  LossAndGrad out;
  out.grad.encoder = tree_zeros_like(model.encoder);

  auto enc_cache = detail::mlp_forward(model.encoder, model.arch.input_dim, model.arch.encoder_widths,
                                       batch.features, n);
  const auto& z = enc_cache.acts.back();
  const std::size_t enc_out = enc_cache.widths.back();

  // delta at the encoder output, summed over tasks
  std::vector<double> delta_z_total(n * enc_out, 0.0);

  for (const auto& t : tasks) {
    auto lbl_it = batch.labels.find(t.id);
    if (lbl_it == batch.labels.end()) {
      throw std::invalid_argument("loss_and_grad: batch has no labels for task '" + t.id + "'");
    }
    const TaskLabels& labels = lbl_it->second;
    const auto& dec_tree = model.decoders.at(t.id);
    const auto& head_tree = model.heads.at(t.id);

    auto dec_cache = detail::mlp_forward(dec_tree, static_cast<int>(enc_out), model.arch.decoder_widths, z, n);
    const auto& q = dec_cache.acts.back();
    const std::size_t dec_out = dec_cache.widths.back();
    const std::size_t head_out = head_tree.layers[0].shape[0];
    if (labels.dim != head_out) {
      throw std::invalid_argument("loss_and_grad: label dim mismatch for task '" + t.id + "'");
    }

    std::vector<double> pred;
    detail::linear_forward(head_tree.layers[0], head_tree.layers[1], q, n, dec_out, head_out, pred);

    double loss = 0.0;
    std::vector<double> delta_pred(n * head_out, 0.0);
    if (t.kind == TaskKind::regression) {
      for (std::size_t idx = 0; idx < pred.size(); ++idx) {
        double diff = pred[idx] - labels.values[idx];
        loss += 0.5 * diff * diff;
        delta_pred[idx] = diff * inv_n;
      }
    } else {
      for (std::size_t idx = 0; idx < pred.size(); ++idx) {
        double zlogit = pred[idx];
        double y = labels.values[idx];
        loss += detail::softplus(zlogit) - y * zlogit;
        delta_pred[idx] = (detail::sigmoid(zlogit) - y) * inv_n;
      }
    }
    loss *= inv_n;
    if (!std::isfinite(loss)) {
      throw std::runtime_error("loss_and_grad: non-finite loss for task '" + t.id + "'");
    }
    out.task_loss[t.id] = loss;
    out.total_loss += loss;

    ModelGrad& g = out.grad;
    ParamTree head_grad = tree_zeros_like(head_tree);
    std::vector<double> delta_q;
    detail::linear_backward(head_tree.layers[0], q, delta_pred, n, dec_out, head_out,
                            head_grad.layers[0].data, head_grad.layers[1].data, delta_q);
    g.heads.emplace(t.id, std::move(head_grad));

    ParamTree dec_grad = tree_zeros_like(dec_tree);
    std::vector<double> delta_z = detail::mlp_backward(dec_tree, dec_cache, std::move(delta_q), n, dec_grad);
    g.decoders.emplace(t.id, std::move(dec_grad));

    for (std::size_t idx = 0; idx < delta_z_total.size(); ++idx) delta_z_total[idx] += delta_z[idx];
  }

  detail::mlp_backward(model.encoder, enc_cache, std::move(delta_z_total), n, out.grad.encoder);
  return out;
}

inline ClientModel sgd_step(const ClientModel& model, const ModelGrad& grad, double lr) {
  if (lr < 0.0) throw std::invalid_argument("sgd_step: lr must be >= 0");
  ClientModel out = model;
  out.encoder = tree_add_scaled(model.encoder, -lr, grad.encoder);
  for (auto& [task, dec] : out.decoders) {
    auto it = grad.decoders.find(task);
    if (it != grad.decoders.end()) dec = tree_add_scaled(dec, -lr, it->second);
  }
  for (auto& [task, head] : out.heads) {
    auto it = grad.heads.find(task);
    if (it != grad.heads.end()) head = tree_add_scaled(head, -lr, it->second);
  }
  return out;
}

// Predictions for one task over a batch (n x head_dim).
inline std::vector<double> predict(const ClientModel& model, const Batch& batch, const std::string& task_id) {
  const std::size_t n = batch.size;
  auto enc_cache = detail::mlp_forward(model.encoder, model.arch.input_dim, model.arch.encoder_widths,
                                       batch.features, n);
  const auto& z = enc_cache.acts.back();
  const std::size_t enc_out = enc_cache.widths.back();
  const auto& dec_tree = model.decoders.at(task_id);
  const auto& head_tree = model.heads.at(task_id);
  auto dec_cache = detail::mlp_forward(dec_tree, static_cast<int>(enc_out), model.arch.decoder_widths, z, n);
  const std::size_t dec_out = dec_cache.widths.back();
  const std::size_t head_out = head_tree.layers[0].shape[0];
  std::vector<double> pred;
  detail::linear_forward(head_tree.layers[0], head_tree.layers[1], dec_cache.acts.back(), n, dec_out,
                         head_out, pred);
  return pred;
}

// Regression -> RMSE (lower better), classification -> accuracy (higher better).
inline std::map<std::string, TaskMetric> evaluate(const ClientModel& model, const Batch& data,
                                                  const std::vector<TaskSpec>& tasks) {
  if (data.size == 0) throw std::invalid_argument("evaluate: empty dataset");
  std::map<std::string, TaskMetric> out;
  for (const auto& t : tasks) {
    auto pred = predict(model, data, t.id);
    const auto& labels = data.labels.at(t.id).values;
    TaskMetric m;
    m.task_id = t.id;
    if (t.kind == TaskKind::regression) {
      double sq = 0.0;
      for (std::size_t idx = 0; idx < pred.size(); ++idx) {
        double d = pred[idx] - labels[idx];
        sq += d * d;
      }
      m.value = std::sqrt(sq / static_cast<double>(pred.size()));
      m.direction = MetricDirection::lower_better;
    } else {
      std::size_t correct = 0;
      for (std::size_t idx = 0; idx < pred.size(); ++idx) {
        bool hit = (pred[idx] > 0.0) == (labels[idx] > 0.5);
        if (hit) ++correct;
      }
      m.value = static_cast<double>(correct) / static_cast<double>(pred.size());
      m.direction = MetricDirection::higher_better;
    }
    out.emplace(t.id, std::move(m));
  }
  return out;
}

}  // namespace fedhca
