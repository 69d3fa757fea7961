#pragma once

#include <cstddef>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedhca/numeric.hpp"

namespace fedhca {

// Layer-structured parameter containers. Every named tensor (each weight
// matrix, each bias vector) is one layer unit; layer order is fixed by the
// schema and identical across all models that share it.

struct LayerShape {
  std::string id;
  std::vector<std::size_t> shape;

  std::size_t elems() const {
    std::size_t n = 1;
    for (std::size_t s : shape) n *= s;
    return shape.empty() ? 0 : n;
  }
  bool operator==(const LayerShape&) const = default;
};

struct ParamSchema {
  std::vector<LayerShape> layers;

  std::size_t total_dim() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.elems();
    return n;
  }
  bool operator==(const ParamSchema&) const = default;
};

using SchemaPtr = std::shared_ptr<const ParamSchema>;

struct ParamLayer {
  std::string id;
  std::vector<std::size_t> shape;
  std::vector<double> data;  // row-major

  std::size_t elems() const { return data.size(); }
};

struct ParamTree {
  std::vector<ParamLayer> layers;

  std::size_t total_dim() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.data.size();
    return n;
  }
  const ParamLayer& layer(std::size_t i) const { return layers.at(i); }
  ParamLayer& layer(std::size_t i) { return layers.at(i); }

  const ParamLayer* find(const std::string& id) const {
    for (const auto& l : layers) {
      if (l.id == id) return &l;
    }
    return nullptr;
  }
};

inline SchemaPtr make_schema(const ParamTree& tree) {
  auto schema = std::make_shared<ParamSchema>();
  schema->layers.reserve(tree.layers.size());
  for (const auto& l : tree.layers) {
    if (l.data.size() != LayerShape{l.id, l.shape}.elems()) {
      throw std::invalid_argument("layer '" + l.id + "' data size does not match its shape");
    }
    schema->layers.push_back({l.id, l.shape});
  }
  return schema;
}

inline bool matches_schema(const ParamTree& tree, const ParamSchema& schema) {
  if (tree.layers.size() != schema.layers.size()) return false;
  for (std::size_t i = 0; i < tree.layers.size(); ++i) {
    if (tree.layers[i].id != schema.layers[i].id) return false;
    if (tree.layers[i].shape != schema.layers[i].shape) return false;
  }
  return true;
}

struct FlatVector {
  std::vector<double> values;
  SchemaPtr schema;  // may be null for schema-free vectors

  std::size_t dim() const { return values.size(); }
  double operator[](std::size_t i) const { return values[i]; }
  double& operator[](std::size_t i) { return values[i]; }
};

inline void require_same_dim(const FlatVector& x, const FlatVector& y, const char* op) {
  if (x.dim() != y.dim()) {
    throw std::invalid_argument(std::string(op) + ": dimension mismatch (" +
                                std::to_string(x.dim()) + " vs " + std::to_string(y.dim()) + ")");
  }
  if (x.schema && y.schema && !(*x.schema == *y.schema)) {
    throw std::invalid_argument(std::string(op) + ": schema mismatch");
  }
}

inline FlatVector flatten(const ParamTree& tree, SchemaPtr schema) {
  if (!matches_schema(tree, *schema)) {
    throw std::invalid_argument("flatten: tree does not match schema");
  }
  FlatVector out;
  out.schema = std::move(schema);
  out.values.reserve(tree.total_dim());
  for (const auto& l : tree.layers) {
    out.values.insert(out.values.end(), l.data.begin(), l.data.end());
  }
  require_finite(out.values, "flatten");
  return out;
}

inline FlatVector flatten(const ParamTree& tree) { return flatten(tree, make_schema(tree)); }

inline ParamTree unflatten(const FlatVector& flat) {
  if (!flat.schema) throw std::invalid_argument("unflatten: vector carries no schema");
  if (flat.dim() != flat.schema->total_dim()) {
    throw std::invalid_argument("unflatten: length does not match schema total_dim");
  }
  ParamTree tree;
  tree.layers.reserve(flat.schema->layers.size());
  std::size_t off = 0;
  for (const auto& ls : flat.schema->layers) {
    ParamLayer layer;
    layer.id = ls.id;
    layer.shape = ls.shape;
    layer.data.assign(flat.values.begin() + off, flat.values.begin() + off + ls.elems());
    off += ls.elems();
    tree.layers.push_back(std::move(layer));
  }
  return tree;
}

inline double inner(const FlatVector& x, const FlatVector& y) {
  require_same_dim(x, y, "inner");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.dim(); ++i) acc += x.values[i] * y.values[i];
  if (!std::isfinite(acc)) throw std::runtime_error("inner: non-finite result");
  return acc;
}

inline double norm(const FlatVector& x) { return std::sqrt(inner(x, x)); }

// y + a*x
inline FlatVector add_scaled(const FlatVector& y, double a, const FlatVector& x) {
  require_same_dim(y, x, "add_scaled");
  FlatVector out = y;
  for (std::size_t i = 0; i < out.dim(); ++i) out.values[i] += a * x.values[i];
  require_finite(out.values, "add_scaled");
  return out;
}

// Elementwise mean. The per-coordinate reduction is order-canonical, so the
// result is invariant under permutation of the inputs.
inline FlatVector mean(std::span<const FlatVector> vectors) {
  if (vectors.empty()) throw std::invalid_argument("mean: empty input");
  for (std::size_t i = 1; i < vectors.size(); ++i) {
    require_same_dim(vectors[0], vectors[i], "mean");
  }
  FlatVector out;
  out.schema = vectors[0].schema;
  out.values.resize(vectors[0].dim());
  std::vector<double> column(vectors.size());
  for (std::size_t k = 0; k < out.dim(); ++k) {
    for (std::size_t i = 0; i < vectors.size(); ++i) column[i] = vectors[i].values[k];
    out.values[k] = sorted_sum(column) / static_cast<double>(vectors.size());
  }
  require_finite(out.values, "mean");
  return out;
}

inline FlatVector mean(const std::vector<FlatVector>& vectors) {
  return mean(std::span<const FlatVector>(vectors));
}

inline FlatVector zeros_like(const FlatVector& x) {
  FlatVector out;
  out.schema = x.schema;
  out.values.assign(x.dim(), 0.0);
  return out;
}

// --- tree-level helpers used by training and aggregation ---

inline void require_same_structure(const ParamTree& a, const ParamTree& b, const char* op) {
  if (a.layers.size() != b.layers.size()) {
    throw std::invalid_argument(std::string(op) + ": layer count mismatch");
  }
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    if (a.layers[i].id != b.layers[i].id || a.layers[i].shape != b.layers[i].shape) {
      throw std::invalid_argument(std::string(op) + ": layer mismatch at '" + a.layers[i].id + "'");
    }
  }
}

// a + s*b, layer by layer
inline ParamTree tree_add_scaled(const ParamTree& a, double s, const ParamTree& b) {
  require_same_structure(a, b, "tree_add_scaled");
  ParamTree out = a;
  for (std::size_t i = 0; i < out.layers.size(); ++i) {
    auto& dst = out.layers[i].data;
    const auto& src = b.layers[i].data;
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += s * src[k];
    require_finite(dst, "tree_add_scaled");
  }
  return out;
}

inline ParamTree tree_sub(const ParamTree& a, const ParamTree& b) {
  return tree_add_scaled(a, -1.0, b);
}

inline ParamTree tree_scale(const ParamTree& a, double s) {
  ParamTree out = a;
  for (auto& l : out.layers) {
    for (auto& v : l.data) v *= s;
    require_finite(l.data, "tree_scale");
  }
  return out;
}

inline ParamTree tree_zeros_like(const ParamTree& a) {
  ParamTree out = a;
  for (auto& l : out.layers) std::fill(l.data.begin(), l.data.end(), 0.0);
  return out;
}

inline bool tree_equal(const ParamTree& a, const ParamTree& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    if (a.layers[i].id != b.layers[i].id) return false;
    if (a.layers[i].shape != b.layers[i].shape) return false;
    if (a.layers[i].data != b.layers[i].data) return false;
  }
  return true;
}

inline double tree_max_abs_diff(const ParamTree& a, const ParamTree& b) {
  require_same_structure(a, b, "tree_max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    for (std::size_t k = 0; k < a.layers[i].data.size(); ++k) {
      m = std::max(m, std::abs(a.layers[i].data[k] - b.layers[i].data[k]));
    }
  }
  return m;
}

}  // namespace fedhca
