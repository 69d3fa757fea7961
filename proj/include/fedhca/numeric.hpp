#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedhca {

// Sums the given values after sorting them, so the result depends only on the
// multiset of summands and not on their input order. Used at every reduction
// point where client or decoder ordering must not perturb the outcome.
inline double sorted_sum(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  double acc = 0.0;
  for (double v : values) acc += v;
  return acc;
}

inline double sorted_sum(std::span<const double> values) {
  return sorted_sum(std::vector<double>(values.begin(), values.end()));
}

inline bool all_finite(std::span<const double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

inline void require_finite(std::span<const double> values, const char* what) {
  if (!all_finite(values)) {
    throw std::runtime_error(std::string("non-finite value in ") + what);
  }
}

inline double clamp(double v, double lo, double hi) {
  return std::min(std::max(v, lo), hi);
}

// Shortest round-trip decimal representation. Keeps emitted tables both
// byte-stable across runs and exactly re-parseable.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace fedhca
