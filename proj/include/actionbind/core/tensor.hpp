#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "actionbind/core/rng.hpp"

namespace actionbind {

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

inline void check_shape(const Shape& s) {
  for (int64_t d : s) {
    if (d <= 0) throw std::invalid_argument("tensor: non-positive extent in shape " + shape_str(s));
  }
}

// Row-major strides; broadcast dims (extent 1 against a larger extent) get
// stride 0 when aligned by align_strides below.
inline std::vector<int64_t> row_major_strides(const Shape& s) {
  std::vector<int64_t> st(s.size());
  int64_t acc = 1;
  for (size_t i = s.size(); i-- > 0;) {
    st[i] = acc;
    acc *= s[i];
  }
  return st;
}

// Plain dense value tensor. Differentiable computation lives in Tape
// (tape.hpp); this type is the passive value used for I/O, parameters and
// results.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)) {
    check_shape(shape);
    data.assign(static_cast<size_t>(numel(shape)), T(0));
  }
  Tensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    check_shape(shape);
    if (static_cast<int64_t>(data.size()) != numel(shape))
      throw std::invalid_argument("tensor: data size " + std::to_string(data.size()) +
                                  " does not match shape " + shape_str(shape));
  }

  int64_t size() const { return static_cast<int64_t>(data.size()); }

  T& at(std::initializer_list<int64_t> idx) {
    return data[static_cast<size_t>(flat_index(idx))];
  }
  T at(std::initializer_list<int64_t> idx) const {
    return data[static_cast<size_t>(flat_index(idx))];
  }

  int64_t flat_index(std::initializer_list<int64_t> idx) const {
    if (idx.size() != shape.size())
      throw std::invalid_argument("tensor: index rank mismatch for shape " + shape_str(shape));
    int64_t flat = 0, i = 0;
    for (int64_t v : idx) {
      flat = flat * shape[static_cast<size_t>(i)] + v;
      ++i;
    }
    return flat;
  }
};

enum class InitScheme { kZeros, kUniformFanIn };

// fan_in convention: rank-1 [n] -> n; rank-2 [in, out] -> in; rank >= 3
// (conv kernels [out, in, kh, kw]) -> product of all dims after the first.
inline int64_t fan_in_of(const Shape& s) {
  if (s.empty()) return 1;
  if (s.size() == 1) return s[0];
  if (s.size() == 2) return s[0];
  int64_t f = 1;
  for (size_t i = 1; i < s.size(); ++i) f *= s[i];
  return f;
}

// Deterministic given (shape, scheme, seed). Uniform-fan-in samples from
// +-1/sqrt(fan_in).
template <typename T>
Tensor<T> seeded_init(const Shape& shape, InitScheme scheme, uint64_t seed) {
  Tensor<T> t(shape);
  if (scheme == InitScheme::kZeros) return t;
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in_of(shape)));
  Rng rng(derive_seed(seed, {0x696e6974ull}));  // "init"
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace actionbind
