#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "actionbind/core/gemm.hpp"
#include "actionbind/core/tensor.hpp"

namespace actionbind {

// The closed catalogue of differentiable operations, plus structural
// plumbing (input/constant/reshape/take-rows) that moves values around
// without doing arithmetic.
enum class Op : uint8_t {
  kInput,
  kConstant,
  kAdd,
  kSub,
  kMul,
  kScalarMul,
  kMatMul,
  kConv2d,
  kAvgPool,
  kLeakyRelu,
  kSigmoid,
  kHinge,
  kLayerNorm,
  kSoftmax,
  kSum,
  kMean,
  kConcat,
  kSlice,
  kSquaredNorm,
  kReshape,
  kTakeRows,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::kInput: return "input";
    case Op::kConstant: return "constant";
    case Op::kAdd: return "add";
    case Op::kSub: return "subtract";
    case Op::kMul: return "multiply";
    case Op::kScalarMul: return "scalar-multiply";
    case Op::kMatMul: return "matmul";
    case Op::kConv2d: return "conv2d";
    case Op::kAvgPool: return "avg-pool";
    case Op::kLeakyRelu: return "leaky-relu";
    case Op::kSigmoid: return "sigmoid";
    case Op::kHinge: return "hinge";
    case Op::kLayerNorm: return "layer-norm";
    case Op::kSoftmax: return "softmax";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kConcat: return "concat";
    case Op::kSlice: return "slice";
    case Op::kSquaredNorm: return "squared-norm";
    case Op::kReshape: return "reshape";
    case Op::kTakeRows: return "take-rows";
  }
  return "?";
}

template <typename T>
class Tape;

// Lightweight handle into a tape node.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int32_t id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Shape& shape() const { return tape->shape(id); }
  const std::vector<T>& value() const { return tape->value(id); }
  int64_t size() const { return static_cast<int64_t>(value().size()); }
};

namespace detail {

inline Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
  const size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (size_t i = 0; i < rank; ++i) {
    const int64_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const int64_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1)
      throw std::invalid_argument(std::string("op ") + op + ": shape mismatch " + shape_str(a) +
                                  " vs " + shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

// Strides of `s` aligned to `out` (right-aligned), 0 on broadcast dims.
inline std::vector<int64_t> aligned_strides(const Shape& s, const Shape& out) {
  std::vector<int64_t> st(out.size(), 0);
  auto own = row_major_strides(s);
  for (size_t i = 0; i < s.size(); ++i) {
    const size_t oi = out.size() - s.size() + i;
    st[oi] = (s[i] == 1 && out[oi] != 1) ? 0 : own[i];
  }
  return st;
}

// Calls f(out_flat, a_flat, b_flat) for every element of `out`.
template <typename F>
void for_each_bcast(const Shape& out, const std::vector<int64_t>& sa,
                    const std::vector<int64_t>& sb, F&& f) {
  const int64_t total = numel(out);
  const size_t rank = out.size();
  if (rank == 0) {
    f(0, 0, 0);
    return;
  }
  std::vector<int64_t> idx(rank, 0);
  int64_t ia = 0, ib = 0;
  for (int64_t c = 0; c < total; ++c) {
    f(c, ia, ib);
    for (size_t d = rank; d-- > 0;) {
      ia += sa[d];
      ib += sb[d];
      if (++idx[d] < out[d]) break;
      idx[d] = 0;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
    }
  }
}

// Decomposes a shape around `axis` into (outer, len, inner) for reductions.
struct AxisSplit {
  int64_t outer = 1, len = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& s, int64_t axis) {
  AxisSplit sp;
  for (int64_t i = 0; i < static_cast<int64_t>(s.size()); ++i) {
    if (i < axis)
      sp.outer *= s[i];
    else if (i == axis)
      sp.len = s[i];
    else
      sp.inner *= s[i];
  }
  return sp;
}

}  // namespace detail

// Eagerly evaluated reverse-mode tape. Values are computed at node creation;
// backward() walks the record in reverse and accumulates adjoints. A tape and
// its tensors belong to one thread; independent tapes may run on independent
// threads.
template <typename T>
class Tape {
 public:
  Tape() { nodes_.reserve(256); }

  // Scans every op output for NaN/Inf when enabled (overflow is an error,
  // never a silent value).
  void set_check_finite(bool on) { check_finite_ = on; }

  const Shape& shape(int32_t id) const { return nodes_[id].shape; }
  const std::vector<T>& value(int32_t id) const { return nodes_[id].value; }
  const std::vector<T>& grad(int32_t id) const {
    if (grads_.empty() || grads_[id].empty())
      throw std::runtime_error("tape: no gradient recorded for node (run backward first)");
    return grads_[id];
  }

  // ---- leaves ----

  Var<T> input(const Shape& shape, std::span<const T> data, T* grad_sink = nullptr) {
    if (static_cast<int64_t>(data.size()) != numel(shape))
      throw std::invalid_argument("op input: data size does not match shape " + shape_str(shape));
    Node n(Op::kInput, shape);
    n.value.assign(data.begin(), data.end());
    n.needs_grad = grad_sink != nullptr;
    const int32_t id = push(std::move(n));
    if (grad_sink) grad_sinks_.emplace_back(id, grad_sink);
    return {this, id};
  }

  Var<T> input(const Tensor<T>& t, T* grad_sink = nullptr) {
    return input(t.shape, std::span<const T>(t.data), grad_sink);
  }

  Var<T> constant(const Shape& shape, std::vector<T> data) {
    if (static_cast<int64_t>(data.size()) != numel(shape))
      throw std::invalid_argument("op constant: data size does not match shape " + shape_str(shape));
    Node n(Op::kConstant, shape);
    n.value = std::move(data);
    return {this, push(std::move(n))};
  }

  Var<T> zeros(const Shape& shape) {
    return constant(shape, std::vector<T>(static_cast<size_t>(numel(shape)), T(0)));
  }

  Var<T> scalar(T v) { return constant(Shape{}, {v}); }

  // ---- arithmetic ----

  Var<T> add(Var<T> a, Var<T> b) { return binary(Op::kAdd, a, b); }
  Var<T> sub(Var<T> a, Var<T> b) { return binary(Op::kSub, a, b); }
  Var<T> mul(Var<T> a, Var<T> b) { return binary(Op::kMul, a, b); }

  Var<T> scalar_mul(Var<T> a, T c) {
    Node n(Op::kScalarMul, nodes_[a.id].shape, {a.id});
    n.s0 = c;
    n.value.resize(nodes_[a.id].value.size());
    const auto& x = nodes_[a.id].value;
    for (size_t i = 0; i < x.size(); ++i) n.value[i] = c * x[i];
    return {this, push(std::move(n))};
  }

  Var<T> matmul(Var<T> a, Var<T> b) {
    const Shape& sa = nodes_[a.id].shape;
    const Shape& sb = nodes_[b.id].shape;
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
      throw std::invalid_argument("op matmul: shape mismatch " + shape_str(sa) + " vs " +
                                  shape_str(sb));
    Node n(Op::kMatMul, {sa[0], sb[1]}, {a.id, b.id});
    n.value.resize(static_cast<size_t>(sa[0] * sb[1]));
    gemm_nn(sa[0], sb[1], sa[1], nodes_[a.id].value.data(), nodes_[b.id].value.data(),
            n.value.data());
    return {this, push(std::move(n))};
  }

  // 2-D convolution, stride 1, zero padding (kh-1)/2 x (kw-1)/2 (odd kernels).
  // x: [B,C,H,W], w: [O,C,kh,kw], bias: [O].
  Var<T> conv2d(Var<T> x, Var<T> w, Var<T> bias) {
    const Shape& sx = nodes_[x.id].shape;
    const Shape& sw = nodes_[w.id].shape;
    const Shape& sbias = nodes_[bias.id].shape;
    if (sx.size() != 4 || sw.size() != 4 || sx[1] != sw[1])
      throw std::invalid_argument("op conv2d: shape mismatch " + shape_str(sx) + " vs " +
                                  shape_str(sw));
    if (sw[2] % 2 == 0 || sw[3] % 2 == 0)
      throw std::invalid_argument("op conv2d: kernel extents must be odd, got " + shape_str(sw));
    if (sbias.size() != 1 || sbias[0] != sw[0])
      throw std::invalid_argument("op conv2d: bias shape " + shape_str(sbias) +
                                  " does not match out channels " + std::to_string(sw[0]));
    const int64_t batch = sx[0], cin = sx[1], h = sx[2], wd = sx[3];
    const int64_t cout = sw[0], kh = sw[2], kw = sw[3];
    Node n(Op::kConv2d, {batch, cout, h, wd}, {x.id, w.id, bias.id});
    n.value.assign(static_cast<size_t>(batch * cout * h * wd), T(0));

    const int64_t patch = cin * kh * kw;
    std::vector<T> wt(static_cast<size_t>(patch * cout));
    transpose(cout, patch, nodes_[w.id].value.data(), wt.data());  // [patch, cout]
    std::vector<T> col(static_cast<size_t>(h * wd * patch));
    std::vector<T> outb(static_cast<size_t>(h * wd * cout));
    const T* bptr = nodes_[bias.id].value.data();
    for (int64_t ib = 0; ib < batch; ++ib) {
      im2col(nodes_[x.id].value.data() + ib * cin * h * wd, cin, h, wd, kh, kw, col.data());
      gemm_nn(h * wd, cout, patch, col.data(), wt.data(), outb.data());
      T* dst = n.value.data() + ib * cout * h * wd;
      for (int64_t o = 0; o < cout; ++o)
        for (int64_t p = 0; p < h * wd; ++p) dst[o * h * wd + p] = outb[p * cout + o] + bptr[o];
    }
    return {this, push(std::move(n))};
  }

  // Non-overlapping window average pool; window must divide both extents.
  Var<T> avg_pool(Var<T> x, int64_t window) {
    const Shape& s = nodes_[x.id].shape;
    if (s.size() != 4 || s[2] % window != 0 || s[3] % window != 0)
      throw std::invalid_argument("op avg-pool: window " + std::to_string(window) +
                                  " does not divide " + shape_str(s));
    const int64_t bc = s[0] * s[1], h = s[2], w = s[3];
    const int64_t oh = h / window, ow = w / window;
    Node n(Op::kAvgPool, {s[0], s[1], oh, ow}, {x.id});
    n.i0 = window;
    n.value.assign(static_cast<size_t>(bc * oh * ow), T(0));
    const T* src = nodes_[x.id].value.data();
    const T inv = T(1) / static_cast<T>(window * window);
    for (int64_t c = 0; c < bc; ++c)
      for (int64_t i = 0; i < oh; ++i)
        for (int64_t j = 0; j < ow; ++j) {
          T acc = 0;
          for (int64_t r = 0; r < window; ++r)
            for (int64_t q = 0; q < window; ++q)
              acc += src[(c * h + i * window + r) * w + j * window + q];
          n.value[(c * oh + i) * ow + j] = acc * inv;
        }
    return {this, push(std::move(n))};
  }

  // ---- activations / normalization ----

  Var<T> leaky_relu(Var<T> x, T slope = T(0.1)) {
    Node n(Op::kLeakyRelu, nodes_[x.id].shape, {x.id});
    n.s0 = slope;
    const auto& v = nodes_[x.id].value;
    n.value.resize(v.size());
    for (size_t i = 0; i < v.size(); ++i) n.value[i] = v[i] > T(0) ? v[i] : slope * v[i];
    return {this, push(std::move(n))};
  }

  Var<T> sigmoid(Var<T> x) {
    Node n(Op::kSigmoid, nodes_[x.id].shape, {x.id});
    const auto& v = nodes_[x.id].value;
    n.value.resize(v.size());
    for (size_t i = 0; i < v.size(); ++i) {
      const T z = v[i];
      n.value[i] = z >= T(0) ? T(1) / (T(1) + std::exp(-z))
                             : std::exp(z) / (T(1) + std::exp(z));
    }
    return {this, push(std::move(n))};
  }

  // max(x, 0)
  Var<T> hinge(Var<T> x) {
    Node n(Op::kHinge, nodes_[x.id].shape, {x.id});
    const auto& v = nodes_[x.id].value;
    n.value.resize(v.size());
    for (size_t i = 0; i < v.size(); ++i) n.value[i] = v[i] > T(0) ? v[i] : T(0);
    return {this, push(std::move(n))};
  }

  // Normalizes over the last axis, no affine term.
  Var<T> layer_norm(Var<T> x) {
    const Shape& s = nodes_[x.id].shape;
    if (s.empty()) throw std::invalid_argument("op layer-norm: scalar input");
    const int64_t f = s.back();
    const int64_t rows = numel(s) / f;
    Node n(Op::kLayerNorm, s, {x.id});
    n.value.resize(nodes_[x.id].value.size());
    n.saved.resize(static_cast<size_t>(rows));
    const T* src = nodes_[x.id].value.data();
    const T eps = static_cast<T>(1e-5);
    for (int64_t r = 0; r < rows; ++r) {
      const T* row = src + r * f;
      T mean = 0;
      for (int64_t j = 0; j < f; ++j) mean += row[j];
      mean /= static_cast<T>(f);
      T var = 0;
      for (int64_t j = 0; j < f; ++j) var += (row[j] - mean) * (row[j] - mean);
      var /= static_cast<T>(f);
      const T inv = T(1) / std::sqrt(var + eps);
      n.saved[r] = inv;
      for (int64_t j = 0; j < f; ++j) n.value[r * f + j] = (row[j] - mean) * inv;
    }
    return {this, push(std::move(n))};
  }

  // Max-subtracted softmax along `axis`.
  Var<T> softmax(Var<T> x, int64_t axis) {
    const Shape& s = nodes_[x.id].shape;
    check_axis("softmax", s, axis);
    const auto sp = detail::split_axis(s, axis);
    Node n(Op::kSoftmax, s, {x.id});
    n.i0 = axis;
    n.value.resize(nodes_[x.id].value.size());
    const T* src = nodes_[x.id].value.data();
    for (int64_t o = 0; o < sp.outer; ++o)
      for (int64_t i = 0; i < sp.inner; ++i) {
        const int64_t base = o * sp.len * sp.inner + i;
        T mx = src[base];
        for (int64_t l = 1; l < sp.len; ++l) mx = std::max(mx, src[base + l * sp.inner]);
        T sum = 0;
        for (int64_t l = 0; l < sp.len; ++l) {
          const T e = std::exp(src[base + l * sp.inner] - mx);
          n.value[base + l * sp.inner] = e;
          sum += e;
        }
        const T inv = T(1) / sum;
        for (int64_t l = 0; l < sp.len; ++l) n.value[base + l * sp.inner] *= inv;
      }
    return {this, push(std::move(n))};
  }

  // ---- reductions ----

  Var<T> sum(Var<T> x, int64_t axis) { return reduce(Op::kSum, x, axis); }
  Var<T> mean(Var<T> x, int64_t axis) { return reduce(Op::kMean, x, axis); }

  // Row-wise squared L2 norm: [r, ...] -> [r].
  Var<T> squared_norm(Var<T> x) {
    const Shape& s = nodes_[x.id].shape;
    if (s.empty()) throw std::invalid_argument("op squared-norm: scalar input");
    const int64_t rows = s[0];
    const int64_t cols = numel(s) / rows;
    Node n(Op::kSquaredNorm, {rows}, {x.id});
    n.value.assign(static_cast<size_t>(rows), T(0));
    const T* src = nodes_[x.id].value.data();
    for (int64_t r = 0; r < rows; ++r) {
      T acc = 0;
      for (int64_t j = 0; j < cols; ++j) acc += src[r * cols + j] * src[r * cols + j];
      n.value[r] = acc;
    }
    return {this, push(std::move(n))};
  }

  // ---- structural ----

  Var<T> concat(const std::vector<Var<T>>& xs, int64_t axis) {
    if (xs.empty()) throw std::invalid_argument("op concat: no inputs");
    const Shape& s0 = nodes_[xs[0].id].shape;
    check_axis("concat", s0, axis);
    Shape out = s0;
    out[axis] = 0;
    Node n(Op::kConcat, s0, {});
    for (const auto& x : xs) {
      const Shape& s = nodes_[x.id].shape;
      if (s.size() != s0.size())
        throw std::invalid_argument("op concat: rank mismatch " + shape_str(s0) + " vs " +
                                    shape_str(s));
      for (size_t d = 0; d < s.size(); ++d)
        if (static_cast<int64_t>(d) != axis && s[d] != s0[d])
          throw std::invalid_argument("op concat: shape mismatch " + shape_str(s0) + " vs " +
                                      shape_str(s));
      out[axis] += s[axis];
      n.args.push_back(x.id);
    }
    n.shape = out;
    n.i0 = axis;
    n.value.resize(static_cast<size_t>(numel(out)));
    const auto osp = detail::split_axis(out, axis);
    int64_t off = 0;
    for (const auto& x : xs) {
      const Shape& s = nodes_[x.id].shape;
      const int64_t li = s[axis] * osp.inner;
      const T* src = nodes_[x.id].value.data();
      for (int64_t o = 0; o < osp.outer; ++o)
        std::copy(src + o * li, src + (o + 1) * li,
                  n.value.data() + o * osp.len * osp.inner + off);
      off += li;
    }
    return {this, push(std::move(n))};
  }

  Var<T> slice(Var<T> x, int64_t axis, int64_t offset, int64_t length) {
    const Shape& s = nodes_[x.id].shape;
    check_axis("slice", s, axis);
    if (offset < 0 || length <= 0 || offset + length > s[axis])
      throw std::invalid_argument("op slice: range [" + std::to_string(offset) + "," +
                                  std::to_string(offset + length) + ") out of bounds for " +
                                  shape_str(s));
    Shape out = s;
    out[axis] = length;
    Node n(Op::kSlice, out, {x.id});
    n.i0 = axis;
    n.i1 = offset;
    n.value.resize(static_cast<size_t>(numel(out)));
    const auto sp = detail::split_axis(s, axis);
    const T* src = nodes_[x.id].value.data();
    for (int64_t o = 0; o < sp.outer; ++o)
      std::copy(src + (o * sp.len + offset) * sp.inner, src + (o * sp.len + offset + length) * sp.inner,
                n.value.data() + o * length * sp.inner);
    return {this, push(std::move(n))};
  }

  Var<T> reshape(Var<T> x, const Shape& out) {
    check_shape(out);
    if (numel(out) != numel(nodes_[x.id].shape))
      throw std::invalid_argument("op reshape: cannot view " + shape_str(nodes_[x.id].shape) +
                                  " as " + shape_str(out));
    Node n(Op::kReshape, out, {x.id});
    n.value = nodes_[x.id].value;
    return {this, push(std::move(n))};
  }

  // Gathers rows along axis 0: out[i] = x[rows[i]].
  Var<T> take_rows(Var<T> x, const std::vector<int64_t>& rows) {
    const Shape& s = nodes_[x.id].shape;
    if (s.empty()) throw std::invalid_argument("op take-rows: scalar input");
    Shape out = s;
    out[0] = static_cast<int64_t>(rows.size());
    Node n(Op::kTakeRows, out, {x.id});
    n.idx = rows;
    const int64_t stride = numel(s) / s[0];
    n.value.resize(static_cast<size_t>(stride * out[0]));
    const T* src = nodes_[x.id].value.data();
    for (size_t i = 0; i < rows.size(); ++i) {
      if (rows[i] < 0 || rows[i] >= s[0])
        throw std::invalid_argument("op take-rows: row " + std::to_string(rows[i]) +
                                    " out of bounds for " + shape_str(s));
      std::copy(src + rows[i] * stride, src + (rows[i] + 1) * stride, n.value.data() + i * stride);
    }
    return {this, push(std::move(n))};
  }

  // ---- backward ----

  void backward(Var<T> out) {
    if (out.tape != this) throw std::invalid_argument("backward: variable from another tape");
    if (numel(nodes_[out.id].shape) != 1)
      throw std::invalid_argument("backward: output must be scalar, got " +
                                  shape_str(nodes_[out.id].shape));
    grads_.assign(nodes_.size(), {});
    grads_[out.id].assign(1, T(1));
    for (int32_t id = out.id; id >= 0; --id) {
      if (grads_[id].empty() || !nodes_[id].needs_grad) continue;
      backward_node(id);
    }
    for (auto& [id, sink] : grad_sinks_) {
      if (grads_[id].empty()) continue;
      const auto& g = grads_[id];
      for (size_t i = 0; i < g.size(); ++i) sink[i] += g[i];
    }
  }

 private:
  struct Node {
    Op op;
    Shape shape;
    std::vector<int32_t> args;
    std::vector<T> value;
    std::vector<T> saved;  // layer-norm inverse stddevs
    std::vector<int64_t> idx;
    int64_t i0 = 0, i1 = 0;
    T s0{};
    bool needs_grad = false;

    Node(Op o, Shape s, std::vector<int32_t> a = {}) : op(o), shape(std::move(s)), args(std::move(a)) {}
  };

  int32_t push(Node&& n) {
    for (int32_t a : n.args) n.needs_grad = n.needs_grad || nodes_[a].needs_grad;
    if (check_finite_) {
      for (const T& v : n.value)
        if (!std::isfinite(static_cast<double>(v)))
          throw std::runtime_error(std::string("op ") + op_name(n.op) +
                                   " produced a non-finite value");
    }
    nodes_.push_back(std::move(n));
    return static_cast<int32_t>(nodes_.size() - 1);
  }

  static void check_axis(const char* op, const Shape& s, int64_t axis) {
    if (axis < 0 || axis >= static_cast<int64_t>(s.size()))
      throw std::invalid_argument(std::string("op ") + op + ": axis " + std::to_string(axis) +
                                  " out of range for " + shape_str(s));
  }

  Var<T> binary(Op op, Var<T> a, Var<T> b) {
    const Shape& sa = nodes_[a.id].shape;
    const Shape& sb = nodes_[b.id].shape;
    Shape out = detail::broadcast_shape(op_name(op), sa, sb);
    Node n(op, out, {a.id, b.id});
    n.value.resize(static_cast<size_t>(numel(out)));
    const T* pa = nodes_[a.id].value.data();
    const T* pb = nodes_[b.id].value.data();
    T* po = n.value.data();
    if (sa == sb) {  // fast path
      const size_t len = n.value.size();
      switch (op) {
        case Op::kAdd: for (size_t i = 0; i < len; ++i) po[i] = pa[i] + pb[i]; break;
        case Op::kSub: for (size_t i = 0; i < len; ++i) po[i] = pa[i] - pb[i]; break;
        default:       for (size_t i = 0; i < len; ++i) po[i] = pa[i] * pb[i]; break;
      }
    } else {
      const auto sta = detail::aligned_strides(sa, out);
      const auto stb = detail::aligned_strides(sb, out);
      detail::for_each_bcast(out, sta, stb, [&](int64_t io, int64_t ia, int64_t ib) {
        switch (op) {
          case Op::kAdd: po[io] = pa[ia] + pb[ib]; break;
          case Op::kSub: po[io] = pa[ia] - pb[ib]; break;
          default:       po[io] = pa[ia] * pb[ib]; break;
        }
      });
    }
    return {this, push(std::move(n))};
  }

  Var<T> reduce(Op op, Var<T> x, int64_t axis) {
    const Shape& s = nodes_[x.id].shape;
    check_axis(op_name(op), s, axis);
    const auto sp = detail::split_axis(s, axis);
    Shape out;
    for (int64_t i = 0; i < static_cast<int64_t>(s.size()); ++i)
      if (i != axis) out.push_back(s[i]);
    Node n(op, out, {x.id});
    n.i0 = axis;
    n.value.assign(static_cast<size_t>(sp.outer * sp.inner), T(0));
    const T* src = nodes_[x.id].value.data();
    for (int64_t o = 0; o < sp.outer; ++o)
      for (int64_t l = 0; l < sp.len; ++l) {
        const T* row = src + (o * sp.len + l) * sp.inner;
        T* dst = n.value.data() + o * sp.inner;
        for (int64_t i = 0; i < sp.inner; ++i) dst[i] += row[i];
      }
    if (op == Op::kMean) {
      const T inv = T(1) / static_cast<T>(sp.len);
      for (auto& v : n.value) v *= inv;
    }
    return {this, push(std::move(n))};
  }

  std::vector<T>& ensure_grad(int32_t id) {
    if (grads_[id].empty()) grads_[id].assign(nodes_[id].value.size(), T(0));
    return grads_[id];
  }

  static void im2col(const T* x, int64_t c, int64_t h, int64_t w, int64_t kh, int64_t kw, T* col) {
    const int64_t ph = kh / 2, pw = kw / 2;
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j) {
        T* dst = col + (i * w + j) * c * kh * kw;
        for (int64_t ch = 0; ch < c; ++ch)
          for (int64_t r = 0; r < kh; ++r) {
            const int64_t y = i + r - ph;
            for (int64_t q = 0; q < kw; ++q) {
              const int64_t xx = j + q - pw;
              *dst++ = (y >= 0 && y < h && xx >= 0 && xx < w) ? x[(ch * h + y) * w + xx] : T(0);
            }
          }
      }
  }

  static void col2im_acc(const T* col, int64_t c, int64_t h, int64_t w, int64_t kh, int64_t kw,
                         T* dx) {
    const int64_t ph = kh / 2, pw = kw / 2;
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j) {
        const T* src = col + (i * w + j) * c * kh * kw;
        for (int64_t ch = 0; ch < c; ++ch)
          for (int64_t r = 0; r < kh; ++r) {
            const int64_t y = i + r - ph;
            for (int64_t q = 0; q < kw; ++q) {
              const int64_t xx = j + q - pw;
              if (y >= 0 && y < h && xx >= 0 && xx < w) dx[(ch * h + y) * w + xx] += *src;
              ++src;
            }
          }
      }
  }

  void backward_node(int32_t id) {
    Node& n = nodes_[id];
    const std::vector<T>& g = grads_[id];
    switch (n.op) {
      case Op::kInput:
      case Op::kConstant:
        break;
      case Op::kAdd:
      case Op::kSub:
      case Op::kMul: {
        Node& na = nodes_[n.args[0]];
        Node& nb = nodes_[n.args[1]];
        const bool ga = na.needs_grad, gb = nb.needs_grad;
        T* pga = ga ? ensure_grad(n.args[0]).data() : nullptr;
        T* pgb = gb ? ensure_grad(n.args[1]).data() : nullptr;
        const T* pa = na.value.data();
        const T* pb = nb.value.data();
        if (na.shape == nb.shape) {
          const size_t len = g.size();
          for (size_t i = 0; i < len; ++i) {
            const T gi = g[i];
            if (n.op == Op::kMul) {
              if (ga) pga[i] += gi * pb[i];
              if (gb) pgb[i] += gi * pa[i];
            } else {
              if (ga) pga[i] += gi;
              if (gb) pgb[i] += n.op == Op::kSub ? -gi : gi;
            }
          }
        } else {
          const auto sta = detail::aligned_strides(na.shape, n.shape);
          const auto stb = detail::aligned_strides(nb.shape, n.shape);
          detail::for_each_bcast(n.shape, sta, stb, [&](int64_t io, int64_t ia, int64_t ib) {
            const T gi = g[io];
            if (n.op == Op::kMul) {
              if (ga) pga[ia] += gi * pb[ib];
              if (gb) pgb[ib] += gi * pa[ia];
            } else {
              if (ga) pga[ia] += gi;
              if (gb) pgb[ib] += n.op == Op::kSub ? -gi : gi;
            }
          });
        }
        break;
      }
      case Op::kScalarMul: {
        auto& gx = ensure_grad(n.args[0]);
        for (size_t i = 0; i < g.size(); ++i) gx[i] += n.s0 * g[i];
        break;
      }
      case Op::kMatMul: {
        Node& na = nodes_[n.args[0]];
        Node& nb = nodes_[n.args[1]];
        const int64_t m = na.shape[0], k = na.shape[1], nn = nb.shape[1];
        if (na.needs_grad) {
          std::vector<T> bt(static_cast<size_t>(k * nn));
          transpose(k, nn, nb.value.data(), bt.data());  // [n,k]
          gemm_nn_acc(m, k, nn, g.data(), bt.data(), ensure_grad(n.args[0]).data());
        }
        if (nb.needs_grad)
          gemm_tn_acc(m, nn, k, na.value.data(), g.data(), ensure_grad(n.args[1]).data());
        break;
      }
      case Op::kConv2d: {
        Node& nx = nodes_[n.args[0]];
        Node& nw = nodes_[n.args[1]];
        Node& nbias = nodes_[n.args[2]];
        const int64_t batch = nx.shape[0], cin = nx.shape[1], h = nx.shape[2], w = nx.shape[3];
        const int64_t cout = nw.shape[0], kh = nw.shape[2], kw = nw.shape[3];
        const int64_t patch = cin * kh * kw, hw = h * w;
        std::vector<T> gout(static_cast<size_t>(hw * cout));  // [hw, cout] layout per item
        std::vector<T> col(static_cast<size_t>(hw * patch));
        std::vector<T> dcol(static_cast<size_t>(hw * patch));
        std::vector<T> dwt;
        if (nw.needs_grad) dwt.assign(static_cast<size_t>(patch * cout), T(0));
        for (int64_t ib = 0; ib < batch; ++ib) {
          const T* gsrc = g.data() + ib * cout * hw;
          for (int64_t o = 0; o < cout; ++o)
            for (int64_t p = 0; p < hw; ++p) gout[p * cout + o] = gsrc[o * hw + p];
          if (nbias.needs_grad) {
            auto& gb = ensure_grad(n.args[2]);
            for (int64_t o = 0; o < cout; ++o) {
              T acc = 0;
              for (int64_t p = 0; p < hw; ++p) acc += gsrc[o * hw + p];
              gb[o] += acc;
            }
          }
          if (nw.needs_grad || nx.needs_grad)
            im2col(nx.value.data() + ib * cin * hw, cin, h, w, kh, kw, col.data());
          if (nw.needs_grad)
            gemm_tn_acc(hw, cout, patch, col.data(), gout.data(), dwt.data());
          if (nx.needs_grad) {
            gemm_nn(hw, patch, cout, gout.data(), nw.value.data(), dcol.data());
            col2im_acc(dcol.data(), cin, h, w, kh, kw,
                       ensure_grad(n.args[0]).data() + ib * cin * hw);
          }
        }
        if (nw.needs_grad) {
          auto& gw = ensure_grad(n.args[1]);
          for (int64_t o = 0; o < cout; ++o)
            for (int64_t p = 0; p < patch; ++p) gw[o * patch + p] += dwt[p * cout + o];
        }
        break;
      }
      case Op::kAvgPool: {
        Node& nx = nodes_[n.args[0]];
        const int64_t win = n.i0;
        const int64_t bc = nx.shape[0] * nx.shape[1], h = nx.shape[2], w = nx.shape[3];
        const int64_t oh = h / win, ow = w / win;
        auto& gx = ensure_grad(n.args[0]);
        const T inv = T(1) / static_cast<T>(win * win);
        for (int64_t c = 0; c < bc; ++c)
          for (int64_t i = 0; i < oh; ++i)
            for (int64_t j = 0; j < ow; ++j) {
              const T gi = g[(c * oh + i) * ow + j] * inv;
              for (int64_t r = 0; r < win; ++r)
                for (int64_t q = 0; q < win; ++q)
                  gx[(c * h + i * win + r) * w + j * win + q] += gi;
            }
        break;
      }
      case Op::kLeakyRelu: {
        Node& nx = nodes_[n.args[0]];
        auto& gx = ensure_grad(n.args[0]);
        for (size_t i = 0; i < g.size(); ++i)
          gx[i] += nx.value[i] > T(0) ? g[i] : n.s0 * g[i];
        break;
      }
      case Op::kSigmoid: {
        auto& gx = ensure_grad(n.args[0]);
        for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * n.value[i] * (T(1) - n.value[i]);
        break;
      }
      case Op::kHinge: {
        Node& nx = nodes_[n.args[0]];
        auto& gx = ensure_grad(n.args[0]);
        for (size_t i = 0; i < g.size(); ++i)
          if (nx.value[i] > T(0)) gx[i] += g[i];
        break;
      }
      case Op::kLayerNorm: {
        const int64_t f = n.shape.back();
        const int64_t rows = numel(n.shape) / f;
        auto& gx = ensure_grad(n.args[0]);
        for (int64_t r = 0; r < rows; ++r) {
          const T* y = n.value.data() + r * f;
          const T* gr = g.data() + r * f;
          T gmean = 0, gymean = 0;
          for (int64_t j = 0; j < f; ++j) {
            gmean += gr[j];
            gymean += gr[j] * y[j];
          }
          gmean /= static_cast<T>(f);
          gymean /= static_cast<T>(f);
          const T inv = n.saved[r];
          for (int64_t j = 0; j < f; ++j) gx[r * f + j] += inv * (gr[j] - gmean - y[j] * gymean);
        }
        break;
      }
      case Op::kSoftmax: {
        const auto sp = detail::split_axis(n.shape, n.i0);
        auto& gx = ensure_grad(n.args[0]);
        for (int64_t o = 0; o < sp.outer; ++o)
          for (int64_t i = 0; i < sp.inner; ++i) {
            const int64_t base = o * sp.len * sp.inner + i;
            T dot = 0;
            for (int64_t l = 0; l < sp.len; ++l)
              dot += g[base + l * sp.inner] * n.value[base + l * sp.inner];
            for (int64_t l = 0; l < sp.len; ++l) {
              const int64_t p = base + l * sp.inner;
              gx[p] += n.value[p] * (g[p] - dot);
            }
          }
        break;
      }
      case Op::kSum:
      case Op::kMean: {
        Node& nx = nodes_[n.args[0]];
        const auto sp = detail::split_axis(nx.shape, n.i0);
        auto& gx = ensure_grad(n.args[0]);
        const T scale = n.op == Op::kMean ? T(1) / static_cast<T>(sp.len) : T(1);
        for (int64_t o = 0; o < sp.outer; ++o)
          for (int64_t l = 0; l < sp.len; ++l) {
            const T* gr = g.data() + o * sp.inner;
            T* dst = gx.data() + (o * sp.len + l) * sp.inner;
            for (int64_t i = 0; i < sp.inner; ++i) dst[i] += gr[i] * scale;
          }
        break;
      }
      case Op::kConcat: {
        const auto osp = detail::split_axis(n.shape, n.i0);
        int64_t off = 0;
        for (int32_t a : n.args) {
          Node& nx = nodes_[a];
          const int64_t li = nx.shape[n.i0] * osp.inner;
          if (nx.needs_grad) {
            auto& gx = ensure_grad(a);
            for (int64_t o = 0; o < osp.outer; ++o) {
              const T* gr = g.data() + o * osp.len * osp.inner + off;
              T* dst = gx.data() + o * li;
              for (int64_t i = 0; i < li; ++i) dst[i] += gr[i];
            }
          }
          off += li;
        }
        break;
      }
      case Op::kSlice: {
        Node& nx = nodes_[n.args[0]];
        const auto sp = detail::split_axis(nx.shape, n.i0);
        const int64_t length = n.shape[n.i0];
        auto& gx = ensure_grad(n.args[0]);
        for (int64_t o = 0; o < sp.outer; ++o) {
          const T* gr = g.data() + o * length * sp.inner;
          T* dst = gx.data() + (o * sp.len + n.i1) * sp.inner;
          for (int64_t i = 0; i < length * sp.inner; ++i) dst[i] += gr[i];
        }
        break;
      }
      case Op::kSquaredNorm: {
        Node& nx = nodes_[n.args[0]];
        const int64_t rows = n.shape[0];
        const int64_t cols = numel(nx.shape) / rows;
        auto& gx = ensure_grad(n.args[0]);
        for (int64_t r = 0; r < rows; ++r) {
          const T gr = T(2) * g[r];
          const T* x = nx.value.data() + r * cols;
          T* dst = gx.data() + r * cols;
          for (int64_t j = 0; j < cols; ++j) dst[j] += gr * x[j];
        }
        break;
      }
      case Op::kReshape: {
        auto& gx = ensure_grad(n.args[0]);
        for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        break;
      }
      case Op::kTakeRows: {
        Node& nx = nodes_[n.args[0]];
        const int64_t stride = numel(nx.shape) / nx.shape[0];
        auto& gx = ensure_grad(n.args[0]);
        for (size_t i = 0; i < n.idx.size(); ++i) {
          const T* gr = g.data() + i * stride;
          T* dst = gx.data() + n.idx[i] * stride;
          for (int64_t j = 0; j < stride; ++j) dst[j] += gr[j];
        }
        break;
      }
    }
  }

  std::vector<Node> nodes_;
  std::vector<std::vector<T>> grads_;
  std::vector<std::pair<int32_t, T*>> grad_sinks_;
  bool check_finite_ = true;
};

// Operator sugar for same-tape variables.
template <typename T>
Var<T> operator+(Var<T> a, Var<T> b) { return a.tape->add(a, b); }
template <typename T>
Var<T> operator-(Var<T> a, Var<T> b) { return a.tape->sub(a, b); }
template <typename T>
Var<T> operator*(Var<T> a, Var<T> b) { return a.tape->mul(a, b); }

}  // namespace actionbind
