#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "actionbind/core/adam.hpp"
#include "actionbind/core/tape.hpp"

namespace actionbind {

// Affine layer over 2-D activations: y = x @ W + b, W: [in, out].
template <typename T>
class Dense {
 public:
  Dense() = default;

  Dense(ParamStore<T>& store, const std::string& prefix, int64_t in, int64_t out)
      : w_(&store.add(prefix + ".w", {in, out}, InitScheme::kUniformFanIn)),
        b_(&store.add(prefix + ".b", {out}, InitScheme::kZeros)) {}

  Var<T> operator()(Tape<T>& tape, Var<T> x) const {
    return tape.add(tape.matmul(x, use(tape, *w_)), use(tape, *b_));
  }

  int64_t in_dim() const { return w_->value.shape[0]; }
  int64_t out_dim() const { return w_->value.shape[1]; }

 private:
  Parameter<T>* w_ = nullptr;
  Parameter<T>* b_ = nullptr;
};

// Stack of affine layers. Each hidden layer is followed by leaky-relu then
// layer-norm; the final layer is linear.
template <typename T>
class Mlp {
 public:
  Mlp() = default;

  Mlp(ParamStore<T>& store, const std::string& prefix, int64_t in,
      const std::vector<int64_t>& hidden, int64_t out) {
    int64_t d = in;
    for (size_t i = 0; i < hidden.size(); ++i) {
      layers_.emplace_back(store, prefix + ".h" + std::to_string(i), d, hidden[i]);
      d = hidden[i];
    }
    layers_.emplace_back(store, prefix + ".out", d, out);
  }

  Var<T> operator()(Tape<T>& tape, Var<T> x) const {
    for (size_t i = 0; i + 1 < layers_.size(); ++i)
      x = tape.layer_norm(tape.leaky_relu(layers_[i](tape, x)));
    return layers_.back()(tape, x);
  }

  int64_t in_dim() const { return layers_.front().in_dim(); }
  int64_t out_dim() const { return layers_.back().out_dim(); }

 private:
  std::vector<Dense<T>> layers_;
};

}  // namespace actionbind
