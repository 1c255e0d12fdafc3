#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "actionbind/core/hash.hpp"
#include "actionbind/core/rng.hpp"
#include "actionbind/core/tape.hpp"
#include "actionbind/core/tensor.hpp"

namespace actionbind {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  std::vector<T> grad;
};

// Owns named parameters in insertion order. Every parameter's initial value
// is a pure function of (store seed, parameter name), so rebuilding the same
// model layout from the same seed reproduces the same weights regardless of
// construction interleaving.
template <typename T>
class ParamStore {
 public:
  explicit ParamStore(uint64_t seed) : seed_(seed) {}

  Parameter<T>& add(const std::string& name, const Shape& shape, InitScheme scheme) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
    auto p = std::make_unique<Parameter<T>>();
    p->name = name;
    p->value = seeded_init<T>(shape, scheme, derive_seed(seed_, {fnv1a64(name)}));
    p->grad.assign(p->value.data.size(), T(0));
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return *params_.back();
  }

  Parameter<T>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return *params_[it->second];
  }

  const Parameter<T>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return *params_[it->second];
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  size_t size() const { return params_.size(); }
  uint64_t seed() const { return seed_; }

  std::vector<Parameter<T>*> all() {
    std::vector<Parameter<T>*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }

  void zero_grads() {
    for (auto& p : params_) std::fill(p->grad.begin(), p->grad.end(), T(0));
  }

  int64_t parameter_count() const {
    int64_t n = 0;
    for (const auto& p : params_) n += static_cast<int64_t>(p->value.data.size());
    return n;
  }

 private:
  uint64_t seed_;
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::unordered_map<std::string, size_t> index_;
};

// Binds a parameter into a tape as a differentiable leaf; after backward()
// the node's adjoint accumulates into p.grad.
template <typename T>
Var<T> use(Tape<T>& tape, Parameter<T>& p) {
  return tape.input(p.value.shape, std::span<const T>(p.value.data), p.grad.data());
}

// Bias-corrected Adam. step() consumes and clears the accumulated gradients.
template <typename T>
class Adam {
 public:
  explicit Adam(ParamStore<T>& params, T lr, T beta1 = T(0.9), T beta2 = T(0.999),
                T eps = T(1e-8))
      : params_(params), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto* p : params_.all())
      slots_.push_back({std::vector<T>(p->value.data.size(), T(0)),
                        std::vector<T>(p->value.data.size(), T(0))});
  }

  void set_lr(T lr) { lr_ = lr; }
  int64_t steps() const { return t_; }

  void step() {
    auto ps = params_.all();
    if (ps.size() != slots_.size())
      throw std::runtime_error("adam: parameter set changed after optimizer construction");
    ++t_;
    const T bc1 = T(1) - std::pow(beta1_, static_cast<T>(t_));
    const T bc2 = T(1) - std::pow(beta2_, static_cast<T>(t_));
    for (size_t i = 0; i < ps.size(); ++i) {
      Parameter<T>& p = *ps[i];
      auto& [m, v] = slots_[i];
      for (size_t j = 0; j < p.grad.size(); ++j) {
        const T g = p.grad[j];
        if (!std::isfinite(static_cast<double>(g)))
          throw std::runtime_error("adam: non-finite gradient in parameter " + p.name);
        m[j] = beta1_ * m[j] + (T(1) - beta1_) * g;
        v[j] = beta2_ * v[j] + (T(1) - beta2_) * g * g;
        p.value.data[j] -= lr_ * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps_);
      }
    }
    params_.zero_grads();
  }

 private:
  struct Slot {
    std::vector<T> m, v;
  };

  ParamStore<T>& params_;
  T lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<Slot> slots_;
};

}  // namespace actionbind
