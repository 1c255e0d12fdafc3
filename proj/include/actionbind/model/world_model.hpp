#pragma once

// Object-factored world model: a slot encoder, an optional action-attention
// head, and an L-layer message-passing transition applied per slot with
// residual updates.
//
// Action routing modes:
//   none  every slot receives the raw action vector
//   soft  slot k receives alpha_k * value(action)
//   hard  slot k receives the raw action if k is selected, zeros otherwise;
//         training marginalizes over the selected slot with alpha as the
//         distribution, inference uses argmax alpha (ties: lowest index)

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "actionbind/core/adam.hpp"
#include "actionbind/core/mlp.hpp"
#include "actionbind/core/tape.hpp"
#include "actionbind/io/checkpoint.hpp"
#include "actionbind/io/dataset.hpp"
#include "actionbind/model/config.hpp"

namespace actionbind {

template <typename T>
class WorldModel {
 public:
  using scalar_type = T;

  WorldModel(ParamStore<T>& store, const ModelConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    if (cfg.obs_kind == ObsKind::kImageU8) {
      const int64_t c = cfg.obs_shape[0];
      conv1_w_ = &store.add("enc.conv1.w", {16, c, 3, 3}, InitScheme::kUniformFanIn);
      conv1_b_ = &store.add("enc.conv1.b", {16}, InitScheme::kZeros);
      conv2_w_ = &store.add("enc.conv2.w", {cfg.slots, 16, 3, 3}, InitScheme::kUniformFanIn);
      conv2_b_ = &store.add("enc.conv2.b", {cfg.slots}, InitScheme::kZeros);
      obj_ = Mlp<T>(store, "enc.obj", kMaskHw * kMaskHw, {cfg.hidden}, cfg.slot_dim);
    } else {
      factor_ = Mlp<T>(store, "enc.factor", cfg.obs_shape[1], {cfg.hidden}, cfg.slot_dim);
    }
    if (cfg.attention != AttentionMode::kNone) {
      key_ = Mlp<T>(store, "att.key", cfg.slot_dim, {cfg.att_dim}, cfg.att_dim);
      query_ = Mlp<T>(store, "att.query", cfg.action_dim, {cfg.att_dim}, cfg.att_dim);
      value_ = Dense<T>(store, "att.value", cfg.action_dim, cfg.action_dim);
    }
    for (int64_t l = 0; l < cfg.layers; ++l) {
      const std::string p = "gnn.l" + std::to_string(l);
      edge_.emplace_back(store, p + ".edge", 2 * cfg.slot_dim, std::vector<int64_t>{cfg.hidden},
                         cfg.slot_dim);
      node_.emplace_back(store, p + ".node", 2 * cfg.slot_dim + cfg.action_dim,
                         std::vector<int64_t>{cfg.hidden}, cfg.slot_dim);
    }
  }

  const ModelConfig& config() const { return cfg_; }

  // obs [B, ...obs_shape] -> slots [B, K, D]
  Var<T> encode(Tape<T>& tape, Var<T> obs) const {
    const int64_t b = obs.shape()[0];
    if (cfg_.obs_kind == ObsKind::kImageU8) {
      const int64_t window = cfg_.obs_shape[1] / kMaskHw;
      Var<T> h = tape.avg_pool(obs, window);
      h = tape.leaky_relu(tape.conv2d(h, use(tape, *conv1_w_), use(tape, *conv1_b_)));
      Var<T> masks =
          tape.sigmoid(tape.conv2d(h, use(tape, *conv2_w_), use(tape, *conv2_b_)));
      Var<T> flat = tape.reshape(masks, {b * cfg_.slots, kMaskHw * kMaskHw});
      return tape.reshape(obj_(tape, flat), {b, cfg_.slots, cfg_.slot_dim});
    }
    Var<T> flat = tape.reshape(obs, {b * cfg_.slots, cfg_.obs_shape[1]});
    return tape.reshape(factor_(tape, flat), {b, cfg_.slots, cfg_.slot_dim});
  }

  // z [B,K,D], action [B,A] -> alpha [B,K] rows on the simplex
  Var<T> attention_alpha(Tape<T>& tape, Var<T> z, Var<T> action) const {
    if (cfg_.attention == AttentionMode::kNone)
      throw std::logic_error("attention_alpha: model was built with attention none");
    const int64_t b = z.shape()[0];
    Var<T> keys = tape.reshape(key_(tape, tape.reshape(z, {b * cfg_.slots, cfg_.slot_dim})),
                               {b, cfg_.slots, cfg_.att_dim});
    Var<T> q = tape.reshape(query_(tape, action), {b, 1, cfg_.att_dim});
    Var<T> logits = tape.sum(tape.mul(keys, q), 2);  // [B,K]
    return tape.softmax(logits, 1);
  }

  // every slot gets the raw action
  Var<T> slot_actions_broadcast(Tape<T>& tape, Var<T> action) const {
    const int64_t b = action.shape()[0];
    return tape.add(tape.reshape(action, {b, 1, cfg_.action_dim}),
                    tape.zeros({b, cfg_.slots, cfg_.action_dim}));
  }

  // slot k gets alpha_k * value(action)
  Var<T> slot_actions_soft(Tape<T>& tape, Var<T> alpha, Var<T> action) const {
    const int64_t b = action.shape()[0];
    Var<T> v = tape.reshape(value_(tape, action), {b, 1, cfg_.action_dim});
    return tape.mul(tape.reshape(alpha, {b, cfg_.slots, 1}), v);
  }

  // slot m gets the raw action, all others zeros
  Var<T> slot_actions_pad(Tape<T>& tape, Var<T> action, int64_t m) const {
    if (m < 0 || m >= cfg_.slots) throw std::out_of_range("slot_actions_pad: bad slot index");
    const int64_t b = action.shape()[0];
    std::vector<T> onehot(cfg_.slots, T(0));
    onehot[m] = T(1);
    Var<T> mask = tape.constant({1, cfg_.slots, 1}, onehot);
    return tape.mul(tape.reshape(action, {b, 1, cfg_.action_dim}), mask);
  }

  // ties resolve to the lowest slot index
  static std::vector<int64_t> argmax_rows(const Tensor<T>& alpha) {
    const int64_t b = alpha.shape[0], k = alpha.shape[1];
    std::vector<int64_t> out(b);
    for (int64_t r = 0; r < b; ++r) {
      int64_t best = 0;
      for (int64_t j = 1; j < k; ++j)
        if (alpha.data[r * k + j] > alpha.data[r * k + best]) best = j;
      out[r] = best;
    }
    return out;
  }

  // per-row hard routing mask from already-computed alpha values
  Var<T> slot_actions_hard(Tape<T>& tape, const Tensor<T>& alpha, Var<T> action) const {
    const int64_t b = action.shape()[0];
    const std::vector<int64_t> pick = argmax_rows(alpha);
    std::vector<T> mask(b * cfg_.slots, T(0));
    for (int64_t r = 0; r < b; ++r) mask[r * cfg_.slots + pick[r]] = T(1);
    Var<T> m = tape.constant({b, cfg_.slots, 1}, mask);
    return tape.mul(tape.reshape(action, {b, 1, cfg_.action_dim}), m);
  }

  // z [B,K,D], slot_actions [B,K,A] -> predicted next slots [B,K,D].
  // Each layer: h_k += f_node(h_k, a_k, sum_{i != k} f_edge(h_i, h_k)).
  Var<T> transition(Tape<T>& tape, Var<T> z, Var<T> slot_actions) const {
    const int64_t b = z.shape()[0], k = cfg_.slots, d = cfg_.slot_dim;
    Var<T> h = z;
    for (int64_t l = 0; l < cfg_.layers; ++l) {
      std::vector<Var<T>> edges_in;
      for (int64_t t = 0; t < k; ++t) {
        std::vector<Var<T>> others;
        if (t > 0) others.push_back(tape.slice(h, 1, 0, t));
        if (t + 1 < k) others.push_back(tape.slice(h, 1, t + 1, k - t - 1));
        Var<T> src = others.size() == 1 ? others[0] : tape.concat(others, 1);
        Var<T> tgt = tape.add(tape.slice(h, 1, t, 1), tape.zeros({b, k - 1, d}));
        edges_in.push_back(tape.concat({src, tgt}, 2));  // [B, K-1, 2D]
      }
      Var<T> eflat = tape.reshape(tape.concat(edges_in, 1), {b * k * (k - 1), 2 * d});
      Var<T> agg = tape.sum(tape.reshape(edge_[l](tape, eflat), {b, k, k - 1, d}), 2);
      Var<T> nin = tape.reshape(tape.concat({h, slot_actions, agg}, 2),
                                {b * k, 2 * d + cfg_.action_dim});
      Var<T> delta = tape.reshape(node_[l](tape, nin), {b, k, d});
      h = tape.add(h, delta);
    }
    return h;
  }

  // single next-state prediction with inference-time action routing
  Var<T> predict(Tape<T>& tape, Var<T> z, Var<T> action) const {
    return transition(tape, z, route_actions(tape, z, action));
  }

  Var<T> route_actions(Tape<T>& tape, Var<T> z, Var<T> action) const {
    switch (cfg_.attention) {
      case AttentionMode::kNone:
        return slot_actions_broadcast(tape, action);
      case AttentionMode::kSoft:
        return slot_actions_soft(tape, attention_alpha(tape, z, action), action);
      case AttentionMode::kHard: {
        Var<T> alpha = attention_alpha(tape, z, action);
        return slot_actions_hard(tape, Tensor<T>(alpha.shape(), alpha.value()), action);
      }
    }
    throw std::logic_error("route_actions: bad attention mode");
  }

 private:
  ModelConfig cfg_;
  Parameter<T>*conv1_w_ = nullptr, *conv1_b_ = nullptr;
  Parameter<T>*conv2_w_ = nullptr, *conv2_b_ = nullptr;
  Mlp<T> obj_, factor_, key_, query_;
  Dense<T> value_;
  std::vector<Mlp<T>> edge_, node_;
};

// Batch assembly from datasets. Images are scaled to [0,1].
template <typename T>
Tensor<T> batch_obs(const Dataset& d, const std::vector<int64_t>& recs, bool next) {
  Shape shape{static_cast<int64_t>(recs.size())};
  shape.insert(shape.end(), d.header.obs_shape.begin(), d.header.obs_shape.end());
  Tensor<T> out(shape);
  const int64_t p = d.header.obs_numel();
  for (size_t i = 0; i < recs.size(); ++i) {
    if (d.header.kind == ObsKind::kImageU8) {
      const uint8_t* src = next ? d.obs1_image(recs[i]) : d.obs0_image(recs[i]);
      for (int64_t j = 0; j < p; ++j) out.data[i * p + j] = T(src[j]) / T(255);
    } else {
      const float* src = next ? d.obs1_factored(recs[i]) : d.obs0_factored(recs[i]);
      for (int64_t j = 0; j < p; ++j) out.data[i * p + j] = T(src[j]);
    }
  }
  return out;
}

template <typename T>
Tensor<T> batch_actions(const Dataset& d, const std::vector<int64_t>& recs) {
  const int64_t a = d.header.action_dim;
  Tensor<T> out({static_cast<int64_t>(recs.size()), a});
  for (size_t i = 0; i < recs.size(); ++i)
    for (int64_t j = 0; j < a; ++j) out.data[i * a + j] = T(d.action(recs[i])[j]);
  return out;
}

// Model config appropriate for a dataset's observation geometry.
inline ModelConfig default_model_config(const DatasetHeader& h, ModelKind kind,
                                        AttentionMode attention, int64_t layers) {
  ModelConfig cfg;
  cfg.kind = kind;
  cfg.attention = attention;
  cfg.layers = layers;
  cfg.action_dim = h.action_dim;
  cfg.obs_kind = h.kind;
  cfg.obs_shape = h.obs_shape;
  if (h.kind == ObsKind::kImageU8) {
    cfg.slots = 5;
    cfg.slot_dim = 2;
  } else {
    cfg.slots = h.obs_shape[0];
    cfg.slot_dim = 32;
  }
  cfg.validate();
  return cfg;
}

// Checkpoint wrapper: model config rides in the metadata so a model can be
// rebuilt from the file alone.
inline void save_world_model(const std::string& path, const ModelConfig& cfg,
                             ParamStore<float>& store, nlohmann::json extra_meta) {
  extra_meta["config"] = cfg;
  save_checkpoint(path, std::move(extra_meta), store);
}

struct LoadedModel {
  ModelConfig cfg;
  nlohmann::json meta;
  std::unique_ptr<ParamStore<float>> store;
  std::unique_ptr<WorldModel<float>> model;
};

inline LoadedModel load_world_model(const std::string& path) {
  LoadedModel out;
  nlohmann::json meta = peek_checkpoint_meta(path);
  try {
    out.cfg = meta.at("config").get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path + ": checkpoint metadata has no model config: " + e.what());
  }
  out.store = std::make_unique<ParamStore<float>>(0);
  out.model = std::make_unique<WorldModel<float>>(*out.store, out.cfg);
  out.meta = load_checkpoint(path, *out.store);
  return out;
}

}  // namespace actionbind
