#pragma once

// Latent ranking metrics: encode an evaluation set, roll the transition model
// forward, and rank the true successor among the other episodes' states at the
// same step. Ties count against the model and byte-identical negatives are
// removed per query.

#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "actionbind/core/tape.hpp"
#include "actionbind/core/tensor.hpp"
#include "actionbind/io/dataset.hpp"
#include "actionbind/model/config.hpp"

namespace actionbind {

struct RankingRow {
  int64_t horizon = 0;
  double hits_at_1 = 0.0;
  double mrr = 0.0;
  int64_t queries = 0;    // scored queries (skipped ones excluded)
  int64_t negatives = 0;  // nominal negatives per query before dedupe
  int64_t skipped = 0;    // queries whose negatives were all duplicates
};

struct RankingResult {
  std::vector<RankingRow> rows;
};

namespace detail {

// Step-t observation of an episode. Step len is the final obs1; every earlier
// step is the obs0 of its record.
template <typename T>
void copy_state_obs(const Dataset& data, int64_t episode, int64_t t, T* dst) {
  const DatasetHeader& h = data.header;
  const int64_t p = h.obs_numel();
  const bool last = t == h.episode_len;
  const int64_t rec = episode * h.episode_len + (last ? h.episode_len - 1 : t);
  if (h.kind == ObsKind::kImageU8) {
    const uint8_t* src = (last ? data.obs1_u8.data() : data.obs0_u8.data()) + rec * p;
    for (int64_t i = 0; i < p; ++i) dst[i] = static_cast<T>(src[i]) / static_cast<T>(255);
  } else {
    const float* src = (last ? data.obs1_f32.data() : data.obs0_f32.data()) + rec * p;
    for (int64_t i = 0; i < p; ++i) dst[i] = static_cast<T>(src[i]);
  }
}

inline std::span<const unsigned char> state_obs_bytes(const Dataset& data, int64_t episode,
                                                      int64_t t) {
  const DatasetHeader& h = data.header;
  const int64_t p = h.obs_numel();
  const bool last = t == h.episode_len;
  const int64_t rec = episode * h.episode_len + (last ? h.episode_len - 1 : t);
  if (h.kind == ObsKind::kImageU8) {
    const uint8_t* src = (last ? data.obs1_u8.data() : data.obs0_u8.data()) + rec * p;
    return {reinterpret_cast<const unsigned char*>(src), static_cast<size_t>(p)};
  }
  const float* src = (last ? data.obs1_f32.data() : data.obs0_f32.data()) + rec * p;
  return {reinterpret_cast<const unsigned char*>(src), static_cast<size_t>(p) * sizeof(float)};
}

}  // namespace detail

// Hits@1 and MRR from 1-based ranks, accumulated in input order.
inline std::pair<double, double> metrics_from_ranks(const std::vector<int64_t>& ranks) {
  double hits = 0, rr = 0;
  for (int64_t r : ranks) {
    hits += r == 1 ? 1.0 : 0.0;
    rr += 1.0 / static_cast<double>(r);
  }
  const double n = static_cast<double>(ranks.size());
  return ranks.empty() ? std::pair<double, double>{0.0, 0.0}
                       : std::pair<double, double>{hits / n, rr / n};
}

// Latents of every episode state, shape [episodes, len+1, K, D], encoded in
// chunks to bound peak memory. M is any model exposing config(), encode() and
// predict() over tape variables.
template <typename M, typename T = typename M::scalar_type>
Tensor<T> encode_dataset_states(M& model, const Dataset& data,
                                int64_t chunk = 256) {
  const DatasetHeader& h = data.header;
  const ModelConfig& cfg = model.config();
  const int64_t states_per_ep = h.episode_len + 1;
  const int64_t n = h.episodes * states_per_ep;
  const int64_t p = h.obs_numel();

  Tensor<T> out({h.episodes, states_per_ep, cfg.slots, cfg.slot_dim});
  for (int64_t start = 0; start < n; start += chunk) {
    const int64_t count = std::min<int64_t>(chunk, n - start);
    Shape obs_shape = cfg.obs_shape;
    obs_shape.insert(obs_shape.begin(), count);
    Tensor<T> obs(obs_shape);
    for (int64_t i = 0; i < count; ++i) {
      const int64_t idx = start + i;
      detail::copy_state_obs<T>(data, idx / states_per_ep, idx % states_per_ep,
                                obs.data.data() + i * p);
    }
    Tape<T> tape;
    Var<T> z = model.encode(tape, tape.constant(obs.shape, obs.data));
    std::copy(z.value().begin(), z.value().end(),
              out.data.begin() + start * cfg.slots * cfg.slot_dim);
  }
  return out;
}

// One transition step for a batch of latents with per-row actions, using the
// model's inference-time action routing.
template <typename M, typename T = typename M::scalar_type>
Tensor<T> predict_step(M& model, const Tensor<T>& z, const Tensor<T>& actions) {
  Tape<T> tape;
  Var<T> zin = tape.constant(z.shape, z.data);
  Var<T> a = tape.constant(actions.shape, actions.data);
  Var<T> out = model.predict(tape, zin, a);
  return Tensor<T>(out.shape(), out.value());
}

template <typename M, typename T = typename M::scalar_type>
RankingResult ranking_eval(M& model, const Dataset& data,
                           const std::vector<int64_t>& horizons = {1, 5, 10},
                           int64_t chunk = 256) {
  const DatasetHeader& h = data.header;
  if (h.episodes < 2)
    throw std::invalid_argument("ranking eval needs at least 2 episodes for negatives");
  int64_t max_h = 0;
  for (int64_t t : horizons) {
    if (t < 0) throw std::invalid_argument("ranking eval: negative horizon");
    max_h = std::max(max_h, t);
  }
  if (max_h > h.episode_len)
    throw std::invalid_argument("ranking eval: horizon " + std::to_string(max_h) +
                                " exceeds episode length " + std::to_string(h.episode_len));

  const ModelConfig& cfg = model.config();
  const int64_t e = h.episodes;
  const int64_t kd = cfg.slots * cfg.slot_dim;
  const Tensor<T> states = encode_dataset_states(model, data, chunk);

  // roll all episodes in lockstep, snapshotting the horizons we need
  std::vector<Tensor<T>> preds(horizons.size(), Tensor<T>({e, cfg.slots, cfg.slot_dim}));
  Tensor<T> cur({e, cfg.slots, cfg.slot_dim});
  for (int64_t ep = 0; ep < e; ++ep)
    std::copy(states.data.begin() + ep * (h.episode_len + 1) * kd,
              states.data.begin() + (ep * (h.episode_len + 1) + 1) * kd,
              cur.data.begin() + ep * kd);
  auto snapshot = [&](int64_t t) {
    for (size_t i = 0; i < horizons.size(); ++i)
      if (horizons[i] == t) preds[i].data = cur.data;
  };
  snapshot(0);
  for (int64_t s = 0; s < max_h; ++s) {
    Tensor<T> actions({e, cfg.action_dim});
    for (int64_t ep = 0; ep < e; ++ep) {
      const float* a = data.action(ep * h.episode_len + s);
      for (int64_t j = 0; j < cfg.action_dim; ++j)
        actions.data[ep * cfg.action_dim + j] = static_cast<T>(a[j]);
    }
    cur = predict_step(model, cur, actions);
    snapshot(s + 1);
  }

  auto sq_dist = [&](const T* a, const T* b) {
    double acc = 0;
    for (int64_t i = 0; i < kd; ++i) {
      const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
      acc += d * d;
    }
    return acc;
  };

  RankingResult result;
  for (size_t hi = 0; hi < horizons.size(); ++hi) {
    const int64_t t = horizons[hi];
    RankingRow row;
    row.horizon = t;
    row.negatives = e - 1;
    std::vector<int64_t> ranks;
    for (int64_t ep = 0; ep < e; ++ep) {
      const T* pred = preds[hi].data.data() + ep * kd;
      const T* pos = states.data.data() + (ep * (h.episode_len + 1) + t) * kd;
      const auto pos_bytes = detail::state_obs_bytes(data, ep, t);
      const double dpos = sq_dist(pred, pos);
      int64_t smaller = 0, ties = 0, kept = 0;
      for (int64_t other = 0; other < e; ++other) {
        if (other == ep) continue;
        const auto neg_bytes = detail::state_obs_bytes(data, other, t);
        if (neg_bytes.size() == pos_bytes.size() &&
            std::memcmp(neg_bytes.data(), pos_bytes.data(), neg_bytes.size()) == 0)
          continue;
        ++kept;
        const T* neg = states.data.data() + (other * (h.episode_len + 1) + t) * kd;
        const double dneg = sq_dist(pred, neg);
        if (dneg < dpos) ++smaller;
        else if (dneg == dpos) ++ties;
      }
      if (kept == 0) {
        ++row.skipped;
        continue;
      }
      ranks.push_back(1 + smaller + ties);
    }
    row.queries = static_cast<int64_t>(ranks.size());
    std::tie(row.hits_at_1, row.mrr) = metrics_from_ranks(ranks);
    result.rows.push_back(row);
  }
  return result;
}

}  // namespace actionbind
