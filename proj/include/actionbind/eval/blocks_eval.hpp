#pragma once

// Block-world evaluation: action-sequence ranking against perturbed
// trajectories and per-step attention reports.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "actionbind/core/rng.hpp"
#include "actionbind/core/tape.hpp"
#include "actionbind/core/tensor.hpp"
#include "actionbind/env/blocks.hpp"
#include "actionbind/model/world_model.hpp"

namespace actionbind {

namespace detail {
constexpr uint64_t kTrialStream = 0x7472696c;
constexpr uint64_t kPerturbStream = 0x70727462;
constexpr uint64_t kEvalNoiseStream = 0x65766e73;
}  // namespace detail

// One ranking query: candidate 0 is the expert sequence, the rest fail the
// task. Observations are rendered once so every model scores the same bytes.
struct RankingTrial {
  BlockInstance instance;
  std::vector<std::vector<BlockAction>> candidates;
  std::vector<float> initial_obs;  // kBlockObsNumel
  std::vector<float> goal_obs;
};

inline std::vector<RankingTrial> make_ranking_trials(BlockTask task, int64_t count,
                                                     uint64_t seed, int incorrect = 10) {
  std::vector<RankingTrial> trials;
  for (int64_t i = 0; i < count; ++i) {
    const uint64_t tseed = derive_seed(seed, {detail::kTrialStream, static_cast<uint64_t>(i)});
    const BlockDemo expert = expert_demo(task, tseed);
    Rng prng(derive_seed(tseed, {detail::kPerturbStream}));
    const std::vector<BlockDemo> bad = distinct_perturbations(expert, incorrect, prng);

    RankingTrial trial;
    trial.instance = expert.instance;
    trial.candidates.push_back(expert.actions);
    for (const BlockDemo& d : bad) trial.candidates.push_back(d.actions);

    Rng noise(derive_seed(tseed, {detail::kEvalNoiseStream}));
    trial.initial_obs.resize(kBlockObsNumel);
    trial.goal_obs.resize(kBlockObsNumel);
    render_block_obs(expert.states.front(), noise, trial.initial_obs.data());
    render_block_obs(goal_state(expert.instance), noise, trial.goal_obs.data());
    trials.push_back(std::move(trial));
  }
  return trials;
}

// Index of the candidate whose final latent is strictly closest to the goal,
// or -1 when the minimum is shared (a tie scores as incorrect).
template <typename T>
int rank_trajectories(const std::vector<T>& goal, const std::vector<std::vector<T>>& finals) {
  if (finals.empty()) throw std::invalid_argument("rank_trajectories: no candidates");
  std::vector<double> dist(finals.size(), 0.0);
  for (size_t c = 0; c < finals.size(); ++c) {
    if (finals[c].size() != goal.size())
      throw std::invalid_argument("rank_trajectories: latent size mismatch");
    double acc = 0;
    for (size_t i = 0; i < goal.size(); ++i) {
      const double d = static_cast<double>(finals[c][i]) - static_cast<double>(goal[i]);
      acc += d * d;
    }
    dist[c] = acc;
  }
  int best = 0;
  for (size_t c = 1; c < dist.size(); ++c)
    if (dist[c] < dist[static_cast<size_t>(best)]) best = static_cast<int>(c);
  for (size_t c = 0; c < dist.size(); ++c)
    if (static_cast<int>(c) != best && dist[c] == dist[static_cast<size_t>(best)]) return -1;
  return best;
}

struct ActionRankingResult {
  std::vector<int> winners;  // per trial; -1 records a tie
  double hits_at_1 = 0.0;
};

template <typename M, typename T = typename M::scalar_type>
ActionRankingResult action_sequence_ranking(M& model,
                                            const std::vector<RankingTrial>& trials) {
  const ModelConfig& cfg = model.config();
  if (cfg.obs_kind != ObsKind::kFactoredF32)
    throw std::invalid_argument("action-sequence ranking is defined for block models");
  const int64_t kd = cfg.slots * cfg.slot_dim;

  auto encode_one = [&](const std::vector<float>& obs) {
    Tensor<T> t(cfg.obs_shape);
    for (size_t i = 0; i < obs.size(); ++i) t.data[i] = static_cast<T>(obs[i]);
    Shape batched = cfg.obs_shape;
    batched.insert(batched.begin(), 1);
    Tape<T> tape;
    Var<T> z = model.encode(tape, tape.constant(batched, t.data));
    return std::vector<T>(z.value().begin(), z.value().end());
  };

  ActionRankingResult result;
  int64_t correct = 0;
  for (const RankingTrial& trial : trials) {
    const std::vector<T> z0 = encode_one(trial.initial_obs);
    const std::vector<T> zg = encode_one(trial.goal_obs);

    std::vector<std::vector<T>> finals;
    for (const std::vector<BlockAction>& seq : trial.candidates) {
      Tensor<T> cur({1, cfg.slots, cfg.slot_dim}, z0);
      for (const BlockAction& a : seq) {
        float enc[kBlockActionDim];
        encode_block_action(a, enc);
        Tensor<T> at({1, kBlockActionDim});
        for (int64_t i = 0; i < kBlockActionDim; ++i) at.data[i] = static_cast<T>(enc[i]);
        cur = predict_step(model, cur, at);
      }
      finals.emplace_back(cur.data.begin(), cur.data.begin() + kd);
    }
    const int winner = rank_trajectories(zg, finals);
    result.winners.push_back(winner);
    if (winner == 0) ++correct;
  }
  result.hits_at_1 =
      trials.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(trials.size());
  return result;
}

// Per-step attention table over a demonstration. The manipulated block is the
// one entering the hand on a pick and the one leaving it on a place.
struct AttentionRow {
  int64_t step = 0;
  BlockPrimitive primitive = BlockPrimitive::kPick;
  std::vector<double> alpha;
  int64_t argmax = 0;
  int64_t manipulated = -1;
};

template <typename M, typename T = typename M::scalar_type>
std::vector<AttentionRow> attention_rows(M& model, const BlockDemo& demo,
                                         uint64_t noise_seed) {
  const ModelConfig& cfg = model.config();
  if (cfg.attention == AttentionMode::kNone)
    throw std::invalid_argument("attention report requires a soft or hard attention model");
  if (cfg.obs_kind != ObsKind::kFactoredF32)
    throw std::invalid_argument("attention report is defined for block models");

  Rng noise(derive_seed(noise_seed, {detail::kEvalNoiseStream}));
  std::vector<AttentionRow> rows;
  for (size_t s = 0; s < demo.actions.size(); ++s) {
    std::vector<float> obs(kBlockObsNumel);
    render_block_obs(demo.states[s], noise, obs.data());

    Shape batched = cfg.obs_shape;
    batched.insert(batched.begin(), 1);
    Tensor<T> ot(batched);
    for (size_t i = 0; i < obs.size(); ++i) ot.data[i] = static_cast<T>(obs[i]);
    float enc[kBlockActionDim];
    encode_block_action(demo.actions[s], enc);
    Tensor<T> at({1, kBlockActionDim});
    for (int64_t i = 0; i < kBlockActionDim; ++i) at.data[i] = static_cast<T>(enc[i]);

    Tape<T> tape;
    Var<T> z = model.encode(tape, tape.constant(ot.shape, ot.data));
    Var<T> alpha = model.attention_alpha(tape, z, tape.constant(at.shape, at.data));

    AttentionRow row;
    row.step = static_cast<int64_t>(s);
    row.primitive = demo.actions[s].primitive;
    row.alpha.assign(alpha.value().begin(), alpha.value().end());
    row.argmax = 0;
    for (int64_t k = 1; k < cfg.slots; ++k)
      if (row.alpha[k] > row.alpha[row.argmax]) row.argmax = k;
    row.manipulated = row.primitive == BlockPrimitive::kPick ? demo.states[s + 1].hand
                                                             : demo.states[s].hand;
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string attention_report_csv(const std::vector<AttentionRow>& rows, int64_t slots) {
  std::string out = "step,primitive,manipulated,argmax";
  for (int64_t k = 0; k < slots; ++k) out += ",alpha_" + std::to_string(k);
  out += "\n";
  char buf[64];
  for (const AttentionRow& row : rows) {
    out += std::to_string(row.step);
    out += row.primitive == BlockPrimitive::kPick ? ",pick" : ",place";
    out += "," + std::to_string(row.manipulated) + "," + std::to_string(row.argmax);
    for (double a : row.alpha) {
      std::snprintf(buf, sizeof(buf), ",%.9g", a);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

// Fraction of pick steps whose attention argmax is the picked block.
template <typename M, typename T = typename M::scalar_type>
double attention_pick_accuracy(M& model, const std::vector<BlockDemo>& demos,
                               uint64_t noise_seed) {
  int64_t picks = 0, correct = 0;
  for (size_t d = 0; d < demos.size(); ++d) {
    const std::vector<AttentionRow> rows =
        attention_rows(model, demos[d], derive_seed(noise_seed, {static_cast<uint64_t>(d)}));
    for (const AttentionRow& row : rows) {
      if (row.primitive != BlockPrimitive::kPick) continue;
      ++picks;
      if (row.argmax == row.manipulated) ++correct;
    }
  }
  if (picks == 0) throw std::invalid_argument("attention accuracy: no pick steps in demos");
  return static_cast<double>(correct) / static_cast<double>(picks);
}

}  // namespace actionbind
