#pragma once

// Scripted 1-D pick-and-place block world: six cubes on a line, continuous
// pick/place actions, noisy per-block factored observations, expert
// demonstrations for five stacking tasks, and goal-breaking trajectory
// perturbations.
//
// Geometry. Blocks occupy columns. A column is a set of blocks sharing an
// anchor x; stacking jitter moves members at most 2*sigma_stack from the
// anchor, so columns whose anchors are >= 0.12 + margin apart can never merge
// (contact_radius 0.06). Instances scatter all six blocks in one half of the
// line and build goal columns in the other, so every scripted pick and place
// resolves unambiguously.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "actionbind/core/rng.hpp"
#include "actionbind/io/dataset.hpp"

namespace actionbind {

constexpr int kBlocks = 6;
constexpr double kContactRadius = 0.06;
constexpr double kBlockSize = 0.1;
constexpr double kSigmaStack = 0.005;
constexpr double kSigmaObs = 0.01;
// jitter is clamped to anchor +- 2*sigma_stack; the epsilon absorbs the
// one-ulp overshoot of clamping against a rounded bound
constexpr double kGoalTolX = 2 * kSigmaStack + 1e-9;
constexpr int kBlockFeat = 5;  // x, height*block_size, in-hand, 2 distractors
constexpr int64_t kBlockObsNumel = kBlocks * kBlockFeat;
constexpr int kBlockActionDim = 3;  // pick flag, place flag, x
constexpr int kBlockTruthDim = kBlocks * 2;

struct Block {
  double x = 0.0;
  int h = 0;
  double anchor = 0.0;  // column identity; x stays within anchor +- 2*sigma_stack
};

struct BlockState {
  std::array<Block, kBlocks> blocks;
  int hand = -1;  // block index in hand, or -1

  bool in_hand(int k) const { return hand == k; }
};

enum class BlockPrimitive : uint8_t { kPick, kPlace };

struct BlockAction {
  BlockPrimitive primitive = BlockPrimitive::kPick;
  double x = 0.0;
};

inline void encode_block_action(const BlockAction& a, float* out) {
  out[0] = a.primitive == BlockPrimitive::kPick ? 1.0f : 0.0f;
  out[1] = a.primitive == BlockPrimitive::kPlace ? 1.0f : 0.0f;
  out[2] = static_cast<float>(a.x);
}

inline BlockAction decode_block_action(const float* v) {
  const bool pick = v[0] > 0.5f, place = v[1] > 0.5f;
  if (pick == place) throw std::invalid_argument("block action: exactly one primitive flag required");
  return {pick ? BlockPrimitive::kPick : BlockPrimitive::kPlace, static_cast<double>(v[2])};
}

inline void validate_block_state(const BlockState& s) {
  if (s.hand < -1 || s.hand >= kBlocks)
    throw std::invalid_argument("block state: hand index out of range");
  for (int k = 0; k < kBlocks; ++k) {
    const Block& b = s.blocks[k];
    if (!(b.x >= 0.0 && b.x <= 1.0) || b.h < 0)
      throw std::invalid_argument("block state: block " + std::to_string(k) +
                                  " outside the board");
    if (s.in_hand(k) && b.h != 0)
      throw std::invalid_argument("block state: held block must have height 0");
  }
  // proximity graph: blocks closer than the contact radius form one column
  // and must hold distinct, contiguous heights starting at 0
  std::array<int, kBlocks> comp;
  comp.fill(-1);
  int ncomp = 0;
  for (int k = 0; k < kBlocks; ++k) {
    if (s.in_hand(k) || comp[k] >= 0) continue;
    comp[k] = ncomp;
    // breadth-first over the proximity relation
    std::vector<int> frontier{k};
    while (!frontier.empty()) {
      const int a = frontier.back();
      frontier.pop_back();
      for (int b = 0; b < kBlocks; ++b) {
        if (s.in_hand(b) || comp[b] >= 0) continue;
        if (std::abs(s.blocks[a].x - s.blocks[b].x) < kContactRadius) {
          comp[b] = ncomp;
          frontier.push_back(b);
        }
      }
    }
    ++ncomp;
  }
  for (int c = 0; c < ncomp; ++c) {
    std::vector<int> heights;
    for (int k = 0; k < kBlocks; ++k)
      if (!s.in_hand(k) && comp[k] == c) heights.push_back(s.blocks[k].h);
    std::sort(heights.begin(), heights.end());
    for (size_t i = 0; i < heights.size(); ++i)
      if (heights[i] != static_cast<int>(i))
        throw std::invalid_argument("block state: column heights not contiguous from 0");
  }
}

namespace detail {

// k is a local top when no same-column block sits above it.
inline bool local_top(const BlockState& s, int k) {
  for (int j = 0; j < kBlocks; ++j) {
    if (j == k || s.in_hand(j)) continue;
    if (s.blocks[j].anchor == s.blocks[k].anchor && s.blocks[j].h > s.blocks[k].h) return false;
  }
  return true;
}

}  // namespace detail

// Applies one primitive. rng supplies the stacking jitter; all no-op cases
// (nothing in reach, hand empty/full, ambiguous gray zone between columns)
// leave the state unchanged.
inline BlockState block_step(const BlockState& s, const BlockAction& a, Rng& rng) {
  validate_block_state(s);
  const double ax = std::clamp(a.x, 0.0, 1.0);
  BlockState out = s;
  if (a.primitive == BlockPrimitive::kPick) {
    if (s.hand >= 0) return out;
    int best = -1;
    for (int k = 0; k < kBlocks; ++k) {
      if (s.in_hand(k) || std::abs(s.blocks[k].x - ax) >= kContactRadius) continue;
      if (!detail::local_top(s, k)) continue;  // buried blocks cannot be grasped
      if (best < 0) {
        best = k;
        continue;
      }
      const double dk = std::abs(s.blocks[k].x - ax), db = std::abs(s.blocks[best].x - ax);
      if (s.blocks[k].h > s.blocks[best].h ||
          (s.blocks[k].h == s.blocks[best].h && dk < db))
        best = k;
    }
    if (best >= 0) {
      out.hand = best;
      out.blocks[best].h = 0;
      out.blocks[best].anchor = out.blocks[best].x;
    }
    return out;
  }

  // place
  if (s.hand < 0) return out;
  const int held = s.hand;
  double dmin = 2.0;
  for (int k = 0; k < kBlocks; ++k)
    if (!s.in_hand(k)) dmin = std::min(dmin, std::abs(s.blocks[k].x - ax));
  if (dmin >= 2 * kContactRadius) {
    // clear ground: start a new column at the commanded x
    out.blocks[held] = {ax, 0, ax};
    out.hand = -1;
    return out;
  }
  if (dmin >= kContactRadius) return out;  // between columns: ambiguous, drop refused

  // stack on the column of the tallest (then nearest, then lowest-index)
  // block in reach
  int target = -1;
  for (int k = 0; k < kBlocks; ++k) {
    if (s.in_hand(k) || std::abs(s.blocks[k].x - ax) >= kContactRadius) continue;
    if (target < 0) {
      target = k;
      continue;
    }
    const double dk = std::abs(s.blocks[k].x - ax), dt = std::abs(s.blocks[target].x - ax);
    if (s.blocks[k].h > s.blocks[target].h ||
        (s.blocks[k].h == s.blocks[target].h && dk < dt))
      target = k;
  }
  const double anchor = s.blocks[target].anchor;
  int top = -1;
  for (int k = 0; k < kBlocks; ++k) {
    if (s.in_hand(k) || s.blocks[k].anchor != anchor) continue;
    top = std::max(top, s.blocks[k].h);
    // settling the new block nudges everything under it
    const double jitter = rng.normal(0.0, kSigmaStack);
    double nx = out.blocks[k].x + jitter;
    nx = std::clamp(nx, anchor - 2 * kSigmaStack, anchor + 2 * kSigmaStack);
    out.blocks[k].x = std::clamp(nx, 0.0, 1.0);
  }
  out.blocks[held] = {std::clamp(anchor, 0.0, 1.0), top + 1, anchor};
  out.hand = -1;
  return out;
}

// Noisy factored rendering: per block (x, h*block_size, in-hand) + Gaussian
// noise, then two uniform distractor dims. One rng draw order, fixed.
inline void render_block_obs(const BlockState& s, Rng& noise, float* out) {
  for (int k = 0; k < kBlocks; ++k) {
    float* f = out + k * kBlockFeat;
    f[0] = static_cast<float>(s.blocks[k].x + noise.normal(0.0, kSigmaObs));
    f[1] = static_cast<float>(s.blocks[k].h * kBlockSize + noise.normal(0.0, kSigmaObs));
    f[2] = static_cast<float>((s.in_hand(k) ? 1.0 : 0.0) + noise.normal(0.0, kSigmaObs));
    f[3] = static_cast<float>(noise.uniform());
    f[4] = static_cast<float>(noise.uniform());
  }
}

inline void block_truth(const BlockState& s, float* out) {
  for (int k = 0; k < kBlocks; ++k) {
    out[k * 2] = static_cast<float>(s.blocks[k].x);
    out[k * 2 + 1] = static_cast<float>(s.blocks[k].h * kBlockSize);
  }
}

enum class BlockTask : uint8_t { kTower4, kWall, kStairs, kTwoTowers3, kThreeTowers2 };

inline std::string to_string(BlockTask t) {
  switch (t) {
    case BlockTask::kTower4: return "tower4";
    case BlockTask::kWall: return "wall";
    case BlockTask::kStairs: return "stairs";
    case BlockTask::kTwoTowers3: return "two_towers3";
    case BlockTask::kThreeTowers2: return "three_towers2";
  }
  return "?";
}

inline BlockTask block_task_from_string(const std::string& s) {
  if (s == "tower4") return BlockTask::kTower4;
  if (s == "wall") return BlockTask::kWall;
  if (s == "stairs") return BlockTask::kStairs;
  if (s == "two_towers3") return BlockTask::kTwoTowers3;
  if (s == "three_towers2") return BlockTask::kThreeTowers2;
  throw std::invalid_argument("unknown block task: " + s);
}

inline const std::vector<BlockTask>& transfer_tasks() {
  static const std::vector<BlockTask> t{BlockTask::kWall, BlockTask::kStairs,
                                        BlockTask::kTwoTowers3, BlockTask::kThreeTowers2};
  return t;
}

inline std::vector<int> task_column_heights(BlockTask t) {
  switch (t) {
    case BlockTask::kTower4: return {4};
    case BlockTask::kWall: return {2, 2, 2};
    case BlockTask::kStairs: return {1, 2, 3};
    case BlockTask::kTwoTowers3: return {3, 3};
    case BlockTask::kThreeTowers2: return {2, 2, 2};
  }
  return {};
}

// One sampled task instance: initial scatter, goal column anchors, the expert
// plan, and the permutation-invariant goal targets (stay-put targets included
// for blocks the task leaves on the ground).
struct BlockInstance {
  BlockTask task = BlockTask::kTower4;
  uint64_t seed = 0;
  std::array<double, kBlocks> scatter{};
  std::vector<double> columns;
  std::vector<int> col_heights;
  std::vector<BlockAction> plan;
  std::vector<std::pair<double, int>> goal;  // (x, height) per target, 6 entries
};

namespace detail {

// n sorted points in [lo, hi] with pairwise gaps >= gap, uniform over the
// feasible region (order-statistics construction).
inline std::vector<double> spaced_points(Rng& rng, int n, double lo, double hi, double gap) {
  const double slack = (hi - lo) - gap * (n - 1);
  if (slack < 0) throw std::logic_error("spaced_points: infeasible spacing request");
  std::vector<double> u(n);
  for (auto& v : u) v = rng.uniform(0.0, slack);
  std::sort(u.begin(), u.end());
  for (int i = 0; i < n; ++i) u[i] = lo + i * gap + u[i];
  return u;
}

constexpr double kScatterGap = 0.081;       // > r + 4*sigma_stack: columns never merge
constexpr double kColumnGap = 0.14;         // > 2r + 4*sigma_stack: placements stay clean
constexpr uint64_t kInstanceStream = 0x696e7374ull;  // "inst"
constexpr uint64_t kJitterStream = 0x6a6974ull;      // "jit"
constexpr uint64_t kNoiseStream = 0x6e6f6973ull;     // "nois"

}  // namespace detail

inline BlockInstance make_block_instance(BlockTask task, uint64_t seed) {
  Rng rng(derive_seed(seed, {detail::kInstanceStream}));
  BlockInstance inst;
  inst.task = task;
  inst.seed = seed;
  inst.col_heights = task_column_heights(task);
  const int ncols = static_cast<int>(inst.col_heights.size());

  // scatter half [0.02, 0.445], build half [0.58, 0.98]; mirrored half the time
  auto scatter_pts = detail::spaced_points(rng, kBlocks, 0.02, 0.445, detail::kScatterGap);
  if (task == BlockTask::kWall) {
    // a wall is a rigid row of columns at minimal spacing
    const double base = rng.uniform(0.58, 0.98 - detail::kColumnGap * (ncols - 1));
    for (int c = 0; c < ncols; ++c) inst.columns.push_back(base + c * detail::kColumnGap);
  } else {
    inst.columns = detail::spaced_points(rng, ncols, 0.58, 0.98, detail::kColumnGap);
  }
  const bool mirror = rng.uniform() < 0.5;
  if (mirror) {
    for (auto& x : scatter_pts) x = 1.0 - x;
    for (auto& x : inst.columns) x = 1.0 - x;
  }

  // random block-to-point assignment so block index never encodes position
  std::vector<int64_t> perm(kBlocks);
  for (int i = 0; i < kBlocks; ++i) perm[i] = i;
  rng.shuffle(perm);
  for (int i = 0; i < kBlocks; ++i) inst.scatter[i] = scatter_pts[perm[i]];

  // plan: blocks 0..used-1 feed the columns in order, level by level
  int next = 0;
  for (int c = 0; c < ncols; ++c)
    for (int level = 0; level < inst.col_heights[c]; ++level) {
      inst.plan.push_back({BlockPrimitive::kPick, inst.scatter[next]});
      inst.plan.push_back({BlockPrimitive::kPlace, inst.columns[c]});
      inst.goal.emplace_back(inst.columns[c], level);
      ++next;
    }
  for (int k = next; k < kBlocks; ++k) inst.goal.emplace_back(inst.scatter[k], 0);
  return inst;
}

inline BlockState initial_state(const BlockInstance& inst) {
  BlockState s;
  for (int k = 0; k < kBlocks; ++k) s.blocks[k] = {inst.scatter[k], 0, inst.scatter[k]};
  return s;
}

// Noiseless state satisfying the instance goal exactly.
inline BlockState goal_state(const BlockInstance& inst) {
  BlockState s;
  int next = 0;
  for (size_t c = 0; c < inst.columns.size(); ++c)
    for (int level = 0; level < inst.col_heights[c]; ++level)
      s.blocks[next++] = {inst.columns[c], level, inst.columns[c]};
  for (int k = next; k < kBlocks; ++k) s.blocks[k] = {inst.scatter[k], 0, inst.scatter[k]};
  return s;
}

// Permutation-invariant goal test: some block-to-target bijection must match
// every target's height exactly and x within 2*sigma_stack, with the hand
// empty.
inline bool goal_satisfied(const BlockState& s, const BlockInstance& inst) {
  if (s.hand >= 0) return false;
  std::array<int, kBlocks> perm{0, 1, 2, 3, 4, 5};
  do {
    bool ok = true;
    for (int k = 0; k < kBlocks && ok; ++k) {
      const auto& [gx, gh] = inst.goal[perm[k]];
      ok = s.blocks[k].h == gh && std::abs(s.blocks[k].x - gx) <= kGoalTolX;
    }
    if (ok) return true;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return false;
}

struct BlockDemo {
  BlockInstance instance;
  std::vector<BlockState> states;  // actions.size() + 1 entries
  std::vector<BlockAction> actions;
};

inline BlockDemo replay(const BlockInstance& inst, const std::vector<BlockAction>& actions,
                        uint64_t jitter_seed) {
  BlockDemo demo;
  demo.instance = inst;
  demo.actions = actions;
  demo.states.push_back(initial_state(inst));
  Rng jitter(jitter_seed);
  for (const auto& a : actions) demo.states.push_back(block_step(demo.states.back(), a, jitter));
  return demo;
}

inline BlockDemo expert_demo(BlockTask task, uint64_t seed) {
  const BlockInstance inst = make_block_instance(task, seed);
  return replay(inst, inst.plan, derive_seed(seed, {detail::kJitterStream}));
}

// Builds a goal-breaking variant of a demo. Modes: displace one place target
// far from its column, cross-swap a pick x with a place x, or drop one
// pick/place pair. Replays and rejects until the goal actually fails and the
// action sequence differs from the expert's.
inline BlockDemo perturb_trajectory(const BlockDemo& demo, Rng& rng) {
  const auto& plan = demo.actions;
  const int pairs = static_cast<int>(plan.size()) / 2;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    std::vector<BlockAction> actions = plan;
    const uint64_t mode = rng.uniform_int(3);
    if (mode == 0) {
      const int i = static_cast<int>(rng.uniform_int(pairs)) * 2 + 1;
      double nx;
      do {
        nx = rng.uniform(0.01, 0.99);
      } while (std::abs(nx - plan[i].x) <= 3 * kContactRadius);
      actions[i].x = nx;
    } else if (mode == 1) {
      const int i = static_cast<int>(rng.uniform_int(pairs)) * 2;      // a pick
      const int j = static_cast<int>(rng.uniform_int(pairs)) * 2 + 1;  // a place
      std::swap(actions[i].x, actions[j].x);
    } else {
      const int p = static_cast<int>(rng.uniform_int(pairs)) * 2;
      actions.erase(actions.begin() + p, actions.begin() + p + 2);
    }
    if (actions == plan) continue;
    BlockDemo out = replay(demo.instance, actions, rng.next_u64());
    if (!goal_satisfied(out.states.back(), demo.instance)) return out;
  }
  throw std::runtime_error("perturb_trajectory: could not break the goal in 1000 attempts");
}

inline bool operator==(const BlockAction& a, const BlockAction& b) {
  return a.primitive == b.primitive && a.x == b.x;
}

// n perturbed demos with pairwise-distinct action sequences (the drop and
// swap modes are discrete and can repeat across calls).
inline std::vector<BlockDemo> distinct_perturbations(const BlockDemo& demo, int n, Rng& rng) {
  std::vector<BlockDemo> out;
  for (int attempt = 0; attempt < 200 * n && static_cast<int>(out.size()) < n; ++attempt) {
    BlockDemo cand = perturb_trajectory(demo, rng);
    bool dup = false;
    for (const auto& prev : out) dup = dup || prev.actions == cand.actions;
    if (!dup) out.push_back(std::move(cand));
  }
  if (static_cast<int>(out.size()) < n)
    throw std::runtime_error("distinct_perturbations: not enough distinct failures");
  return out;
}

// Expert-demonstration dataset; every episode is a fresh instance of `task`.
inline Dataset generate_blocks_dataset(BlockTask task, int64_t episodes, uint64_t seed) {
  if (episodes < 1) throw std::invalid_argument("blocks dataset: need at least 1 episode");
  const std::vector<int> heights = task_column_heights(task);
  const int len = 2 * std::accumulate(heights.begin(), heights.end(), 0);
  Dataset d;
  d.header.environment = "blocks";
  d.header.episodes = episodes;
  d.header.episode_len = len;
  d.header.obs_shape = {kBlocks, kBlockFeat};
  d.header.action_dim = kBlockActionDim;
  d.header.seed = seed;
  d.header.truth_dim = kBlockTruthDim;
  d.header.kind = ObsKind::kFactoredF32;
  d.allocate();

  for (int64_t e = 0; e < episodes; ++e) {
    const uint64_t ep_seed = derive_seed(seed, {0x64656d6full /*"demo"*/, uint64_t(e)});
    const BlockDemo demo = expert_demo(task, ep_seed);
    Rng noise(derive_seed(ep_seed, {detail::kNoiseStream}));
    // each state rendered once; records share the rendering of shared states
    std::vector<float> obs((len + 1) * kBlockObsNumel);
    std::vector<float> truth((len + 1) * kBlockTruthDim);
    for (int t = 0; t <= len; ++t) {
      render_block_obs(demo.states[t], noise, obs.data() + t * kBlockObsNumel);
      block_truth(demo.states[t], truth.data() + t * kBlockTruthDim);
    }
    for (int t = 0; t < len; ++t) {
      const int64_t r = e * len + t;
      std::copy_n(obs.data() + t * kBlockObsNumel, kBlockObsNumel,
                  d.obs0_f32.data() + r * kBlockObsNumel);
      std::copy_n(obs.data() + (t + 1) * kBlockObsNumel, kBlockObsNumel,
                  d.obs1_f32.data() + r * kBlockObsNumel);
      encode_block_action(demo.actions[t], d.actions.data() + r * kBlockActionDim);
      std::copy_n(truth.data() + t * kBlockTruthDim, kBlockTruthDim,
                  d.truth0.data() + r * kBlockTruthDim);
      std::copy_n(truth.data() + (t + 1) * kBlockTruthDim, kBlockTruthDim,
                  d.truth1.data() + r * kBlockTruthDim);
    }
  }
  return d;
}

}  // namespace actionbind
