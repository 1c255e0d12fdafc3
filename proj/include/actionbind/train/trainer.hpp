#pragma once

// Minibatch trainer for world models. Deterministic given (dataset, model
// parameters, seed): epoch shuffles and negative-sample permutations come
// from a seed-derived stream, partial trailing batches are dropped, and
// Adam updates run in a fixed order.
//
// Divergence policy: if any forward value, gradient, or loss goes non-finite,
// the store is rolled back to the last completed epoch and a runtime_error
// with the failing epoch/batch is thrown.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "actionbind/core/adam.hpp"
#include "actionbind/io/dataset.hpp"
#include "actionbind/model/world_model.hpp"
#include "actionbind/train/contrastive.hpp"

namespace actionbind {

struct TrainConfig {
  int64_t epochs = 100;
  int64_t batch = 256;
  double lr = 5e-4;
  double gamma = 1.0;
  uint64_t seed = 0;

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("train config: epochs must be positive");
    if (batch < 2) throw std::invalid_argument("train config: batch must be at least 2");
    if (!(lr > 0) || !(gamma >= 0))
      throw std::invalid_argument("train config: lr must be positive and gamma non-negative");
  }
};

struct TrainRecord {
  int64_t epoch = 0;
  double loss = 0, positive = 0, negative = 0;
  double seconds = 0;  // wall time since training started
};

struct TrainResult {
  std::vector<TrainRecord> curve;
  int64_t steps = 0;
};

namespace detail {
constexpr uint64_t kEpochStream = 0x65706f6368ull;  // "epoch"
}

inline TrainResult train_world_model(WorldModel<float>& model, ParamStore<float>& store,
                                     const Dataset& data, const TrainConfig& tc) {
  tc.validate();
  const int64_t n = data.records();
  if (n < 2)
    throw std::invalid_argument("training needs at least 2 records for negative sampling");
  const int64_t batch = std::min<int64_t>(tc.batch, n);
  const int64_t batches = n / batch;  // trailing partial batch is dropped

  const ModelConfig& cfg = model.config();
  Adam<float> opt(store, static_cast<float>(tc.lr));
  const float gamma = static_cast<float>(tc.gamma);

  std::vector<int64_t> order(n);
  for (int64_t i = 0; i < n; ++i) order[i] = i;

  std::vector<std::vector<float>> last_good;
  for (Parameter<float>* p : store.all()) last_good.push_back(p->value.data);
  auto rollback = [&] {
    size_t i = 0;
    for (Parameter<float>* p : store.all()) p->value.data = last_good[i++];
  };

  TrainResult result;
  const auto t0 = std::chrono::steady_clock::now();
  for (int64_t epoch = 0; epoch < tc.epochs; ++epoch) {
    Rng erng(derive_seed(tc.seed, {detail::kEpochStream, static_cast<uint64_t>(epoch)}));
    erng.shuffle(order);

    double sum_loss = 0, sum_pos = 0, sum_neg = 0;
    for (int64_t b = 0; b < batches; ++b) {
      const std::vector<int64_t> recs(order.begin() + b * batch,
                                      order.begin() + (b + 1) * batch);
      try {
        Tape<float> tape;
        const Tensor<float> obs = batch_obs<float>(data, recs, false);
        const Tensor<float> nxt = batch_obs<float>(data, recs, true);
        const Tensor<float> act = batch_actions<float>(data, recs);
        Var<float> z = model.encode(tape, tape.constant(obs.shape, obs.data));
        Var<float> znext = model.encode(tape, tape.constant(nxt.shape, nxt.data));
        Var<float> a = tape.constant(act.shape, act.data);
        const std::vector<int64_t> perm = sattolo_cycle(batch, erng);

        LossParts<float> parts = [&] {
          if (cfg.attention == AttentionMode::kHard) {
            Var<float> alpha = model.attention_alpha(tape, z, a);
            std::vector<Var<float>> cands;
            for (int64_t m = 0; m < cfg.slots; ++m)
              cands.push_back(model.transition(tape, z, model.slot_actions_pad(tape, a, m)));
            return contrastive_loss_hard(tape, z, cands, alpha, znext, perm, gamma);
          }
          Var<float> pred = model.transition(tape, z, model.route_actions(tape, z, a));
          return contrastive_loss(tape, z, pred, znext, perm, gamma);
        }();

        tape.backward(parts.total);
        sum_loss += parts.total.value()[0];
        sum_pos += parts.positive.value()[0];
        sum_neg += parts.negative.value()[0];
        opt.step();
        ++result.steps;
      } catch (const std::runtime_error& e) {
        rollback();
        throw std::runtime_error(
            "training diverged at epoch " + std::to_string(epoch) + ", batch " +
            std::to_string(b) + ": " + e.what() +
            "; parameters rolled back to the last completed epoch");
      }
    }

    size_t i = 0;
    for (Parameter<float>* p : store.all()) last_good[i++] = p->value.data;
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.curve.push_back({epoch, sum_loss / static_cast<double>(batches),
                            sum_pos / static_cast<double>(batches),
                            sum_neg / static_cast<double>(batches), secs});
  }
  return result;
}

inline std::string train_curve_csv(const std::vector<TrainRecord>& curve) {
  std::string out = "epoch,loss,positive,negative,seconds\n";
  char line[160];
  for (const TrainRecord& r : curve) {
    std::snprintf(line, sizeof(line), "%lld,%.9g,%.9g,%.9g,%.3f\n",
                  static_cast<long long>(r.epoch), r.loss, r.positive, r.negative, r.seconds);
    out += line;
  }
  return out;
}

}  // namespace actionbind
