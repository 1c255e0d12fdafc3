#pragma once

// Slot diagnostics: mean absolute Pearson correlation between slot pairs, and
// a small position probe trained on frozen latents.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "actionbind/core/adam.hpp"
#include "actionbind/core/mlp.hpp"
#include "actionbind/core/rng.hpp"
#include "actionbind/core/tape.hpp"
#include "actionbind/core/tensor.hpp"
#include "actionbind/eval/ranking.hpp"
#include "actionbind/io/dataset.hpp"
#include "actionbind/model/world_model.hpp"

namespace actionbind {

// Mean over unordered slot pairs of |Pearson r| between the two slots' values,
// with every (state, dimension) entry as one sample. A slot whose series is
// constant contributes 0 for all of its pairs. latents shape: [N, K, D].
template <typename T>
double slot_correlation(const Tensor<T>& latents) {
  if (latents.shape.size() != 3)
    throw std::invalid_argument("slot_correlation expects latents shaped [states, slots, dims]");
  const int64_t n = latents.shape[0], k = latents.shape[1], d = latents.shape[2];
  if (d < 2) throw std::invalid_argument("slot_correlation needs slot dimension >= 2");
  if (n < 1) throw std::invalid_argument("slot_correlation needs at least one state");
  if (k < 2) throw std::invalid_argument("slot_correlation needs at least two slots");

  const int64_t samples = n * d;
  auto at = [&](int64_t slot, int64_t s) {
    const int64_t state = s / d, dim = s % d;
    return static_cast<double>(latents.data[(state * k + slot) * d + dim]);
  };

  std::vector<double> mean(k, 0.0);
  std::vector<bool> constant(k, true);
  for (int64_t slot = 0; slot < k; ++slot) {
    const double first = at(slot, 0);
    double acc = 0;
    for (int64_t s = 0; s < samples; ++s) {
      const double v = at(slot, s);
      acc += v;
      if (v != first) constant[slot] = false;
    }
    mean[slot] = acc / static_cast<double>(samples);
  }

  double total = 0;
  int64_t pairs = 0;
  for (int64_t i = 0; i < k; ++i) {
    for (int64_t j = i + 1; j < k; ++j) {
      ++pairs;
      if (constant[i] || constant[j]) continue;
      double cov = 0, vi = 0, vj = 0;
      for (int64_t s = 0; s < samples; ++s) {
        const double a = at(i, s) - mean[i];
        const double b = at(j, s) - mean[j];
        cov += a * b;
        vi += a * a;
        vj += b * b;
      }
      if (vi == 0.0 || vj == 0.0) continue;
      total += std::abs(cov / std::sqrt(vi * vj));
    }
  }
  return total / static_cast<double>(pairs);
}

template <typename M, typename T = typename M::scalar_type>
double slot_correlation_eval(M& model, const Dataset& data, int64_t chunk = 256) {
  const Tensor<T> states = encode_dataset_states(model, data, chunk);
  const int64_t n = states.shape[0] * states.shape[1];
  return slot_correlation(Tensor<T>({n, states.shape[2], states.shape[3]}, states.data));
}

struct ProbeConfig {
  int64_t hidden = 64;
  int64_t epochs = 200;
  int64_t batch = 256;
  double lr = 1e-3;
  double eval_fraction = 0.2;
  uint64_t seed = 0;
};

namespace detail {
constexpr uint64_t kProbeSplitStream = 0x70726f62;
constexpr uint64_t kProbeEpochStream = 0x70657063;
}  // namespace detail

// Trains a fresh MLP from per-slot latents to per-slot targets on a
// deterministic 80/20 state split (all slots of a state stay on one side) and
// returns the held-out RMSE over samples and target dimensions.
template <typename T>
double probe_rmse(const Tensor<T>& latents, const Tensor<T>& targets, const ProbeConfig& pc) {
  if (latents.shape.size() != 3 || targets.shape.size() != 3)
    throw std::invalid_argument("probe expects [states, slots, dims] latents and targets");
  if (latents.shape[0] != targets.shape[0] || latents.shape[1] != targets.shape[1])
    throw std::invalid_argument("probe latents and targets disagree on states or slots");
  const int64_t n = latents.shape[0], k = latents.shape[1];
  const int64_t d = latents.shape[2], p = targets.shape[2];
  if (!(pc.eval_fraction > 0.0) || !(pc.eval_fraction < 1.0))
    throw std::invalid_argument("probe eval fraction must lie in (0, 1)");
  const int64_t n_eval = std::max<int64_t>(1, static_cast<int64_t>(
                                                  std::floor(n * pc.eval_fraction)));
  const int64_t n_train = n - n_eval;
  if (n_train < 1) throw std::invalid_argument("probe needs at least one training state");

  std::vector<int64_t> order(n);
  for (int64_t i = 0; i < n; ++i) order[i] = i;
  Rng split_rng(derive_seed(pc.seed, {detail::kProbeSplitStream}));
  split_rng.shuffle(order);

  auto gather = [&](int64_t lo, int64_t hi, const Tensor<T>& src, int64_t width) {
    Tensor<T> out({(hi - lo) * k, width});
    for (int64_t i = lo; i < hi; ++i)
      std::copy(src.data.begin() + order[i] * k * width,
                src.data.begin() + (order[i] + 1) * k * width,
                out.data.begin() + (i - lo) * k * width);
    return out;
  };
  const Tensor<T> x_train = gather(0, n_train, latents, d);
  const Tensor<T> y_train = gather(0, n_train, targets, p);
  const Tensor<T> x_eval = gather(n_train, n, latents, d);
  const Tensor<T> y_eval = gather(n_train, n, targets, p);

  ParamStore<T> store(derive_seed(pc.seed, {0x70726d73}));
  Mlp<T> probe(store, "probe", d, {pc.hidden}, p);
  Adam<T> opt(store, static_cast<T>(pc.lr));

  const int64_t rows = n_train * k;
  const int64_t batch = std::min<int64_t>(pc.batch, rows);
  const int64_t batches = rows / batch;
  std::vector<int64_t> rorder(rows);
  for (int64_t i = 0; i < rows; ++i) rorder[i] = i;
  for (int64_t epoch = 0; epoch < pc.epochs; ++epoch) {
    Rng erng(derive_seed(pc.seed, {detail::kProbeEpochStream, static_cast<uint64_t>(epoch)}));
    erng.shuffle(rorder);
    for (int64_t b = 0; b < batches; ++b) {
      Tensor<T> xb({batch, d}), yb({batch, p});
      for (int64_t i = 0; i < batch; ++i) {
        const int64_t r = rorder[b * batch + i];
        std::copy(x_train.data.begin() + r * d, x_train.data.begin() + (r + 1) * d,
                  xb.data.begin() + i * d);
        std::copy(y_train.data.begin() + r * p, y_train.data.begin() + (r + 1) * p,
                  yb.data.begin() + i * p);
      }
      Tape<T> tape;
      Var<T> pred = probe(tape, tape.constant(xb.shape, xb.data));
      Var<T> diff = tape.sub(pred, tape.constant(yb.shape, yb.data));
      Var<T> loss = tape.mean(tape.squared_norm(tape.reshape(diff, {batch, p})), 0);
      tape.backward(loss);
      opt.step();
    }
  }

  Tape<T> tape;
  Var<T> pred = probe(tape, tape.constant(x_eval.shape, x_eval.data));
  double acc = 0;
  for (size_t i = 0; i < y_eval.data.size(); ++i) {
    const double e = static_cast<double>(pred.value()[i]) - static_cast<double>(y_eval.data[i]);
    acc += e * e;
  }
  return std::sqrt(acc / static_cast<double>(y_eval.data.size()));
}

// Probe over a block demonstration dataset: latents from the frozen model,
// targets from the recorded per-block (x, height * block size) ground truth.
template <typename M, typename T = typename M::scalar_type>
double position_probe(M& model, const Dataset& data, const ProbeConfig& pc,
                      int64_t chunk = 256) {
  const DatasetHeader& h = data.header;
  const int64_t k = model.config().slots;
  if (h.truth_dim != 2 * k || h.kind != ObsKind::kFactoredF32)
    throw std::invalid_argument(
        "position probe is defined for block datasets with per-block ground truth");

  const Tensor<T> states = encode_dataset_states(model, data, chunk);
  const int64_t per_ep = h.episode_len + 1;
  const int64_t n = h.episodes * per_ep;
  Tensor<T> latents({n, k, model.config().slot_dim}, states.data);

  Tensor<T> targets({n, k, 2});
  for (int64_t ep = 0; ep < h.episodes; ++ep) {
    for (int64_t t = 0; t < per_ep; ++t) {
      const bool last = t == h.episode_len;
      const int64_t rec = ep * h.episode_len + (last ? h.episode_len - 1 : t);
      const float* truth = (last ? data.truth1.data() : data.truth0.data()) + rec * h.truth_dim;
      for (int64_t i = 0; i < 2 * k; ++i)
        targets.data[(ep * per_ep + t) * 2 * k + i] = static_cast<T>(truth[i]);
    }
  }
  return probe_rmse(latents, targets, pc);
}

}  // namespace actionbind
