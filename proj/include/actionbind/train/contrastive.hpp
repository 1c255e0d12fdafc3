#pragma once

// Contrastive transition loss. Per sample:
//   positive  sum_k ||znext_k - pred_k||^2
//   negative  max(0, gamma - sum_k ||z_k - ztilde_k||^2)
// where ztilde is the encoding of another sample in the batch, drawn by a
// single-cycle permutation so no sample is its own negative. The reported
// parts are batch means; total = positive + negative.

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "actionbind/core/rng.hpp"
#include "actionbind/core/tape.hpp"

namespace actionbind {

// Sattolo shuffle: a uniform random cyclic permutation of [0, n). Guarantees
// perm[i] != i for every i.
inline std::vector<int64_t> sattolo_cycle(int64_t n, Rng& rng) {
  if (n < 2)
    throw std::invalid_argument("negative sampling needs a batch of at least 2 samples");
  std::vector<int64_t> p(n);
  for (int64_t i = 0; i < n; ++i) p[i] = i;
  for (int64_t i = n - 1; i > 0; --i) {
    const int64_t j = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(i)));
    std::swap(p[i], p[j]);
  }
  return p;
}

template <typename T>
struct LossParts {
  Var<T> total, positive, negative;
};

namespace detail {

// [B,K,D] pairwise squared distance per row -> [B]
template <typename T>
Var<T> row_sq_dist(Tape<T>& tape, Var<T> a, Var<T> b) {
  const Shape& s = a.shape();
  return tape.squared_norm(tape.reshape(tape.sub(a, b), {s[0], s[1] * s[2]}));
}

template <typename T>
Var<T> hinge_from_distance(Tape<T>& tape, Var<T> dist, T gamma) {
  Var<T> g = tape.constant({1}, std::vector<T>{gamma});
  return tape.hinge(tape.sub(g, dist));
}

}  // namespace detail

template <typename T>
LossParts<T> contrastive_loss(Tape<T>& tape, Var<T> z, Var<T> pred, Var<T> znext,
                              const std::vector<int64_t>& neg_perm, T gamma) {
  Var<T> pos = tape.mean(detail::row_sq_dist(tape, znext, pred), 0);
  Var<T> neg_dist = detail::row_sq_dist(tape, z, tape.take_rows(z, neg_perm));
  Var<T> neg = tape.mean(detail::hinge_from_distance(tape, neg_dist, gamma), 0);
  return {tape.add(pos, neg), pos, neg};
}

// Hard-attention training loss: the positive term is the exact expectation
// over the selected slot, sum_m alpha_m * positive(candidate m). Candidate m
// is the prediction with the action padded into slot m. The negative term
// does not depend on the action and enters once.
template <typename T>
LossParts<T> contrastive_loss_hard(Tape<T>& tape, Var<T> z, const std::vector<Var<T>>& candidates,
                                   Var<T> alpha, Var<T> znext,
                                   const std::vector<int64_t>& neg_perm, T gamma) {
  const int64_t b = z.shape()[0], k = z.shape()[1];
  if (static_cast<int64_t>(candidates.size()) != k)
    throw std::invalid_argument("hard loss: need one candidate prediction per slot");
  Var<T> expected = tape.zeros({b});
  for (int64_t m = 0; m < k; ++m) {
    Var<T> pos_m = detail::row_sq_dist(tape, znext, candidates[m]);
    Var<T> am = tape.reshape(tape.slice(alpha, 1, m, 1), {b});
    expected = tape.add(expected, tape.mul(am, pos_m));
  }
  Var<T> pos = tape.mean(expected, 0);
  Var<T> neg_dist = detail::row_sq_dist(tape, z, tape.take_rows(z, neg_perm));
  Var<T> neg = tape.mean(detail::hinge_from_distance(tape, neg_dist, gamma), 0);
  return {tape.add(pos, neg), pos, neg};
}

}  // namespace actionbind
