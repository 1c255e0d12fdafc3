#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "actionbind/env/grid.hpp"
#include "actionbind/model/world_model.hpp"
#include "actionbind/train/trainer.hpp"
#include "support/gradcheck.hpp"

using namespace actionbind;
using actionbind::testing::sample_uniform;

TEST_CASE("contrastive loss matches hand-computed values") {
  // B=2, K=2, D=1
  Tape<double> tape;
  Var<double> z = tape.input({2, 2, 1}, std::vector<double>{0, 1, 2, 3});
  Var<double> znext = tape.input({2, 2, 1}, std::vector<double>{1, 1, 1, 1});
  Var<double> pred = tape.input({2, 2, 1}, std::vector<double>{0.5, 1.5, 0, 1});
  const std::vector<int64_t> perm{1, 0};

  SECTION("negative pairs outside the margin contribute nothing") {
    // pos: b0 (0.5^2 + 0.5^2) = 0.5, b1 (1 + 0) = 1 -> mean 0.75
    // neg distance: both rows (2^2 + 2^2) = 8 >= gamma=1 -> hinge 0
    const LossParts<double> parts = contrastive_loss(tape, z, pred, znext, perm, 1.0);
    REQUIRE(parts.positive.value()[0] == Catch::Approx(0.75).epsilon(1e-12));
    REQUIRE(parts.negative.value()[0] == 0.0);
    REQUIRE(parts.total.value()[0] == Catch::Approx(0.75).epsilon(1e-12));
  }

  SECTION("the margin activates when negatives are too close") {
    const LossParts<double> parts = contrastive_loss(tape, z, pred, znext, perm, 20.0);
    REQUIRE(parts.negative.value()[0] == Catch::Approx(12.0).epsilon(1e-12));
    REQUIRE(parts.total.value()[0] == Catch::Approx(12.75).epsilon(1e-12));
  }

  SECTION("hinge boundary is exactly zero at distance == gamma") {
    const LossParts<double> parts = contrastive_loss(tape, z, pred, znext, perm, 8.0);
    REQUIRE(parts.negative.value()[0] == 0.0);
    const LossParts<double> just = contrastive_loss(tape, z, pred, znext, perm, 8.5);
    REQUIRE(just.negative.value()[0] == Catch::Approx(0.5).epsilon(1e-12));
  }
}

TEST_CASE("loss parts always satisfy total = positive + negative") {
  Rng rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    const int64_t b = 3 + static_cast<int64_t>(rng.uniform_int(4));
    Tape<double> tape;
    const Tensor<double> zt = sample_uniform({b, 3, 2}, rng);
    const Tensor<double> pt = sample_uniform({b, 3, 2}, rng);
    const Tensor<double> nt = sample_uniform({b, 3, 2}, rng);
    Var<double> z = tape.input(zt.shape, zt.data);
    Var<double> pred = tape.input(pt.shape, pt.data);
    Var<double> znext = tape.input(nt.shape, nt.data);
    const std::vector<int64_t> perm = sattolo_cycle(b, rng);
    const LossParts<double> parts = contrastive_loss(tape, z, pred, znext, perm, 2.0);
    REQUIRE(parts.total.value()[0] ==
            Catch::Approx(parts.positive.value()[0] + parts.negative.value()[0]).epsilon(1e-12));
    REQUIRE(parts.positive.value()[0] >= 0.0);
    REQUIRE(parts.negative.value()[0] >= 0.0);
  }
}

TEST_CASE("hard loss equals the explicit enumeration over slot choices") {
  Rng rng(42);
  const int64_t b = 4, k = 3, d = 2;
  const Tensor<double> zt = sample_uniform({b, k, d}, rng);
  const Tensor<double> nt = sample_uniform({b, k, d}, rng);
  std::vector<Tensor<double>> cand_t;
  for (int64_t m = 0; m < k; ++m) cand_t.push_back(sample_uniform({b, k, d}, rng));
  Tensor<double> alpha_t({b, k});
  for (int64_t r = 0; r < b; ++r) {
    double s = 0;
    for (int64_t m = 0; m < k; ++m) {
      alpha_t.data[r * k + m] = rng.uniform(0.05, 1.0);
      s += alpha_t.data[r * k + m];
    }
    for (int64_t m = 0; m < k; ++m) alpha_t.data[r * k + m] /= s;
  }
  const std::vector<int64_t> perm{2, 0, 3, 1};
  const double gamma = 3.0;

  Tape<double> tape;
  Var<double> z = tape.input(zt.shape, zt.data);
  Var<double> znext = tape.input(nt.shape, nt.data);
  Var<double> alpha = tape.input(alpha_t.shape, alpha_t.data);
  std::vector<Var<double>> cands;
  for (int64_t m = 0; m < k; ++m) cands.push_back(tape.input(cand_t[m].shape, cand_t[m].data));
  const LossParts<double> parts =
      contrastive_loss_hard(tape, z, cands, alpha, znext, perm, gamma);

  // independent enumeration with plain loops
  auto pos_of = [&](int64_t r, int64_t m) {
    double s = 0;
    for (int64_t j = 0; j < k * d; ++j) {
      const double diff = nt.data[r * k * d + j] - cand_t[m].data[r * k * d + j];
      s += diff * diff;
    }
    return s;
  };
  double expect_pos = 0, expect_neg = 0;
  for (int64_t r = 0; r < b; ++r) {
    for (int64_t m = 0; m < k; ++m) expect_pos += alpha_t.data[r * k + m] * pos_of(r, m);
    double nd = 0;
    for (int64_t j = 0; j < k * d; ++j) {
      const double diff = zt.data[r * k * d + j] - zt.data[perm[r] * k * d + j];
      nd += diff * diff;
    }
    expect_neg += std::max(0.0, gamma - nd);
  }
  expect_pos /= b;
  expect_neg /= b;
  REQUIRE(std::abs(parts.positive.value()[0] - expect_pos) < 1e-6);
  REQUIRE(std::abs(parts.negative.value()[0] - expect_neg) < 1e-6);

  SECTION("Monte Carlo sampling of the slot choice agrees within 1%") {
    Rng mc(4242);
    double acc = 0;
    const int64_t trials = 100000;
    for (int64_t t = 0; t < trials; ++t) {
      const int64_t r = static_cast<int64_t>(mc.uniform_int(b));
      const double u = mc.uniform();
      double cum = 0;
      int64_t m = k - 1;
      for (int64_t j = 0; j < k; ++j) {
        cum += alpha_t.data[r * k + j];
        if (u < cum) {
          m = j;
          break;
        }
      }
      acc += pos_of(r, m);
    }
    const double mc_pos = acc / static_cast<double>(trials);
    REQUIRE(std::abs(mc_pos - parts.positive.value()[0]) <
            0.01 * std::abs(parts.positive.value()[0]));
  }

  SECTION("the positive term is linear in alpha") {
    Tensor<double> alpha2({b, k});
    for (int64_t r = 0; r < b; ++r) {
      double s = 0;
      Rng arng(100 + r);
      for (int64_t m = 0; m < k; ++m) {
        alpha2.data[r * k + m] = arng.uniform(0.05, 1.0);
        s += alpha2.data[r * k + m];
      }
      for (int64_t m = 0; m < k; ++m) alpha2.data[r * k + m] /= s;
    }
    const double c = 0.3;
    Tensor<double> mix({b, k});
    for (size_t i = 0; i < mix.data.size(); ++i)
      mix.data[i] = c * alpha_t.data[i] + (1 - c) * alpha2.data[i];

    Tape<double> t2;
    Var<double> z2 = t2.input(zt.shape, zt.data);
    Var<double> n2 = t2.input(nt.shape, nt.data);
    std::vector<Var<double>> c2;
    for (int64_t m = 0; m < k; ++m) c2.push_back(t2.input(cand_t[m].shape, cand_t[m].data));
    const double la = contrastive_loss_hard(t2, z2, c2, t2.input(alpha_t.shape, alpha_t.data),
                                            n2, perm, gamma)
                          .positive.value()[0];
    const double lb = contrastive_loss_hard(t2, z2, c2, t2.input(alpha2.shape, alpha2.data),
                                            n2, perm, gamma)
                          .positive.value()[0];
    const double lm = contrastive_loss_hard(t2, z2, c2, t2.input(mix.shape, mix.data), n2,
                                            perm, gamma)
                          .positive.value()[0];
    REQUIRE(lm == Catch::Approx(c * la + (1 - c) * lb).epsilon(1e-10));
  }
}

TEST_CASE("sattolo permutations are single cycles with no fixed points") {
  Rng rng(43);
  for (int trial = 0; trial < 500; ++trial) {
    const int64_t n = 2 + static_cast<int64_t>(rng.uniform_int(30));
    const std::vector<int64_t> p = sattolo_cycle(n, rng);
    std::vector<bool> seen(n, false);
    int64_t cur = 0, steps = 0;
    for (int64_t i = 0; i < n; ++i) {
      REQUIRE(p[i] != i);
      REQUIRE(!seen[p[i]]);
      seen[p[i]] = true;
    }
    // following the permutation visits every element before returning
    do {
      cur = p[cur];
      ++steps;
    } while (cur != 0 && steps <= n);
    REQUIRE(steps == n);
  }

  SECTION("uniform over the two 3-cycles") {
    Rng r2(44);
    std::map<std::vector<int64_t>, int> counts;
    const int trials = 10000;
    for (int t = 0; t < trials; ++t) counts[sattolo_cycle(3, r2)]++;
    REQUIRE(counts.size() == 2);
    for (const auto& [p, c] : counts) {
      // binomial(10000, 1/2): 3 sigma is 150
      REQUIRE(c > 5000 - 150);
      REQUIRE(c < 5000 + 150);
    }
  }

  SECTION("a batch of one is an error") {
    Rng r3(45);
    REQUIRE_THROWS_AS(sattolo_cycle(1, r3), std::invalid_argument);
  }
}

TEST_CASE("gradients flow through the full contrastive objective") {
  Rng rng(46);
  ModelConfig cfg;
  cfg.kind = ModelKind::kFwm;
  cfg.attention = AttentionMode::kHard;
  cfg.slots = 3;
  cfg.slot_dim = 3;
  cfg.hidden = 6;
  cfg.layers = 2;
  cfg.att_dim = 4;
  cfg.action_dim = 3;
  cfg.obs_kind = ObsKind::kFactoredF32;
  cfg.obs_shape = {3, 4};
  ParamStore<double> store(47);
  WorldModel<double> model(store, cfg);

  const int64_t b = 4;
  const Tensor<double> obs = sample_uniform({b, 3, 4}, rng, 0.0, 1.0);
  const Tensor<double> nxt = sample_uniform({b, 3, 4}, rng, 0.0, 1.0);
  const Tensor<double> act = sample_uniform({b, 3}, rng);
  const std::vector<int64_t> perm{1, 2, 3, 0};

  // gamma far above any attainable distance keeps every hinge strictly in its
  // linear region, so finite differences never straddle the kink
  const double gamma = 50.0;
  auto loss = [&](Tape<double>& tape) {
    Var<double> z = model.encode(tape, tape.constant(obs.shape, obs.data));
    Var<double> znext = model.encode(tape, tape.constant(nxt.shape, nxt.data));
    Var<double> a = tape.constant(act.shape, act.data);
    Var<double> alpha = model.attention_alpha(tape, z, a);
    std::vector<Var<double>> cands;
    for (int64_t m = 0; m < 3; ++m)
      cands.push_back(model.transition(tape, z, model.slot_actions_pad(tape, a, m)));
    return contrastive_loss_hard(tape, z, cands, alpha, znext, perm, gamma);
  };
  {
    Tape<double> probe;
    const LossParts<double> parts = loss(probe);
    REQUIRE(parts.negative.value()[0] > 0.8 * gamma);
  }
  // h one decade below the default: at this seed one pre-activation sits a few
  // 1e-5 from the leaky_relu kink and a 1e-4 step would straddle it
  const auto res = actionbind::testing::check_param_gradients(
      store, [&](Tape<double>& tape) { return loss(tape).total; }, rng, 1e-5);
  INFO("checked " << res.checked << " coords, max rel err " << res.max_rel_err);
  REQUIRE(res.max_rel_err < 1e-4);
}

namespace {

Dataset tiny_shapes(int64_t episodes, int64_t len, uint64_t seed) {
  return generate_grid_dataset(GridVariant::kShapes2d, episodes, len, seed);
}

TrainConfig quick_config(int64_t epochs, int64_t batch, uint64_t seed, double lr = 5e-4) {
  TrainConfig tc;
  tc.epochs = epochs;
  tc.batch = batch;
  tc.lr = lr;
  tc.gamma = 1.0;
  tc.seed = seed;
  return tc;
}

}  // namespace

TEST_CASE("training is deterministic and drops the trailing partial batch") {
  const Dataset data = tiny_shapes(30, 5, 2024);

  auto run = [&] {
    const ModelConfig cfg = default_model_config(data.header, ModelKind::kCswm,
                                                 AttentionMode::kNone, 1);
    ParamStore<float> store(7);
    WorldModel<float> model(store, cfg);
    return train_world_model(model, store, data, quick_config(6, 40, 3));
  };

  const TrainResult a = run();
  REQUIRE(static_cast<int64_t>(a.curve.size()) == 6);
  // 150 records at batch 40: three full batches, 30 records dropped
  REQUIRE(a.steps == 6 * 3);
  for (size_t i = 1; i < a.curve.size(); ++i)
    REQUIRE(a.curve[i].seconds >= a.curve[i - 1].seconds);

  const TrainResult b = run();
  for (size_t i = 0; i < a.curve.size(); ++i) {
    REQUIRE(a.curve[i].loss == b.curve[i].loss);
    REQUIRE(a.curve[i].positive == b.curve[i].positive);
    REQUIRE(a.curve[i].negative == b.curve[i].negative);
  }
}

TEST_CASE("loss halves within 20 epochs on shapes data") {
  const Dataset data = tiny_shapes(200, 10, 2024);
  const ModelConfig cfg = default_model_config(data.header, ModelKind::kCswm,
                                               AttentionMode::kNone, 1);
  ParamStore<float> store(7);
  WorldModel<float> model(store, cfg);
  const TrainResult r = train_world_model(model, store, data, quick_config(20, 256, 3));
  REQUIRE(r.curve.back().loss < 0.5 * r.curve.front().loss);
}

TEST_CASE("soft and hard attention train end to end") {
  const Dataset data = tiny_shapes(10, 5, 2025);
  for (AttentionMode att : {AttentionMode::kSoft, AttentionMode::kHard}) {
    const ModelConfig cfg = default_model_config(data.header, ModelKind::kCswm, att, 1);
    ParamStore<float> store(8);
    WorldModel<float> model(store, cfg);
    const TrainResult r = train_world_model(model, store, data, quick_config(3, 25, 4));
    REQUIRE(r.curve.size() == 3);
    for (const TrainRecord& rec : r.curve) REQUIRE(std::isfinite(rec.loss));
  }
}

TEST_CASE("divergence rolls parameters back and reports the failing step") {
  const Dataset data = tiny_shapes(4, 5, 2026);
  const ModelConfig cfg = default_model_config(data.header, ModelKind::kCswm,
                                               AttentionMode::kNone, 1);
  ParamStore<float> store(9);
  WorldModel<float> model(store, cfg);

  // one batch per epoch; an absurd learning rate sends epoch 0's update to
  // huge values whose forward pass overflows in a later epoch
  std::vector<std::vector<float>> initial;
  for (Parameter<float>* p : store.all()) initial.push_back(p->value.data);

  bool threw = false;
  try {
    train_world_model(model, store, data, quick_config(10, 20, 5, 1e18));
  } catch (const std::runtime_error& e) {
    threw = true;
    const std::string msg = e.what();
    REQUIRE(msg.find("training diverged at epoch") != std::string::npos);
    REQUIRE(msg.find("rolled back") != std::string::npos);
  }
  REQUIRE(threw);
  // rolled-back parameters are finite
  for (Parameter<float>* p : store.all())
    for (float v : p->value.data) REQUIRE(std::isfinite(v));
}

TEST_CASE("trainer rejects degenerate setups") {
  const Dataset data = tiny_shapes(2, 3, 2027);
  const ModelConfig cfg = default_model_config(data.header, ModelKind::kCswm,
                                               AttentionMode::kNone, 1);

  SECTION("single-record dataset") {
    Dataset one = tiny_shapes(1, 1, 2028);
    ParamStore<float> store(10);
    WorldModel<float> model(store, cfg);
    REQUIRE_THROWS_WITH(train_world_model(model, store, one, quick_config(1, 4, 6)),
                        Catch::Matchers::ContainsSubstring("at least 2 records"));
  }
  SECTION("bad config values") {
    ParamStore<float> store(11);
    WorldModel<float> model(store, cfg);
    REQUIRE_THROWS_AS(train_world_model(model, store, data, quick_config(0, 4, 6)),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(train_world_model(model, store, data, quick_config(1, 1, 6)),
                      std::invalid_argument);
    TrainConfig bad = quick_config(1, 4, 6);
    bad.lr = 0.0;
    REQUIRE_THROWS_AS(train_world_model(model, store, data, bad), std::invalid_argument);
  }
}

TEST_CASE("curve csv serialization") {
  std::vector<TrainRecord> curve{{0, 1.5, 1.0, 0.5, 0.25}, {1, 0.75, 0.5, 0.25, 0.5}};
  const std::string csv = train_curve_csv(curve);
  REQUIRE(csv.find("epoch,loss,positive,negative,seconds") == 0);
  REQUIRE(csv.find("\n0,1.5,1,0.5,0.250\n") != std::string::npos);
  REQUIRE(csv.find("\n1,0.75,0.5,0.25,0.500\n") != std::string::npos);
}
