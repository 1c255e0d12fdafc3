// Acceptance gate. Trains the full desk-scale experiment matrix once per
// process (cells are cached on disk, so an interrupted run resumes) and
// checks every headline claim at its stated tolerance, printing one
// [PASS]/[FAIL] line per criterion.
//
//   1. shapes2d: hard attention factors slots and ranks well, baseline not
//   2. cubes3d:  same separation under the dimetric renderer
//   3. controlled agent: all modes entangle slots yet rank comparably
//   4. blocks depth sweep: soft beats baseline at L=1, gap closes at L=4
//   5. trained soft attention points at the manipulated block on picks
//   6. exactness suite is green in under a minute

#include <sys/wait.h>

#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "actionbind/cli/commands.hpp"

using namespace actionbind;
namespace fs = std::filesystem;

namespace {

constexpr int kGridSeeds = 5;
constexpr int kBlockSeeds = 4;

const std::string& accept_root() {
  static const std::string root = [] {
    std::string r = (fs::current_path() / "acceptance_out").string();
    fs::create_directories(r);
    return r;
  }();
  return root;
}

struct CellResult {
  nlohmann::json metrics;
  double train_secs = 0;
  double eval_secs = 0;
};

ExperimentConfig grid_cfg(const std::string& env, const std::string& mode, int seed) {
  ExperimentConfig c;
  c.env.name = env;
  c.env.seed = seed;
  c.model.mode = mode;
  c.eval.horizons = {1};
  c.out = accept_root();
  return resolve(c);
}

ExperimentConfig blocks_cfg(const std::string& mode, int64_t layers, int seed) {
  ExperimentConfig c;
  c.env.name = "blocks";
  c.env.seed = seed;
  c.model.mode = mode;
  c.model.layers = layers;
  c.eval.horizons = {1};
  c.out = accept_root();
  return resolve(c);
}

double manifest_wall(const std::string& dir) {
  return nlohmann::json::parse(read_file(dir + "/manifest.json"))
      .at("wall_clock_seconds")
      .get<double>();
}

// Train + eval one cell, or reload it if a previous process finished it.
const CellResult& run_cell(const ExperimentConfig& cfg,
                           const std::vector<std::string>& metrics_req = {}) {
  static std::map<std::string, CellResult> cache;
  const std::string id = run_id(cfg, "cell");
  auto it = cache.find(id);
  if (it != cache.end()) return it->second;

  const std::string dir = (fs::path(accept_root()) / "cells" / id).string();
  CellResult res;
  if (!fs::exists(dir + "/eval/metrics.json")) {
    ensure_dataset(cfg, DataRole::kTrain);
    ensure_dataset(cfg, DataRole::kEval);
    const TrainOutputs t = cmd_train(cfg, dir + "/train");
    cmd_eval(cfg, t.checkpoint_path, metrics_req, dir + "/eval");
  }
  res.metrics = nlohmann::json::parse(read_file(dir + "/eval/metrics.json"));
  res.train_secs = manifest_wall(dir + "/train");
  res.eval_secs = manifest_wall(dir + "/eval");
  std::fprintf(stderr, "  cell %s: train %.0fs eval %.0fs\n", id.c_str(), res.train_secs,
               res.eval_secs);
  return cache.emplace(id, std::move(res)).first->second;
}

double hits1_pct(const CellResult& r) {
  return 100.0 * r.metrics.at("ranking").at(0).at("hits_at_1").get<double>();
}

double slot_corr(const CellResult& r) { return r.metrics.at("slot_correlation").get<double>(); }

double rank_pct(const CellResult& r) {
  return 100.0 * r.metrics.at("action_ranking").at("task_avg").get<double>();
}

double probe_rmse(const CellResult& r) { return r.metrics.at("probe_rmse").get<double>(); }

double pick_acc(const CellResult& r) {
  return r.metrics.at("attention_pick_accuracy").get<double>();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void report(int criterion, const std::string& name, bool pass, const std::string& detail) {
  std::printf("[%s] criterion %d (%s): %s\n", pass ? "PASS" : "FAIL", criterion, name.c_str(),
              detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof(buf), f, ap);
  va_end(ap);
  return buf;
}

// Median 1-step Hits@1 (percent), slot correlation and slowest run for one
// grid environment and mode across the acceptance seeds.
struct GridSummary {
  double h1 = 0, corr = 0, max_secs = 0;
};

GridSummary grid_summary(const std::string& env, const std::string& mode) {
  std::vector<double> h1s, corrs;
  GridSummary s;
  for (int seed = 1; seed <= kGridSeeds; ++seed) {
    const CellResult& r = run_cell(grid_cfg(env, mode, seed), {"ranking", "slots"});
    h1s.push_back(hits1_pct(r));
    corrs.push_back(slot_corr(r));
    s.max_secs = std::max(s.max_secs, r.train_secs + r.eval_secs);
  }
  s.h1 = median(h1s);
  s.corr = median(corrs);
  return s;
}

struct BlocksSummary {
  double rank = 0, probe = 0, pick = 0, max_secs = 0;
};

BlocksSummary blocks_summary(const std::string& mode, int64_t layers) {
  std::vector<double> ranks, probes, picks;
  BlocksSummary s;
  const std::vector<std::string> req =
      mode == "none" ? std::vector<std::string>{"ranking", "slots", "probe", "action-ranking"}
                     : std::vector<std::string>{"ranking", "slots", "probe", "action-ranking",
                                                "attention"};
  for (int seed = 1; seed <= kBlockSeeds; ++seed) {
    const CellResult& r = run_cell(blocks_cfg(mode, layers, seed), req);
    ranks.push_back(rank_pct(r));
    probes.push_back(probe_rmse(r));
    if (mode != "none") picks.push_back(pick_acc(r));
    s.max_secs = std::max(s.max_secs, r.train_secs + r.eval_secs);
  }
  s.rank = median(ranks);
  s.probe = median(probes);
  s.pick = mode != "none" ? median(picks) : 0.0;
  return s;
}

}  // namespace

TEST_CASE("criterion 1: hard attention factors shapes2d") {
  const GridSummary hard = grid_summary("shapes2d", "hard");
  const GridSummary base = grid_summary("shapes2d", "none");
  const bool pass = hard.h1 >= 85.0 && hard.corr <= 0.3 && base.h1 <= 50.0 && base.corr >= 0.9 &&
                    hard.max_secs <= 600.0 && base.max_secs <= 600.0;
  report(1, "shapes2d factoring", pass,
         fmt("hard H@1=%.1f (>=85) corr=%.2f (<=0.3) | baseline H@1=%.1f (<=50) corr=%.2f "
             "(>=0.9) | slowest run %.0fs (<=600)",
             hard.h1, hard.corr, base.h1, base.corr, std::max(hard.max_secs, base.max_secs)));
  REQUIRE(hard.h1 >= 85.0);
  REQUIRE(hard.corr <= 0.3);
  REQUIRE(base.h1 <= 50.0);
  REQUIRE(base.corr >= 0.9);
  REQUIRE(hard.max_secs <= 600.0);
  REQUIRE(base.max_secs <= 600.0);
}

TEST_CASE("criterion 2: hard attention factors cubes3d") {
  const GridSummary hard = grid_summary("cubes3d", "hard");
  const GridSummary base = grid_summary("cubes3d", "none");
  const bool pass = hard.h1 >= 80.0 && base.h1 <= 55.0;
  report(2, "cubes3d factoring", pass,
         fmt("hard H@1=%.1f (>=80) | baseline H@1=%.1f (<=55)", hard.h1, base.h1));
  REQUIRE(hard.h1 >= 80.0);
  REQUIRE(base.h1 <= 55.0);
}

TEST_CASE("criterion 3: controlled agent entangles every mode") {
  const GridSummary none = grid_summary("controlled", "none");
  const GridSummary soft = grid_summary("controlled", "soft");
  const GridSummary hard = grid_summary("controlled", "hard");
  const double lo = std::min({none.h1, soft.h1, hard.h1});
  const double hi = std::max({none.h1, soft.h1, hard.h1});
  const bool pass =
      none.corr >= 0.6 && soft.corr >= 0.6 && hard.corr >= 0.6 && (hi - lo) <= 10.0;
  report(3, "controlled-agent entanglement", pass,
         fmt("corr none=%.2f soft=%.2f hard=%.2f (all >=0.6) | H@1 none=%.1f soft=%.1f "
             "hard=%.1f spread=%.1f (<=10)",
             none.corr, soft.corr, hard.corr, none.h1, soft.h1, hard.h1, hi - lo));
  REQUIRE(none.corr >= 0.6);
  REQUIRE(soft.corr >= 0.6);
  REQUIRE(hard.corr >= 0.6);
  REQUIRE(hi - lo <= 10.0);
}

TEST_CASE("criterion 4: blocks depth sweep") {
  const BlocksSummary s1 = blocks_summary("soft", 1);
  const BlocksSummary b1 = blocks_summary("none", 1);
  const BlocksSummary s4 = blocks_summary("soft", 4);
  const BlocksSummary b4 = blocks_summary("none", 4);
  const double gap1 = s1.rank - b1.rank;
  const double gap4 = s4.rank - b4.rank;
  const double slowest = std::max({s1.max_secs, b1.max_secs, s4.max_secs, b4.max_secs});
  const bool pass =
      gap1 >= 10.0 && s1.probe < b1.probe && gap4 <= 5.0 && slowest <= 900.0;
  report(4, "blocks depth sweep", pass,
         fmt("L1 rank soft=%.1f base=%.1f gap=%.1f (>=10), probe soft=%.4f < base=%.4f | L4 "
             "gap=%.1f (<=5) | slowest run %.0fs (<=900)",
             s1.rank, b1.rank, gap1, s1.probe, b1.probe, gap4, slowest));
  REQUIRE(gap1 >= 10.0);
  REQUIRE(s1.probe < b1.probe);
  REQUIRE(gap4 <= 5.0);
  REQUIRE(slowest <= 900.0);
}

TEST_CASE("criterion 5: soft attention tracks the manipulated block") {
  const BlocksSummary s1 = blocks_summary("soft", 1);
  const bool pass = s1.pick >= 0.80;
  report(5, "attention interpretability", pass,
         fmt("pick-step argmax accuracy=%.2f (>=0.80)", s1.pick));
  REQUIRE(s1.pick >= 0.80);
}

TEST_CASE("criterion 6: exactness suite under a minute") {
  const auto t0 = std::chrono::steady_clock::now();
  const int st = std::system(ACCEPTANCE_EXACTNESS_BIN " > /dev/null 2>&1");
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const int exit_code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  const bool pass = exit_code == 0 && secs < 60.0;
  report(6, "exactness suite", pass, fmt("exit=%d (%.1fs, <60s)", exit_code, secs));
  REQUIRE(exit_code == 0);
  REQUIRE(secs < 60.0);
}
