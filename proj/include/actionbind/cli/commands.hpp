#pragma once

// The five experiment commands. Each run directory carries fixed filenames:
// config.json (resolved config), manifest.json (written atomically at run
// end), curves.csv, metrics.json, table.csv.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "actionbind/cli/experiment.hpp"
#include "actionbind/env/blocks.hpp"
#include "actionbind/env/grid.hpp"
#include "actionbind/eval/blocks_eval.hpp"
#include "actionbind/eval/ranking.hpp"
#include "actionbind/eval/slots.hpp"
#include "actionbind/io/checkpoint.hpp"
#include "actionbind/model/world_model.hpp"
#include "actionbind/train/trainer.hpp"

namespace actionbind {

namespace fs = std::filesystem;

struct RunManifest {
  std::string command, run_id;
  nlohmann::json config;
  nlohmann::json datasets = nlohmann::json::array();  // {role, path, hash}
  std::string checkpoint_path;
  std::vector<std::string> metrics_paths;
  nlohmann::json extra;
  double wall_clock_seconds = 0;
};

inline void write_manifest(const std::string& run_dir, const RunManifest& m) {
  nlohmann::json j{{"tool_version", kToolVersion},
                   {"command", m.command},
                   {"run_id", m.run_id},
                   {"config", m.config},
                   {"datasets", m.datasets},
                   {"checkpoint", m.checkpoint_path},
                   {"metrics", m.metrics_paths},
                   {"wall_clock_seconds", m.wall_clock_seconds}};
  if (!m.extra.is_null())
    for (auto it = m.extra.begin(); it != m.extra.end(); ++it) j[it.key()] = it.value();
  write_file_atomic((fs::path(run_dir) / "manifest.json").string(), j.dump(2) + "\n");
}

// Model geometry for a resolved config and the dataset it will consume.
inline ModelConfig model_config_from(const ExperimentConfig& c, const DatasetHeader& h) {
  ModelConfig mc = default_model_config(h, model_kind_from_string(c.model.family),
                                        attention_mode_from_string(c.model.mode), c.model.layers);
  mc.slots = c.model.slots;
  mc.slot_dim = c.model.slot_dim;
  mc.hidden = c.model.hidden;
  mc.att_dim = c.model.att_dim;
  if (h.kind == ObsKind::kFactoredF32) mc.slots = h.obs_shape[0];
  mc.validate();
  return mc;
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

struct GenDataResult {
  std::string path;
  int64_t records = 0;
  uint64_t hash = 0;
};

inline Dataset generate_config_dataset(const ExperimentConfig& c, DataRole role) {
  if (is_blocks_env(c.env.name))
    return generate_blocks_dataset(block_task_from_string(c.env.task), dataset_episodes(c, role),
                                   dataset_seed(c, role));
  return generate_grid_dataset(grid_variant_from_string(c.env.name), dataset_episodes(c, role),
                               c.env.episode_len, dataset_seed(c, role));
}

inline GenDataResult cmd_gen_data(const ExperimentConfig& cfg, DataRole role, bool force) {
  const ExperimentConfig c = resolve(cfg);
  const std::string path = dataset_path(c, role);
  if (!force && fs::exists(path))
    throw std::runtime_error(path + " already exists; pass --force to overwrite");
  fs::create_directories(fs::path(path).parent_path());
  const Dataset d = generate_config_dataset(c, role);
  const std::string tmp = path + ".tmp";
  save_dataset(d, tmp);
  fs::rename(tmp, path);
  return {path, d.records(), file_fnv1a(path)};
}

inline std::string require_dataset(const ExperimentConfig& c, DataRole role) {
  const std::string path = dataset_path(c, role);
  if (!fs::exists(path))
    throw std::runtime_error("dataset not found: " + path +
                             "; generate it with: " + gen_data_command(c, role));
  return path;
}

// Generate-if-missing, used by reproduce so a fresh checkout runs end to end.
// Serialized: matrix cells share dataset files.
inline std::string ensure_dataset(const ExperimentConfig& c, DataRole role) {
  static std::mutex mu;
  const std::lock_guard<std::mutex> lock(mu);
  const std::string path = dataset_path(c, role);
  if (!fs::exists(path)) cmd_gen_data(c, role, false);
  return path;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOutputs {
  std::string run_dir, config_path, curves_path, checkpoint_path, manifest_path;
  TrainResult result;
  uint64_t checkpoint_hash = 0;
};

inline TrainOutputs cmd_train(const ExperimentConfig& cfg, const std::string& run_dir_in = "",
                              const std::string& data_override = "") {
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentConfig c = resolve(cfg);

  TrainOutputs out;
  out.run_dir = run_dir_in.empty() ? (fs::path(c.out) / run_id(c, "train")).string() : run_dir_in;
  fs::create_directories(out.run_dir);
  out.config_path = (fs::path(out.run_dir) / "config.json").string();
  write_file_atomic(out.config_path, experiment_to_json(c).dump(2) + "\n");

  const std::string data_path =
      data_override.empty() ? require_dataset(c, DataRole::kTrain) : data_override;
  const Dataset data = load_dataset(data_path);
  const uint64_t data_hash = file_fnv1a(data_path);

  const ModelConfig mc = model_config_from(c, data.header);
  ParamStore<float> store(derive_seed(c.env.seed, {cli_detail::kParamStream}));
  WorldModel<float> model(store, mc);

  TrainConfig tc;
  tc.epochs = c.loss.epochs;
  tc.batch = c.loss.batch;
  tc.lr = c.loss.lr;
  tc.gamma = c.loss.gamma;
  tc.seed = derive_seed(c.env.seed, {cli_detail::kTrainStream});
  out.result = train_world_model(model, store, data, tc);

  out.curves_path = (fs::path(out.run_dir) / "curves.csv").string();
  write_file_atomic(out.curves_path, train_curve_csv(out.result.curve));

  out.checkpoint_path = (fs::path(out.run_dir) / "checkpoint.swmc").string();
  nlohmann::json meta{{"tool_version", kToolVersion},
                      {"experiment", experiment_to_json(c)},
                      {"dataset", {{"path", data_path}, {"hash", hex64(data_hash)}}}};
  save_world_model(out.checkpoint_path + ".tmp", mc, store, meta);
  fs::rename(out.checkpoint_path + ".tmp", out.checkpoint_path);
  out.checkpoint_hash = file_fnv1a(out.checkpoint_path);

  RunManifest m;
  m.command = "train";
  m.run_id = fs::path(out.run_dir).filename().string();
  m.config = experiment_to_json(c);
  m.datasets.push_back(
      {{"role", "train"}, {"path", data_path}, {"hash", hex64(data_hash)}});
  m.checkpoint_path = out.checkpoint_path;
  m.extra = {{"checkpoint_hash", hex64(out.checkpoint_hash)},
             {"final_loss", out.result.curve.empty() ? 0.0 : out.result.curve.back().loss},
             {"steps", out.result.steps}};
  m.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_manifest(out.run_dir, m);
  out.manifest_path = (fs::path(out.run_dir) / "manifest.json").string();
  return out;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalOutputs {
  std::string run_dir, config_path, metrics_path, table_path, manifest_path;
  nlohmann::json metrics;
};

inline const std::vector<BlockTask>& all_block_tasks() {
  static const std::vector<BlockTask> tasks{BlockTask::kTower4, BlockTask::kWall,
                                            BlockTask::kStairs, BlockTask::kTwoTowers3,
                                            BlockTask::kThreeTowers2};
  return tasks;
}

namespace cli_detail {

inline std::string eval_table_csv(const ExperimentConfig& c, const nlohmann::json& metrics) {
  std::string header = "env,task,family,mode,layers,seed,negatives";
  std::string row = c.env.name + "," + c.env.task + "," + c.model.family + "," + c.model.mode +
                    "," + std::to_string(c.model.layers) + "," + std::to_string(c.env.seed) +
                    "," + std::to_string(metrics.at("negatives_per_query").get<int64_t>());
  for (int64_t h : c.eval.horizons) {
    header += ",h" + std::to_string(h) + "_hits,h" + std::to_string(h) + "_mrr";
    std::string hits, mrr;
    if (metrics.contains("ranking"))
      for (const auto& r : metrics.at("ranking"))
        if (r.at("horizon").get<int64_t>() == h) {
          hits = fmt_g9(r.at("hits_at_1").get<double>());
          mrr = fmt_g9(r.at("mrr").get<double>());
        }
    row += "," + hits + "," + mrr;
  }
  header += ",slot_corr,probe_rmse,rank_h1,att_pick_acc";
  row += ",";
  if (metrics.contains("slot_correlation"))
    row += fmt_g9(metrics.at("slot_correlation").get<double>());
  row += ",";
  if (metrics.contains("probe_rmse")) row += fmt_g9(metrics.at("probe_rmse").get<double>());
  row += ",";
  if (metrics.contains("action_ranking"))
    row += fmt_g9(metrics.at("action_ranking").at("task_avg").get<double>());
  row += ",";
  if (metrics.contains("attention_pick_accuracy"))
    row += fmt_g9(metrics.at("attention_pick_accuracy").get<double>());
  return header + "\n" + row + "\n";
}

}  // namespace cli_detail

inline EvalOutputs cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                            std::vector<std::string> metrics_req = {},
                            const std::string& run_dir_in = "",
                            const std::string& data_override = "") {
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentConfig c = resolve(cfg);
  const bool blocks = is_blocks_env(c.env.name);

  LoadedModel lm = load_world_model(checkpoint_path);
  if ((lm.cfg.obs_kind == ObsKind::kFactoredF32) != blocks)
    throw std::runtime_error("checkpoint " + checkpoint_path + " was trained on " +
                             std::string(lm.cfg.obs_kind == ObsKind::kFactoredF32
                                             ? "factored block"
                                             : "grid image") +
                             " observations, which does not match environment " + c.env.name);

  if (metrics_req.empty()) {
    metrics_req = {"ranking", "slots"};
    if (blocks) {
      metrics_req.push_back("probe");
      metrics_req.push_back("action-ranking");
      if (lm.cfg.attention != AttentionMode::kNone) metrics_req.push_back("attention");
    }
  }
  for (const std::string& m : metrics_req) {
    if (m != "ranking" && m != "slots" && m != "probe" && m != "action-ranking" &&
        m != "attention")
      throw std::invalid_argument(
          "unknown metric: " + m +
          " (expected ranking, slots, probe, action-ranking or attention)");
    if (!blocks && (m == "probe" || m == "action-ranking" || m == "attention"))
      throw std::invalid_argument("metric " + m + " is defined for the blocks environment only");
  }
  const bool want_attention =
      std::find(metrics_req.begin(), metrics_req.end(), "attention") != metrics_req.end();
  if (want_attention && lm.cfg.attention == AttentionMode::kNone)
    throw std::runtime_error("checkpoint " + checkpoint_path +
                             " has no attention module (mode=none); the attention metric needs "
                             "a soft or hard model");

  const std::string data_path =
      data_override.empty() ? require_dataset(c, DataRole::kEval) : data_override;
  const Dataset data = load_dataset(data_path);
  const uint64_t eval_seed = dataset_seed(c, DataRole::kEval);

  nlohmann::json metrics{
      {"tool_version", kToolVersion},
      {"config", experiment_to_json(c)},
      {"checkpoint", {{"path", checkpoint_path}, {"hash", hex64(file_fnv1a(checkpoint_path))}}},
      {"dataset",
       {{"path", data_path},
        {"hash", hex64(file_fnv1a(data_path))},
        {"episodes", data.header.episodes},
        {"episode_len", data.header.episode_len}}},
      {"negatives_per_query", data.header.episodes - 1}};

  for (const std::string& mreq : metrics_req) {
    if (mreq == "ranking") {
      const RankingResult r = ranking_eval(*lm.model, data, c.eval.horizons);
      nlohmann::json rows = nlohmann::json::array();
      for (const RankingRow& row : r.rows)
        rows.push_back({{"horizon", row.horizon},
                        {"hits_at_1", row.hits_at_1},
                        {"mrr", row.mrr},
                        {"queries", row.queries},
                        {"negatives", row.negatives},
                        {"skipped", row.skipped}});
      metrics["ranking"] = rows;
    } else if (mreq == "slots") {
      metrics["slot_correlation"] = slot_correlation_eval(*lm.model, data);
    } else if (mreq == "probe") {
      ProbeConfig pc;
      pc.seed = derive_seed(eval_seed, {cli_detail::kProbeStream});
      metrics["probe_rmse"] = position_probe(*lm.model, data, pc);
    } else if (mreq == "action-ranking") {
      nlohmann::json per_task;
      double avg = 0;
      int64_t n_tasks = 0;
      for (BlockTask task : all_block_tasks()) {
        if (to_string(task) == c.env.task) continue;
        const auto trials = make_ranking_trials(
            task, c.eval.ranking_trials,
            derive_seed(eval_seed, {cli_detail::kRankStream, static_cast<uint64_t>(task)}));
        const ActionRankingResult res = action_sequence_ranking(*lm.model, trials);
        per_task[to_string(task)] = res.hits_at_1;
        avg += res.hits_at_1;
        ++n_tasks;
      }
      metrics["action_ranking"] = {{"tasks", per_task},
                                   {"task_avg", avg / static_cast<double>(n_tasks)},
                                   {"trials_per_task", c.eval.ranking_trials}};
    } else if (mreq == "attention") {
      const BlockTask task = block_task_from_string(c.env.task);
      std::vector<BlockDemo> demos;
      for (int64_t i = 0; i < c.env.eval_episodes; ++i)
        demos.push_back(
            expert_demo(task, derive_seed(eval_seed, {cli_detail::kDemoStream,
                                                      static_cast<uint64_t>(i)})));
      metrics["attention_pick_accuracy"] = attention_pick_accuracy(
          *lm.model, demos, derive_seed(eval_seed, {cli_detail::kNoiseStream}));
      metrics["attention_demos"] = c.env.eval_episodes;
    }
  }

  EvalOutputs out;
  out.metrics = metrics;
  out.run_dir = run_dir_in.empty() ? (fs::path(c.out) / run_id(c, "eval")).string() : run_dir_in;
  fs::create_directories(out.run_dir);
  out.config_path = (fs::path(out.run_dir) / "config.json").string();
  write_file_atomic(out.config_path, experiment_to_json(c).dump(2) + "\n");
  out.metrics_path = (fs::path(out.run_dir) / "metrics.json").string();
  write_file_atomic(out.metrics_path, metrics.dump(2) + "\n");
  out.table_path = (fs::path(out.run_dir) / "table.csv").string();
  write_file_atomic(out.table_path, cli_detail::eval_table_csv(c, metrics));

  RunManifest m;
  m.command = "eval";
  m.run_id = fs::path(out.run_dir).filename().string();
  m.config = experiment_to_json(c);
  m.datasets.push_back({{"role", "eval"},
                        {"path", data_path},
                        {"hash", metrics.at("dataset").at("hash").get<std::string>()}});
  m.checkpoint_path = checkpoint_path;
  m.metrics_paths = {out.metrics_path, out.table_path};
  m.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_manifest(out.run_dir, m);
  out.manifest_path = (fs::path(out.run_dir) / "manifest.json").string();
  return out;
}

// ---------------------------------------------------------------------------
// attention-report
// ---------------------------------------------------------------------------

struct AttentionOutputs {
  std::string run_dir, config_path, table_path, metrics_path, manifest_path;
  double pick_accuracy = 0;
  int64_t pick_steps = 0, rows = 0;
};

inline AttentionOutputs cmd_attention_report(const ExperimentConfig& cfg,
                                             const std::string& checkpoint_path,
                                             int64_t demo_count = 5,
                                             const std::string& run_dir_in = "") {
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentConfig c = resolve(cfg);
  if (!is_blocks_env(c.env.name))
    throw std::invalid_argument("attention reports are defined for the blocks environment");
  if (demo_count < 1) throw std::invalid_argument("attention report needs at least 1 demo");

  LoadedModel lm = load_world_model(checkpoint_path);
  if (lm.cfg.attention == AttentionMode::kNone)
    throw std::runtime_error("checkpoint " + checkpoint_path +
                             " has no attention module (mode=none); train with soft or hard "
                             "attention to report alpha");
  if (lm.cfg.obs_kind != ObsKind::kFactoredF32)
    throw std::runtime_error("checkpoint " + checkpoint_path +
                             " is a grid model; attention reports read block demos");

  const BlockTask task = block_task_from_string(c.env.task);
  const uint64_t eval_seed = dataset_seed(c, DataRole::kEval);

  std::string csv = "demo,step,primitive,manipulated,argmax";
  for (int64_t k = 0; k < lm.cfg.slots; ++k) csv += ",alpha_" + std::to_string(k);
  csv += "\n";
  int64_t picks = 0, correct_picks = 0, total_rows = 0;
  for (int64_t d = 0; d < demo_count; ++d) {
    const BlockDemo demo =
        expert_demo(task, derive_seed(eval_seed, {cli_detail::kDemoStream,
                                                  static_cast<uint64_t>(d)}));
    const std::vector<AttentionRow> rows = attention_rows(
        *lm.model, demo,
        derive_seed(eval_seed, {cli_detail::kNoiseStream, static_cast<uint64_t>(d)}));
    for (const AttentionRow& row : rows) {
      csv += std::to_string(d) + "," + std::to_string(row.step) +
             (row.primitive == BlockPrimitive::kPick ? ",pick" : ",place") + "," +
             std::to_string(row.manipulated) + "," + std::to_string(row.argmax);
      for (double a : row.alpha) csv += "," + fmt_g9(a);
      csv += "\n";
      ++total_rows;
      if (row.primitive == BlockPrimitive::kPick) {
        ++picks;
        if (row.argmax == row.manipulated) ++correct_picks;
      }
    }
  }

  AttentionOutputs out;
  out.rows = total_rows;
  out.pick_steps = picks;
  out.pick_accuracy = picks > 0 ? static_cast<double>(correct_picks) / picks : 0.0;
  out.run_dir =
      run_dir_in.empty() ? (fs::path(c.out) / run_id(c, "attention")).string() : run_dir_in;
  fs::create_directories(out.run_dir);
  out.config_path = (fs::path(out.run_dir) / "config.json").string();
  write_file_atomic(out.config_path, experiment_to_json(c).dump(2) + "\n");
  out.table_path = (fs::path(out.run_dir) / "table.csv").string();
  write_file_atomic(out.table_path, csv);
  out.metrics_path = (fs::path(out.run_dir) / "metrics.json").string();
  nlohmann::json metrics{
      {"tool_version", kToolVersion},
      {"checkpoint", {{"path", checkpoint_path}, {"hash", hex64(file_fnv1a(checkpoint_path))}}},
      {"task", c.env.task},
      {"demos", demo_count},
      {"pick_steps", picks},
      {"attention_pick_accuracy", out.pick_accuracy}};
  write_file_atomic(out.metrics_path, metrics.dump(2) + "\n");

  RunManifest m;
  m.command = "attention-report";
  m.run_id = fs::path(out.run_dir).filename().string();
  m.config = experiment_to_json(c);
  m.checkpoint_path = checkpoint_path;
  m.metrics_paths = {out.metrics_path, out.table_path};
  m.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_manifest(out.run_dir, m);
  out.manifest_path = (fs::path(out.run_dir) / "manifest.json").string();
  return out;
}

// ---------------------------------------------------------------------------
// reproduce
// ---------------------------------------------------------------------------

struct ReproduceOutputs {
  std::string run_dir, config_path, table_path, manifest_path;
  int64_t cells = 0, failed = 0;
};

namespace cli_detail {

struct Cell {
  std::string id;
  ExperimentConfig cfg;
  std::vector<std::string> metrics_req;
  bool ok = false;
  std::string error;
  nlohmann::json metrics;
};

inline std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {0, 0};
  double mean = 0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  if (xs.size() < 2) return {mean, 0};
  double var = 0;
  for (double x : xs) var += (x - mean) * (x - mean);
  return {mean, std::sqrt(var / static_cast<double>(xs.size() - 1))};
}

inline std::string mean_std_cells(const std::vector<double>& xs) {
  if (xs.empty()) return ",";
  const auto [m, s] = mean_std(xs);
  return fmt_g9(m) + "," + fmt_g9(s);
}

inline double ranking_metric(const nlohmann::json& metrics, int64_t horizon, const char* key) {
  for (const auto& r : metrics.at("ranking"))
    if (r.at("horizon").get<int64_t>() == horizon) return r.at(key).get<double>();
  throw std::runtime_error("metrics have no ranking row for horizon " + std::to_string(horizon));
}

}  // namespace cli_detail

inline ReproduceOutputs cmd_reproduce(const std::string& which, const ExperimentConfig& base,
                                      const std::string& run_dir_in = "", int64_t seeds = 0,
                                      int64_t jobs = 1, bool verbose = true) {
  using cli_detail::Cell;
  const auto t0 = std::chrono::steady_clock::now();
  if (which != "table1" && which != "figure2")
    throw std::invalid_argument("unknown reproduction target: " + which +
                                " (expected table1 or figure2)");
  if (jobs < 1) throw std::invalid_argument("jobs must be positive");
  const bool fig2 = which == "figure2";
  if (seeds == 0) seeds = fig2 ? 4 : 5;

  // Build the matrix. Cells carry fully-resolved configs so each one is
  // reproducible on its own.
  std::vector<Cell> cells;
  const std::vector<std::string> modes =
      fig2 ? std::vector<std::string>{"none", "soft"}
           : std::vector<std::string>{"none", "soft", "hard"};
  if (fig2) {
    for (const std::string& mode : modes)
      for (int64_t layers : {1, 2, 3, 4})
        for (int64_t s = 0; s < seeds; ++s) {
          Cell cell;
          cell.cfg = base;
          cell.cfg.env.name = "blocks";
          cell.cfg.model.family = "fwm";
          cell.cfg.model.mode = mode;
          cell.cfg.model.layers = layers;
          cell.cfg.env.seed = base.env.seed + static_cast<uint64_t>(s);
          cell.cfg = resolve(cell.cfg);
          cell.id = mode + "-L" + std::to_string(layers) + "-s" +
                    std::to_string(cell.cfg.env.seed);
          cell.metrics_req = {"ranking", "slots", "probe", "action-ranking"};
          cells.push_back(std::move(cell));
        }
  } else {
    for (const std::string& env : {"shapes2d", "cubes3d", "controlled"})
      for (const std::string& mode : modes)
        for (int64_t s = 0; s < seeds; ++s) {
          Cell cell;
          cell.cfg = base;
          cell.cfg.env.name = env;
          cell.cfg.model.family = "cswm";
          cell.cfg.model.mode = mode;
          cell.cfg.model.layers = 1;
          cell.cfg.env.seed = base.env.seed + static_cast<uint64_t>(s);
          cell.cfg = resolve(cell.cfg);
          cell.id = env + "-" + mode + "-s" + std::to_string(cell.cfg.env.seed);
          cell.metrics_req = {"ranking", "slots"};
          cells.push_back(std::move(cell));
        }
  }

  ReproduceOutputs out;
  out.cells = static_cast<int64_t>(cells.size());
  {
    ExperimentConfig rep = cells.front().cfg;
    out.run_dir =
        run_dir_in.empty() ? (fs::path(rep.out) / (which + "-s" +
                                                   std::to_string(base.env.seed) + "-n" +
                                                   std::to_string(seeds)))
                                 .string()
                           : run_dir_in;
  }
  fs::create_directories(out.run_dir);
  out.config_path = (fs::path(out.run_dir) / "config.json").string();
  write_file_atomic(out.config_path, experiment_to_json(base).dump(2) + "\n");

  std::atomic<size_t> next{0};
  std::mutex log_mu;
  auto worker = [&]() {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      Cell& cell = cells[i];
      const std::string cell_dir = (fs::path(out.run_dir) / "cells" / cell.id).string();
      try {
        ensure_dataset(cell.cfg, DataRole::kTrain);
        ensure_dataset(cell.cfg, DataRole::kEval);
        const TrainOutputs t = cmd_train(cell.cfg, cell_dir + "/train");
        const EvalOutputs e =
            cmd_eval(cell.cfg, t.checkpoint_path, cell.metrics_req, cell_dir + "/eval");
        cell.metrics = e.metrics;
        cell.ok = true;
      } catch (const std::exception& e) {
        cell.error = e.what();
      }
      if (verbose) {
        const std::lock_guard<std::mutex> lock(log_mu);
        std::fprintf(stderr, "[%zu/%zu] %s %s%s%s\n", i + 1, cells.size(), cell.id.c_str(),
                     cell.ok ? "ok" : "FAILED", cell.ok ? "" : ": ",
                     cell.ok ? "" : cell.error.c_str());
      }
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int64_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  // Aggregate mean and std over the seeds that finished.
  const std::vector<int64_t>& horizons = cells.front().cfg.eval.horizons;
  std::string table;
  if (fig2) {
    table = "mode,layers,seeds,failed,rank_h1_mean,rank_h1_std,probe_rmse_mean,probe_rmse_std\n";
    for (const std::string& mode : modes)
      for (int64_t layers : {1, 2, 3, 4}) {
        std::vector<double> rank, rmse;
        int64_t failed = 0;
        for (const Cell& cell : cells) {
          if (cell.cfg.model.mode != mode || cell.cfg.model.layers != layers) continue;
          if (!cell.ok) {
            ++failed;
            continue;
          }
          rank.push_back(100.0 *
                         cell.metrics.at("action_ranking").at("task_avg").get<double>());
          rmse.push_back(cell.metrics.at("probe_rmse").get<double>());
        }
        table += mode + "," + std::to_string(layers) + "," + std::to_string(seeds) + "," +
                 std::to_string(failed) + "," + cli_detail::mean_std_cells(rank) + "," +
                 cli_detail::mean_std_cells(rmse) + "\n";
      }
  } else {
    std::string header = "env,mode,seeds,failed";
    for (int64_t h : horizons) {
      header += ",h" + std::to_string(h) + "_hits_mean,h" + std::to_string(h) + "_hits_std";
      header += ",h" + std::to_string(h) + "_mrr_mean,h" + std::to_string(h) + "_mrr_std";
    }
    table = header + ",corr_mean,corr_std\n";
    for (const std::string& env : {"shapes2d", "cubes3d", "controlled"})
      for (const std::string& mode : modes) {
        std::vector<std::vector<double>> hits(horizons.size()), mrr(horizons.size());
        std::vector<double> corr;
        int64_t failed = 0;
        for (const Cell& cell : cells) {
          if (cell.cfg.env.name != env || cell.cfg.model.mode != mode) continue;
          if (!cell.ok) {
            ++failed;
            continue;
          }
          for (size_t hi = 0; hi < horizons.size(); ++hi) {
            hits[hi].push_back(
                100.0 * cli_detail::ranking_metric(cell.metrics, horizons[hi], "hits_at_1"));
            mrr[hi].push_back(100.0 *
                              cli_detail::ranking_metric(cell.metrics, horizons[hi], "mrr"));
          }
          corr.push_back(cell.metrics.at("slot_correlation").get<double>());
        }
        table += env + "," + mode + "," + std::to_string(seeds) + "," + std::to_string(failed);
        for (size_t hi = 0; hi < horizons.size(); ++hi)
          table += "," + cli_detail::mean_std_cells(hits[hi]) + "," +
                   cli_detail::mean_std_cells(mrr[hi]);
        table += "," + cli_detail::mean_std_cells(corr) + "\n";
      }
  }
  out.table_path = (fs::path(out.run_dir) / "table.csv").string();
  write_file_atomic(out.table_path, table);

  nlohmann::json cell_list = nlohmann::json::array();
  for (const Cell& cell : cells) {
    nlohmann::json e{{"id", cell.id},
                     {"status", cell.ok ? "ok" : "failed"},
                     {"config", experiment_to_json(cell.cfg)}};
    if (!cell.ok) e["error"] = cell.error;
    cell_list.push_back(std::move(e));
    if (!cell.ok) ++out.failed;
  }
  RunManifest m;
  m.command = "reproduce " + which;
  m.run_id = fs::path(out.run_dir).filename().string();
  m.config = experiment_to_json(base);
  m.metrics_paths = {out.table_path};
  m.extra = {{"cells", cell_list},
             {"cells_total", out.cells},
             {"cells_failed", out.failed},
             {"seeds", seeds}};
  m.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_manifest(out.run_dir, m);
  out.manifest_path = (fs::path(out.run_dir) / "manifest.json").string();
  return out;
}

}  // namespace actionbind
