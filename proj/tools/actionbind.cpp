// Experiment driver: dataset generation, training, evaluation, attention
// reports and full result-matrix reproduction.

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "actionbind/cli/commands.hpp"

using namespace actionbind;

namespace {

// CLI11 bindings write into plain fields; only flags the user actually passed
// are promoted to overrides (flags win over config file and profile).
struct RawFlags {
  std::string env, task, family, mode, negatives, out;
  int64_t episodes = 0, episode_len = 0, eval_episodes = 0;
  uint64_t seed = 0;
  int64_t slots = 0, slot_dim = 0, layers = 0, hidden = 0, att_dim = 0;
  double gamma = 0, lr = 0;
  int64_t batch = 0, epochs = 0, ranking_trials = 0;
  std::vector<int64_t> horizons;

  CLI::Option *o_env = nullptr, *o_task = nullptr, *o_family = nullptr, *o_mode = nullptr,
              *o_negatives = nullptr, *o_out = nullptr, *o_episodes = nullptr,
              *o_episode_len = nullptr, *o_eval_episodes = nullptr, *o_seed = nullptr,
              *o_slots = nullptr, *o_slot_dim = nullptr, *o_layers = nullptr,
              *o_hidden = nullptr, *o_att_dim = nullptr, *o_gamma = nullptr, *o_lr = nullptr,
              *o_batch = nullptr, *o_epochs = nullptr, *o_ranking_trials = nullptr,
              *o_horizons = nullptr;

  void bind_env(CLI::App* s, bool demos_alias = true) {
    o_env = s->add_option("--env", env, "environment: shapes2d, cubes3d, controlled or blocks");
    o_task = s->add_option("--task", task, "block task (blocks only)");
    o_episodes = s->add_option(demos_alias ? "--episodes,--demos" : "--episodes", episodes,
                               "train episodes (grids) or demos (blocks)");
    o_episode_len = s->add_option("--len", episode_len, "steps per episode (grids)");
    o_eval_episodes =
        s->add_option("--eval-episodes", eval_episodes, "held-out evaluation episodes/demos");
    o_seed = s->add_option("--seed", seed, "base random seed");
    o_out = s->add_option("--out", out, "output root (default $ACTIONBIND_OUT or runs)");
  }
  void bind_model(CLI::App* s) {
    o_family = s->add_option("--family", family, "model family: cswm or fwm");
    o_mode = s->add_option("--mode", mode, "action attention: none, soft or hard");
    o_slots = s->add_option("--slots", slots, "object slots");
    o_slot_dim = s->add_option("--slot-dim", slot_dim, "embedding dims per slot");
    o_layers = s->add_option("--layers", layers, "transition GNN layers (fwm)");
    o_hidden = s->add_option("--hidden", hidden, "MLP hidden width");
    o_att_dim = s->add_option("--att-dim", att_dim, "attention key/query width");
  }
  void bind_loss(CLI::App* s) {
    o_gamma = s->add_option("--gamma", gamma, "contrastive hinge margin");
    o_lr = s->add_option("--lr", lr, "Adam learning rate");
    o_batch = s->add_option("--batch", batch, "batch size");
    o_epochs = s->add_option("--epochs", epochs, "training epochs");
  }
  void bind_eval(CLI::App* s) {
    o_horizons =
        s->add_option("--horizons", horizons, "ranking horizons")->delimiter(',');
    o_negatives = s->add_option("--negatives", negatives, "negative sampling policy");
    o_ranking_trials =
        s->add_option("--ranking-trials", ranking_trials, "trials per transfer task");
  }

  FlagOverrides overrides() const {
    FlagOverrides o;
    auto set = [](auto& dst, CLI::Option* opt, const auto& v) {
      if (opt && opt->count()) dst = v;
    };
    set(o.env, o_env, env);
    set(o.task, o_task, task);
    set(o.episodes, o_episodes, episodes);
    set(o.episode_len, o_episode_len, episode_len);
    set(o.eval_episodes, o_eval_episodes, eval_episodes);
    set(o.seed, o_seed, seed);
    set(o.family, o_family, family);
    set(o.mode, o_mode, mode);
    set(o.slots, o_slots, slots);
    set(o.slot_dim, o_slot_dim, slot_dim);
    set(o.layers, o_layers, layers);
    set(o.hidden, o_hidden, hidden);
    set(o.att_dim, o_att_dim, att_dim);
    set(o.gamma, o_gamma, gamma);
    set(o.lr, o_lr, lr);
    set(o.batch, o_batch, batch);
    set(o.epochs, o_epochs, epochs);
    set(o.horizons, o_horizons, horizons);
    set(o.negatives, o_negatives, negatives);
    set(o.ranking_trials, o_ranking_trials, ranking_trials);
    set(o.out, o_out, out);
    return o;
  }
};

ExperimentConfig base_config(const std::string& config_path, const std::string& checkpoint) {
  if (!config_path.empty()) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_file(config_path));
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(config_path + ": " + e.what());
    }
    return experiment_from_json(j);
  }
  if (!checkpoint.empty()) {
    const nlohmann::json meta = peek_checkpoint_meta(checkpoint);
    if (meta.contains("experiment")) return experiment_from_json(meta.at("experiment"));
  }
  return ExperimentConfig{};
}

std::string run_dir_for(const ExperimentConfig& cfg, const std::string& run_id_flag) {
  if (run_id_flag.empty()) return "";
  return (std::filesystem::path(resolve(cfg).out) / run_id_flag).string();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"object-factored world models: datasets, training, evaluation, reproduction"};
  app.require_subcommand(1);

  std::string config_path, profile, run_id_flag, data_path, checkpoint, target;
  bool force = false, eval_role = false;
  int64_t demos = 5, seeds = 0, jobs = 1;
  std::vector<std::string> metric_req;

  RawFlags f_gen, f_train, f_eval, f_att, f_rep;
  auto add_config = [&](CLI::App* s) {
    s->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    s->add_option("--profile", profile, "smoke or full")
        ->check(CLI::IsMember({"smoke", "full"}));
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate and save a dataset");
  add_config(gen);
  f_gen.bind_env(gen);
  gen->add_flag("--force", force, "overwrite an existing dataset file");
  gen->add_flag("--eval", eval_role, "generate the held-out evaluation dataset instead");

  CLI::App* train = app.add_subcommand("train", "train a world model");
  add_config(train);
  f_train.bind_env(train);
  f_train.bind_model(train);
  f_train.bind_loss(train);
  f_train.bind_eval(train);
  train->add_option("--run-id", run_id_flag, "run directory name under the output root");
  train->add_option("--data", data_path, "explicit dataset path")->check(CLI::ExistingFile);

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_config(eval);
  f_eval.bind_env(eval);
  f_eval.bind_model(eval);
  f_eval.bind_loss(eval);
  f_eval.bind_eval(eval);
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--metric", metric_req,
                   "metrics to compute: ranking, slots, probe, action-ranking, attention "
                   "(default: all that apply)")
      ->delimiter(',');
  eval->add_option("--run-id", run_id_flag, "run directory name under the output root");
  eval->add_option("--data", data_path, "explicit dataset path")->check(CLI::ExistingFile);

  CLI::App* att = app.add_subcommand("attention-report", "per-step attention over a demo set");
  add_config(att);
  f_att.bind_env(att, false);
  att->add_option("--checkpoint", checkpoint, "checkpoint file")
      ->required()
      ->check(CLI::ExistingFile);
  att->add_option("--demos", demos, "number of expert demos to report");
  att->add_option("--run-id", run_id_flag, "run directory name under the output root");

  CLI::App* rep = app.add_subcommand("reproduce", "run a full result matrix");
  add_config(rep);
  f_rep.bind_env(rep);
  f_rep.bind_model(rep);
  f_rep.bind_loss(rep);
  f_rep.bind_eval(rep);
  rep->add_option("target", target, "table1 or figure2")
      ->required()
      ->check(CLI::IsMember({"table1", "figure2"}));
  rep->add_option("--seeds", seeds, "seeds per cell (default: 5 for table1, 4 for figure2)");
  rep->add_option("--jobs", jobs, "cells to run in parallel");
  rep->add_option("--run-id", run_id_flag, "run directory name under the output root");

  CLI11_PARSE(app, argc, argv);

  try {
    const RawFlags& f = gen->parsed()     ? f_gen
                        : train->parsed() ? f_train
                        : eval->parsed()  ? f_eval
                        : att->parsed()   ? f_att
                                          : f_rep;
    ExperimentConfig cfg = base_config(config_path, checkpoint);
    const FlagOverrides o = f.overrides();
    if (rep->parsed() && target == "figure2" && !o.env) cfg.env.name = "blocks";
    apply_profile(cfg, o.env ? *o.env : cfg.env.name, profile);
    apply_overrides(cfg, o);

    if (gen->parsed()) {
      const GenDataResult r =
          cmd_gen_data(cfg, eval_role ? DataRole::kEval : DataRole::kTrain, force);
      std::printf("wrote %s (%lld records, hash %s)\n", r.path.c_str(),
                  static_cast<long long>(r.records), hex64(r.hash).c_str());
    } else if (train->parsed()) {
      const TrainOutputs r = cmd_train(cfg, run_dir_for(cfg, run_id_flag), data_path);
      std::printf("run dir   %s\n", r.run_dir.c_str());
      std::printf("checkpoint %s (hash %s)\n", r.checkpoint_path.c_str(),
                  hex64(r.checkpoint_hash).c_str());
      if (!r.result.curve.empty())
        std::printf("final loss %.9g after %lld epochs (%.1fs)\n", r.result.curve.back().loss,
                    static_cast<long long>(r.result.curve.size()),
                    r.result.curve.back().seconds);
    } else if (eval->parsed()) {
      const EvalOutputs r =
          cmd_eval(cfg, checkpoint, metric_req, run_dir_for(cfg, run_id_flag), data_path);
      std::printf("%s\n", r.metrics.dump(2).c_str());
      std::fprintf(stderr, "metrics written to %s\n", r.metrics_path.c_str());
    } else if (att->parsed()) {
      const AttentionOutputs r =
          cmd_attention_report(cfg, checkpoint, demos, run_dir_for(cfg, run_id_flag));
      std::printf("report    %s (%lld rows)\n", r.table_path.c_str(),
                  static_cast<long long>(r.rows));
      std::printf("pick argmax accuracy %.4f over %lld pick steps\n", r.pick_accuracy,
                  static_cast<long long>(r.pick_steps));
    } else if (rep->parsed()) {
      const ReproduceOutputs r =
          cmd_reproduce(target, cfg, run_dir_for(cfg, run_id_flag), seeds, jobs);
      std::printf("table     %s\n", r.table_path.c_str());
      std::printf("cells     %lld ok, %lld failed\n",
                  static_cast<long long>(r.cells - r.failed),
                  static_cast<long long>(r.failed));
      if (r.failed > 0) return 1;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
