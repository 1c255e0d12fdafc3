#pragma once

// Experiment configuration: defaults, JSON round-trip with strict key
// checking, profile presets, flag overrides and the resolution step that
// turns "auto" fields into concrete values.
//
// Precedence, lowest to highest: built-in defaults, config file, profile
// preset, individual flags.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <initializer_list>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "actionbind/core/hash.hpp"
#include "actionbind/env/blocks.hpp"
#include "actionbind/env/grid.hpp"
#include "actionbind/model/config.hpp"

namespace actionbind {

constexpr const char* kToolVersion = "0.1.0";

// Held-out evaluation data reuses the train seed at a fixed offset so the
// pair is reproducible from one number.
constexpr uint64_t kEvalSeedOffset = 1000003;

namespace cli_detail {
constexpr uint64_t kParamStream = 0x70617261ull;  // "para"
constexpr uint64_t kTrainStream = 0x7472616eull;  // "tran"
constexpr uint64_t kProbeStream = 0x70726f62ull;  // "prob"
constexpr uint64_t kRankStream = 0x72616e6bull;   // "rank"
constexpr uint64_t kDemoStream = 0x64656d6full;   // "demo"
constexpr uint64_t kNoiseStream = 0x6e6f6973ull;  // "nois"
}  // namespace cli_detail

struct EnvSection {
  std::string name = "shapes2d";  // shapes2d | cubes3d | controlled | blocks
  std::string task = "tower4";    // blocks only
  int64_t episodes = 0;           // 0 = auto (grids 500, blocks 200 demos)
  int64_t episode_len = 0;        // 0 = auto (grids 10; blocks fix it per task)
  int64_t eval_episodes = 0;      // 0 = auto (grids 200, blocks 20)
  uint64_t seed = 1;
};

struct ModelSection {
  std::string family = "auto";  // cswm | fwm | auto (cswm on grids, fwm on blocks)
  std::string mode = "none";    // none | soft | hard
  int64_t slots = 0;            // 0 = auto (5 on grids, one per block)
  int64_t slot_dim = 0;         // 0 = auto (2 on grids, 32 on blocks)
  int64_t layers = 1;
  int64_t hidden = 128;
  int64_t att_dim = 64;
};

struct LossSection {
  double gamma = 1.0;
  double lr = 5e-4;
  int64_t batch = 256;
  int64_t epochs = 0;  // 0 = auto (grids 100, blocks 200)
};

struct EvalSection {
  std::vector<int64_t> horizons = {1, 5, 10};
  std::string negatives = "other-episodes";  // the only implemented policy
  int64_t ranking_trials = 20;               // per transfer task
};

struct ExperimentConfig {
  EnvSection env;
  ModelSection model;
  LossSection loss;
  EvalSection eval;
  std::string out;  // "" = auto (ACTIONBIND_OUT env var, else "runs")
};

inline bool is_blocks_env(const std::string& name) { return name == "blocks"; }

inline std::string default_out_root() {
  const char* e = std::getenv("ACTIONBIND_OUT");
  return e && *e ? std::string(e) : std::string("runs");
}

// ---------------------------------------------------------------------------
// JSON round-trip
// ---------------------------------------------------------------------------

namespace cli_detail {

inline void reject_unknown_keys(const nlohmann::json& j, const char* section,
                                std::initializer_list<const char*> allowed) {
  if (!j.is_object())
    throw std::invalid_argument(std::string("config: ") + section + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        known = true;
        break;
      }
    if (!known)
      throw std::invalid_argument("config: unknown key \"" + it.key() + "\" in " + section);
  }
}

template <typename T>
void fetch(const nlohmann::json& j, const char* section, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("config: bad value for ") + section + "." + key +
                                ": " + e.what());
  }
}

}  // namespace cli_detail

inline nlohmann::json experiment_to_json(const ExperimentConfig& c) {
  return nlohmann::json{
      {"environment",
       {{"name", c.env.name},
        {"task", c.env.task},
        {"episodes", c.env.episodes},
        {"episode_len", c.env.episode_len},
        {"eval_episodes", c.env.eval_episodes},
        {"seed", c.env.seed}}},
      {"model",
       {{"family", c.model.family},
        {"mode", c.model.mode},
        {"slots", c.model.slots},
        {"slot_dim", c.model.slot_dim},
        {"layers", c.model.layers},
        {"hidden", c.model.hidden},
        {"att_dim", c.model.att_dim}}},
      {"loss",
       {{"gamma", c.loss.gamma},
        {"lr", c.loss.lr},
        {"batch", c.loss.batch},
        {"epochs", c.loss.epochs}}},
      {"eval",
       {{"horizons", c.eval.horizons},
        {"negatives", c.eval.negatives},
        {"ranking_trials", c.eval.ranking_trials}}},
      {"out", c.out}};
}

inline ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  using cli_detail::fetch;
  using cli_detail::reject_unknown_keys;
  reject_unknown_keys(j, "the top level", {"environment", "model", "loss", "eval", "out"});
  ExperimentConfig c;
  if (j.contains("environment")) {
    const auto& e = j.at("environment");
    reject_unknown_keys(e, "environment",
                        {"name", "task", "episodes", "episode_len", "eval_episodes", "seed"});
    fetch(e, "environment", "name", c.env.name);
    fetch(e, "environment", "task", c.env.task);
    fetch(e, "environment", "episodes", c.env.episodes);
    fetch(e, "environment", "episode_len", c.env.episode_len);
    fetch(e, "environment", "eval_episodes", c.env.eval_episodes);
    fetch(e, "environment", "seed", c.env.seed);
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    reject_unknown_keys(m, "model",
                        {"family", "mode", "slots", "slot_dim", "layers", "hidden", "att_dim"});
    fetch(m, "model", "family", c.model.family);
    fetch(m, "model", "mode", c.model.mode);
    fetch(m, "model", "slots", c.model.slots);
    fetch(m, "model", "slot_dim", c.model.slot_dim);
    fetch(m, "model", "layers", c.model.layers);
    fetch(m, "model", "hidden", c.model.hidden);
    fetch(m, "model", "att_dim", c.model.att_dim);
  }
  if (j.contains("loss")) {
    const auto& l = j.at("loss");
    reject_unknown_keys(l, "loss", {"gamma", "lr", "batch", "epochs"});
    fetch(l, "loss", "gamma", c.loss.gamma);
    fetch(l, "loss", "lr", c.loss.lr);
    fetch(l, "loss", "batch", c.loss.batch);
    fetch(l, "loss", "epochs", c.loss.epochs);
  }
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    reject_unknown_keys(e, "eval", {"horizons", "negatives", "ranking_trials"});
    fetch(e, "eval", "horizons", c.eval.horizons);
    fetch(e, "eval", "negatives", c.eval.negatives);
    fetch(e, "eval", "ranking_trials", c.eval.ranking_trials);
  }
  fetch(j, "the top level", "out", c.out);
  return c;
}

// ---------------------------------------------------------------------------
// Profiles and flag overrides
// ---------------------------------------------------------------------------

struct FlagOverrides {
  std::optional<std::string> env, task, family, mode, negatives, out;
  std::optional<int64_t> episodes, episode_len, eval_episodes;
  std::optional<uint64_t> seed;
  std::optional<int64_t> slots, slot_dim, layers, hidden, att_dim;
  std::optional<double> gamma, lr;
  std::optional<int64_t> batch, epochs, ranking_trials;
  std::optional<std::vector<int64_t>> horizons;
};

// `env_name` is the effective environment (a flag may override the config
// file), needed because the smoke sizes differ per environment kind.
inline void apply_profile(ExperimentConfig& c, const std::string& env_name,
                          const std::string& profile) {
  if (profile == "full" || profile.empty()) return;
  if (profile != "smoke")
    throw std::invalid_argument("unknown profile: " + profile + " (expected smoke or full)");
  if (is_blocks_env(env_name)) {
    c.env.episodes = 20;
    c.env.eval_episodes = 5;
    c.loss.epochs = 10;
  } else {
    c.env.episodes = 50;
    c.env.episode_len = 10;
    c.env.eval_episodes = 20;
    c.loss.epochs = 5;
  }
  c.eval.horizons = {1, 5};
  c.eval.ranking_trials = 3;
}

inline void apply_overrides(ExperimentConfig& c, const FlagOverrides& o) {
  if (o.env) c.env.name = *o.env;
  if (o.task) c.env.task = *o.task;
  if (o.episodes) c.env.episodes = *o.episodes;
  if (o.episode_len) c.env.episode_len = *o.episode_len;
  if (o.eval_episodes) c.env.eval_episodes = *o.eval_episodes;
  if (o.seed) c.env.seed = *o.seed;
  if (o.family) c.model.family = *o.family;
  if (o.mode) c.model.mode = *o.mode;
  if (o.slots) c.model.slots = *o.slots;
  if (o.slot_dim) c.model.slot_dim = *o.slot_dim;
  if (o.layers) c.model.layers = *o.layers;
  if (o.hidden) c.model.hidden = *o.hidden;
  if (o.att_dim) c.model.att_dim = *o.att_dim;
  if (o.gamma) c.loss.gamma = *o.gamma;
  if (o.lr) c.loss.lr = *o.lr;
  if (o.batch) c.loss.batch = *o.batch;
  if (o.epochs) c.loss.epochs = *o.epochs;
  if (o.horizons) c.eval.horizons = *o.horizons;
  if (o.negatives) c.eval.negatives = *o.negatives;
  if (o.ranking_trials) c.eval.ranking_trials = *o.ranking_trials;
  if (o.out) c.out = *o.out;
}

// ---------------------------------------------------------------------------
// Resolution
// ---------------------------------------------------------------------------

// Replaces every "auto" with its concrete value and validates the result.
// Idempotent; the resolved form is what run directories record.
inline ExperimentConfig resolve(ExperimentConfig c) {
  const bool blocks = is_blocks_env(c.env.name);
  if (!blocks && c.env.name != "shapes2d" && c.env.name != "cubes3d" &&
      c.env.name != "controlled")
    throw std::invalid_argument("config: unknown environment \"" + c.env.name +
                                "\" (expected shapes2d, cubes3d, controlled or blocks)");
  if (blocks) {
    block_task_from_string(c.env.task);
    if (c.env.episode_len != 0)
      throw std::invalid_argument(
          "config: environment.episode_len is fixed by the block task plan; leave it at 0");
  } else {
    c.env.task.clear();
  }

  if (c.env.episodes == 0) c.env.episodes = blocks ? 200 : 500;
  if (!blocks && c.env.episode_len == 0) c.env.episode_len = 10;
  if (c.env.eval_episodes == 0) c.env.eval_episodes = blocks ? 20 : 200;
  if (c.env.episodes < 1) throw std::invalid_argument("config: episodes must be positive");
  if (!blocks && c.env.episode_len < 1)
    throw std::invalid_argument("config: episode_len must be positive");
  if (c.env.eval_episodes < 2)
    throw std::invalid_argument("config: eval_episodes must be at least 2 (ranking negatives)");

  if (c.model.family == "auto") c.model.family = blocks ? "fwm" : "cswm";
  const ModelKind kind = model_kind_from_string(c.model.family);
  attention_mode_from_string(c.model.mode);
  if (blocks && kind == ModelKind::kCswm)
    throw std::invalid_argument(
        "config: cswm reads image observations; block data is factored, use model.family=fwm");
  if (!blocks && kind == ModelKind::kFwm)
    throw std::invalid_argument(
        "config: fwm reads factored observations; grid data is images, use model.family=cswm");
  if (kind == ModelKind::kCswm && c.model.layers != 1)
    throw std::invalid_argument("config: cswm has exactly 1 transition layer");
  if (c.model.layers < 1) throw std::invalid_argument("config: layers must be positive");
  if (c.model.slots == 0) c.model.slots = blocks ? kBlocks : 5;
  if (c.model.slot_dim == 0) c.model.slot_dim = blocks ? 32 : 2;
  if (blocks && c.model.slots != kBlocks)
    throw std::invalid_argument("config: block models need one slot per block (" +
                                std::to_string(kBlocks) + ")");
  if (c.model.slots < 2 || c.model.slot_dim < 1 || c.model.hidden < 1 || c.model.att_dim < 1)
    throw std::invalid_argument("config: model dimensions must be positive (slots at least 2)");

  if (c.loss.epochs == 0) c.loss.epochs = blocks ? 200 : 100;
  if (c.loss.epochs < 1) throw std::invalid_argument("config: epochs must be positive");
  if (c.loss.batch < 2) throw std::invalid_argument("config: batch must be at least 2");
  if (c.loss.lr <= 0 || c.loss.gamma < 0)
    throw std::invalid_argument("config: lr must be positive and gamma non-negative");

  if (c.eval.horizons.empty()) throw std::invalid_argument("config: eval.horizons is empty");
  for (int64_t h : c.eval.horizons)
    if (h < 0) throw std::invalid_argument("config: eval horizons must be non-negative");
  if (c.eval.negatives != "other-episodes")
    throw std::invalid_argument("config: unsupported negative policy \"" + c.eval.negatives +
                                "\" (only other-episodes is implemented)");
  if (c.eval.ranking_trials < 1)
    throw std::invalid_argument("config: ranking_trials must be positive");

  if (c.out.empty()) c.out = default_out_root();
  return c;
}

// ---------------------------------------------------------------------------
// Canonical paths and run ids
// ---------------------------------------------------------------------------

enum class DataRole { kTrain, kEval };

inline int64_t dataset_episodes(const ExperimentConfig& c, DataRole role) {
  return role == DataRole::kTrain ? c.env.episodes : c.env.eval_episodes;
}

inline uint64_t dataset_seed(const ExperimentConfig& c, DataRole role) {
  return role == DataRole::kTrain ? c.env.seed : c.env.seed + kEvalSeedOffset;
}

inline std::string dataset_path(const ExperimentConfig& c, DataRole role) {
  char buf[256];
  if (is_blocks_env(c.env.name))
    std::snprintf(buf, sizeof buf, "blocks-%s-d%lld-s%llu.swmd", c.env.task.c_str(),
                  static_cast<long long>(dataset_episodes(c, role)),
                  static_cast<unsigned long long>(dataset_seed(c, role)));
  else
    std::snprintf(buf, sizeof buf, "%s-e%lld-l%lld-s%llu.swmd", c.env.name.c_str(),
                  static_cast<long long>(dataset_episodes(c, role)),
                  static_cast<long long>(c.env.episode_len),
                  static_cast<unsigned long long>(dataset_seed(c, role)));
  return (std::filesystem::path(c.out) / "datasets" / buf).string();
}

// The exact command that generates the dataset `role` refers to; quoted in
// missing-dataset errors.
inline std::string gen_data_command(const ExperimentConfig& c, DataRole role) {
  std::string cmd = "actionbind gen-data --env " + c.env.name;
  if (is_blocks_env(c.env.name))
    cmd += " --task " + c.env.task + " --demos " + std::to_string(dataset_episodes(c, role));
  else
    cmd += " --episodes " + std::to_string(dataset_episodes(c, role)) + " --len " +
           std::to_string(c.env.episode_len);
  cmd += " --seed " + std::to_string(dataset_seed(c, role)) + " --out " + c.out;
  return cmd;
}

inline std::string run_id(const ExperimentConfig& c, const std::string& command) {
  std::string id = command + "-" + c.env.name;
  if (is_blocks_env(c.env.name)) id += "-" + c.env.task;
  id += "-" + c.model.family + "-" + c.model.mode + "-L" + std::to_string(c.model.layers) +
        "-s" + std::to_string(c.env.seed);
  return id;
}

// ---------------------------------------------------------------------------
// Small file utilities
// ---------------------------------------------------------------------------

inline std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline uint64_t file_fnv1a(const std::string& path) {
  std::unique_ptr<std::FILE, detail::FileCloser> f(std::fopen(path.c_str(), "rb"));
  if (!f) throw std::runtime_error("cannot open " + path);
  uint64_t h = 0xcbf29ce484222325ull;
  std::vector<unsigned char> buf(1 << 20);
  size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), f.get())) > 0) h = fnv1a64(buf.data(), n, h);
  if (std::ferror(f.get())) throw std::runtime_error("read error in " + path);
  return h;
}

inline void write_file_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::unique_ptr<std::FILE, detail::FileCloser> f(std::fopen(tmp.c_str(), "wb"));
    if (!f) throw std::runtime_error("cannot open " + tmp + " for writing");
    detail::write_exact(f.get(), content.data(), content.size(), tmp);
    if (std::fflush(f.get()) != 0) throw std::runtime_error("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::string& path) {
  std::unique_ptr<std::FILE, detail::FileCloser> f(std::fopen(path.c_str(), "rb"));
  if (!f) throw std::runtime_error("cannot open " + path);
  std::string out;
  char buf[1 << 16];
  size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, f.get())) > 0) out.append(buf, n);
  if (std::ferror(f.get())) throw std::runtime_error("read error in " + path);
  return out;
}

inline std::string fmt_g9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace actionbind
