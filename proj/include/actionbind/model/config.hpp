#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "actionbind/core/tensor.hpp"
#include "actionbind/io/dataset.hpp"

namespace actionbind {

enum class ModelKind : uint8_t { kCswm, kFwm };
enum class AttentionMode : uint8_t { kNone, kSoft, kHard };

inline std::string to_string(ModelKind k) { return k == ModelKind::kCswm ? "cswm" : "fwm"; }

inline ModelKind model_kind_from_string(const std::string& s) {
  if (s == "cswm") return ModelKind::kCswm;
  if (s == "fwm") return ModelKind::kFwm;
  throw std::invalid_argument("unknown model kind: " + s + " (expected cswm or fwm)");
}

inline std::string to_string(AttentionMode m) {
  switch (m) {
    case AttentionMode::kNone: return "none";
    case AttentionMode::kSoft: return "soft";
    case AttentionMode::kHard: return "hard";
  }
  return "?";
}

inline AttentionMode attention_mode_from_string(const std::string& s) {
  if (s == "none") return AttentionMode::kNone;
  if (s == "soft") return AttentionMode::kSoft;
  if (s == "hard") return AttentionMode::kHard;
  throw std::invalid_argument("unknown attention mode: " + s +
                              " (expected none, soft or hard)");
}

constexpr int64_t kMaskHw = 10;  // object-mask side length after the conv stack

struct ModelConfig {
  ModelKind kind = ModelKind::kCswm;
  AttentionMode attention = AttentionMode::kNone;
  int64_t slots = 5;
  int64_t slot_dim = 2;
  int64_t hidden = 128;
  int64_t layers = 1;  // transition GNN depth; cswm is single-layer by definition
  int64_t att_dim = 64;
  int64_t action_dim = 29;
  ObsKind obs_kind = ObsKind::kImageU8;
  Shape obs_shape = {3, 50, 50};

  void validate() const {
    if (slots < 2) throw std::invalid_argument("model config: need at least 2 slots");
    if (slot_dim < 1 || hidden < 1 || att_dim < 1 || action_dim < 1)
      throw std::invalid_argument("model config: dimensions must be positive");
    if (layers < 1) throw std::invalid_argument("model config: need at least 1 layer");
    if (kind == ModelKind::kCswm && layers != 1)
      throw std::invalid_argument("model config: cswm has exactly 1 transition layer");
    if (obs_kind == ObsKind::kImageU8) {
      if (kind != ModelKind::kCswm)
        throw std::invalid_argument("model config: image observations need the cswm encoder");
      if (obs_shape.size() != 3 || obs_shape[1] != obs_shape[2])
        throw std::invalid_argument("model config: image obs_shape must be [C,S,S]");
      if (obs_shape[1] % kMaskHw != 0)
        throw std::invalid_argument("model config: image side must be a multiple of " +
                                    std::to_string(kMaskHw));
    } else {
      if (kind != ModelKind::kFwm)
        throw std::invalid_argument("model config: factored observations need the fwm encoder");
      if (obs_shape.size() != 2)
        throw std::invalid_argument("model config: factored obs_shape must be [K,F]");
      if (obs_shape[0] != slots)
        throw std::invalid_argument("model config: factored obs_shape[0] must equal slots");
    }
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"kind", to_string(c.kind)},
                     {"attention", to_string(c.attention)},
                     {"slots", c.slots},
                     {"slot_dim", c.slot_dim},
                     {"hidden", c.hidden},
                     {"layers", c.layers},
                     {"att_dim", c.att_dim},
                     {"action_dim", c.action_dim},
                     {"obs_kind", c.obs_kind == ObsKind::kImageU8 ? "u8" : "f32"},
                     {"obs_shape", c.obs_shape}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.kind = model_kind_from_string(j.at("kind").get<std::string>());
  c.attention = attention_mode_from_string(j.at("attention").get<std::string>());
  c.slots = j.at("slots").get<int64_t>();
  c.slot_dim = j.at("slot_dim").get<int64_t>();
  c.hidden = j.at("hidden").get<int64_t>();
  c.layers = j.at("layers").get<int64_t>();
  c.att_dim = j.at("att_dim").get<int64_t>();
  c.action_dim = j.at("action_dim").get<int64_t>();
  c.obs_kind = j.at("obs_kind").get<std::string>() == "u8" ? ObsKind::kImageU8
                                                           : ObsKind::kFactoredF32;
  c.obs_shape = j.at("obs_shape").get<Shape>();
  c.validate();
}

}  // namespace actionbind
